"""
Open and closed workload generators.

A workload asks a planner for each request in order, on the generator's own
thread, so the sequence of planned requests depends only on the planner's seed
and never on how completions interleave. Only the calls themselves run
concurrently.
"""

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, List, Optional

from django.conf import settings

from core.clock import now_us
from core.exceptions import BadRequestError, EnokiError
from .metrics import MetricSample, SampleRecorder

logger = logging.getLogger(__name__)


@dataclass
class PlannedRequest:
    """
    One request chosen by a planner.

    With ``record=False`` the call records its own samples (a request that
    fans out into several measured operations).
    """

    op: str
    call: Callable[[], Any]
    size_bytes: int = 0
    record: bool = True


Planner = Callable[[int], PlannedRequest]


def timed(recorder: SampleRecorder, op: str, call: Callable[[], Any], size_bytes: int = 0,
          staleness: Callable[[Any, int, int], Optional[int]] = None) -> Any:
    """
    Run ``call`` and record one sample; a failed call is an ok=false sample.

    Returns:
        The call's result, or None when it failed
    """
    start = now_us()
    try:
        result = call()
    except EnokiError as e:
        recorder.record(op, start, now_us(), ok=False, size_bytes=size_bytes)
        logger.debug(f"{recorder.scenario}/{recorder.variant} {op} failed: {e}")
        return None
    except Exception:
        recorder.record(op, start, now_us(), ok=False, size_bytes=size_bytes)
        logger.exception(f"{recorder.scenario}/{recorder.variant} {op} crashed")
        return None
    end = now_us()
    recorder.record(op, start, end, ok=True, size_bytes=size_bytes,
                    staleness_us=staleness(result, start, end) if staleness else None)
    return result


def _execute(recorder: SampleRecorder, request: PlannedRequest):
    if request.record:
        timed(recorder, request.op, request.call, request.size_bytes)
        return
    try:
        request.call()
    except Exception:
        logger.exception(f"{recorder.scenario}/{recorder.variant} {request.op} crashed")


def schedule_size(rate_per_s: float, duration_s: float) -> int:
    if rate_per_s <= 0:
        raise BadRequestError(f"rate must be positive, got {rate_per_s}")
    if duration_s <= 0:
        raise BadRequestError(f"duration must be positive, got {duration_s}")
    return round(rate_per_s * duration_s)


def run_open_workload(plan: Planner, rate_per_s: float, duration_s: float,
                      recorder: SampleRecorder) -> List[MetricSample]:
    """
    Fire requests on a fixed schedule, independent of completions.

    Request ``i`` is due ``i / rate_per_s`` seconds after the start; the
    generator waits for every in-flight request before returning, so late
    completions are still recorded.

    Returns:
        The samples recorded by this run
    """
    total = schedule_size(rate_per_s, duration_s)
    first = len(recorder.samples)
    interval = 1.0 / rate_per_s
    worst_lateness = 0.0

    with ThreadPoolExecutor(max_workers=settings.ENOKI_BENCH_MAX_IN_FLIGHT,
                            thread_name_prefix=f'open-{recorder.scenario}') as executor:
        start = time.monotonic()
        for index in range(total):
            request = plan(index)
            due = start + index * interval
            delay = due - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            else:
                worst_lateness = max(worst_lateness, -delay)
            executor.submit(_execute, recorder, request)

    if worst_lateness > 0.005:
        logger.warning(f"{recorder.scenario}/{recorder.variant} open workload fell behind by up to "
                       f"{worst_lateness * 1000:.1f} ms")
    logger.info(f"{recorder.scenario}/{recorder.variant} open workload issued {total} requests "
                f"at {rate_per_s}/s")
    return recorder.samples[first:]


def run_closed_workload(plan: Planner, threads: int, duration_s: float,
                        recorder: SampleRecorder) -> List[MetricSample]:
    """
    Keep ``threads`` workers busy with zero think time until the duration ends.

    A request in flight when time runs out completes and is recorded.

    Returns:
        The samples recorded by this run
    """
    if threads < 1:
        raise BadRequestError(f"closed workload needs at least one thread, got {threads}")
    if duration_s <= 0:
        raise BadRequestError(f"duration must be positive, got {duration_s}")
    first = len(recorder.samples)
    deadline = time.monotonic() + duration_s
    lock = threading.Lock()
    issued = [0]

    def next_request() -> Optional[PlannedRequest]:
        with lock:
            if time.monotonic() >= deadline:
                return None
            index = issued[0]
            issued[0] += 1
            return plan(index)

    def worker():
        while True:
            request = next_request()
            if request is None:
                return
            _execute(recorder, request)

    workers = [threading.Thread(target=worker, name=f'closed-{recorder.scenario}-{i}') for i in range(threads)]
    for thread in workers:
        thread.start()
    for thread in workers:
        thread.join()

    logger.info(f"{recorder.scenario}/{recorder.variant} closed workload issued {issued[0]} requests "
                f"with {threads} threads")
    return recorder.samples[first:]

"""
Benchmark samples, nearest-rank percentiles and the CSV reports.
"""

import csv
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from core.exceptions import BadRequestError

SAMPLE_COLUMNS = (
    'scenario', 'variant', 'op', 'start_us', 'end_us', 'latency_us', 'ok', 'size_bytes', 'staleness_us',
)
SUMMARY_COLUMNS = (
    'scenario', 'variant', 'op', 'count', 'errors', 'p50_us', 'p90_us', 'p99_us', 'ops_per_s', 'mb_per_s',
    'stale_reads', 'staleness_p50_us', 'staleness_p99_us', 'staleness_max_us',
    'observed_staleness_p50_us', 'observed_staleness_p99_us', 'observed_staleness_max_us',
)


@dataclass
class MetricSample:
    scenario: str
    variant: str
    op: str
    start_us: int
    end_us: int
    ok: bool = True
    size_bytes: int = 0
    staleness_us: Optional[int] = None

    def __post_init__(self):
        if self.end_us < self.start_us:
            raise BadRequestError(f"sample ends before it starts ({self.end_us} < {self.start_us})")

    @property
    def latency_us(self) -> int:
        return self.end_us - self.start_us

    def as_row(self) -> Tuple:
        return (
            self.scenario, self.variant, self.op, self.start_us, self.end_us, self.latency_us,
            'true' if self.ok else 'false', self.size_bytes,
            '' if self.staleness_us is None else self.staleness_us,
        )


class SampleRecorder:
    """Thread-safe sample sink shared by the workers of one run."""

    def __init__(self, scenario: str, variant: str):
        self.scenario = scenario
        self.variant = variant
        self.samples: List[MetricSample] = []
        self._lock = threading.Lock()

    def record(self, op: str, start_us: int, end_us: int, ok: bool = True, size_bytes: int = 0,
               staleness_us: Optional[int] = None) -> MetricSample:
        sample = MetricSample(self.scenario, self.variant, op, start_us, end_us, ok, size_bytes, staleness_us)
        with self._lock:
            self.samples.append(sample)
        return sample


def percentile(samples: Sequence[float], p: float) -> float:
    """
    Nearest-rank percentile.

    Args:
        samples: Values in any order
        p: Percentile in (0, 100]

    Returns:
        The smallest value with at least p percent of the samples at or below it
    """
    if not samples:
        raise BadRequestError("percentile of an empty sample set")
    if not 0 < p <= 100:
        raise BadRequestError(f"percentile must be in (0, 100], got {p}")
    ordered = sorted(samples)
    rank = math.ceil(p / 100 * len(ordered))
    return ordered[max(rank, 1) - 1]


def _percentiles(values: List[int]) -> Tuple:
    if not values:
        return '', '', ''
    return percentile(values, 50), percentile(values, 99), max(values)


@dataclass
class ScenarioReport:
    scenario: str
    variant: str
    op: str
    count: int
    errors: int
    p50_us: Optional[int]
    p90_us: Optional[int]
    p99_us: Optional[int]
    ops_per_s: float
    mb_per_s: float
    staleness_us: List[int] = field(default_factory=list)
    observed_staleness_us: List[int] = field(default_factory=list)

    def as_row(self) -> Tuple:
        latency = ('', '', '') if self.p50_us is None else (self.p50_us, self.p90_us, self.p99_us)
        return (
            self.scenario, self.variant, self.op, self.count, self.errors, *latency,
            round(self.ops_per_s, 3), round(self.mb_per_s, 3), len(self.staleness_us),
            *_percentiles(self.staleness_us), *_percentiles(self.observed_staleness_us),
        )


def summarize(samples: Iterable[MetricSample], observed_staleness: Dict[Tuple[str, str], List[int]] = None
              ) -> List[ScenarioReport]:
    """
    Aggregate samples per (scenario, variant, op).

    Latency percentiles cover successful samples; throughput divides the
    successful operations and bytes by the span from first start to last end.
    """
    groups: Dict[Tuple[str, str, str], List[MetricSample]] = {}
    for sample in samples:
        groups.setdefault((sample.scenario, sample.variant, sample.op), []).append(sample)

    reports = []
    for (scenario, variant, op), group in sorted(groups.items()):
        succeeded = [sample for sample in group if sample.ok]
        latencies = [sample.latency_us for sample in succeeded]
        span_s = (max(s.end_us for s in group) - min(s.start_us for s in group)) / 1_000_000
        reports.append(ScenarioReport(
            scenario=scenario,
            variant=variant,
            op=op,
            count=len(group),
            errors=len(group) - len(succeeded),
            p50_us=percentile(latencies, 50) if latencies else None,
            p90_us=percentile(latencies, 90) if latencies else None,
            p99_us=percentile(latencies, 99) if latencies else None,
            ops_per_s=len(succeeded) / span_s if span_s > 0 else 0.0,
            mb_per_s=sum(s.size_bytes for s in succeeded) / 1_000_000 / span_s if span_s > 0 else 0.0,
            staleness_us=[s.staleness_us for s in group if s.staleness_us is not None],
            observed_staleness_us=list((observed_staleness or {}).get((scenario, variant), []))
            if op == 'probe' else [],
        ))
    return reports


def write_samples(path: Path, samples: Iterable[MetricSample]) -> int:
    rows = 0
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(SAMPLE_COLUMNS)
        for sample in samples:
            writer.writerow(sample.as_row())
            rows += 1
    return rows


def write_summary(path: Path, reports: Iterable[ScenarioReport]):
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(SUMMARY_COLUMNS)
        for report in reports:
            writer.writerow(report.as_row())

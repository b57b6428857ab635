"""
Hybrid per-process clock.

Wall time is sampled once at start-up and a monotonic offset is added on every
read, so timestamps look like wall-clock microseconds yet never go backwards
within a process.
"""

import threading
import time


class HybridClock:

    def __init__(self):
        self._wall_origin_us = time.time_ns() // 1000
        self._mono_origin_ns = time.monotonic_ns()
        self._last = 0
        self._lock = threading.Lock()

    def now_us(self) -> int:
        reading = self._wall_origin_us + (time.monotonic_ns() - self._mono_origin_ns) // 1000
        with self._lock:
            if reading < self._last:
                reading = self._last
            self._last = reading
        return reading


clock = HybridClock()


def now_us() -> int:
    """Current timestamp in microseconds from the process clock."""
    return clock.now_us()

"""
Staleness probes.

One client writes an increasing sequence number through one replica and reads
it back, raw, through another. A read that returns sequence ``s`` is stale when
write ``s + 1`` had already been acknowledged; its staleness is the time since
that acknowledgement. All timestamps come from the probing client's clock.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from core.exceptions import BadRequestError


@dataclass
class ProbeRead:
    read_ts: int
    observed_seq: int
    completed_ts: Optional[int] = None


@dataclass
class StalenessProbeLog:
    writes: Dict[int, int] = field(default_factory=dict)
    reads: List[ProbeRead] = field(default_factory=list)

    @property
    def last_seq(self) -> int:
        return max(self.writes) if self.writes else 0


def record_probe_write(log: StalenessProbeLog, seq: int, ts: int):
    """Record the acknowledgement time of write ``seq``."""
    if seq <= log.last_seq:
        raise BadRequestError(f"probe sequence {seq} does not increase (last {log.last_seq})")
    if log.writes and ts < log.writes[log.last_seq]:
        raise BadRequestError(f"probe write {seq} is timestamped before write {log.last_seq}")
    log.writes[seq] = ts


def record_probe_read(log: StalenessProbeLog, read_ts: int, observed_seq: int, completed_ts: int = None):
    """Record a raw read issued at ``read_ts``; sequence 0 means nothing was written yet."""
    log.reads.append(ProbeRead(read_ts=read_ts, observed_seq=observed_seq, completed_ts=completed_ts))


def compute_staleness(log: StalenessProbeLog, observed: bool = False) -> List[int]:
    """
    Staleness in microseconds of every stale read, in read order.

    Args:
        log: Probe writes and reads
        observed: Measure up to read completion instead of read issue,
            the delay a client actually notices

    Returns:
        One duration per stale read; fresh reads contribute nothing
    """
    durations = []
    for read in log.reads:
        if read.observed_seq and read.observed_seq not in log.writes:
            raise BadRequestError(f"read observed unknown probe sequence {read.observed_seq}")
        superseding = log.writes.get(read.observed_seq + 1)
        if superseding is None:
            continue
        reference = read.read_ts
        if observed:
            if read.completed_ts is None:
                raise BadRequestError("client-observed staleness needs read completion times")
            reference = read.completed_ts
        if superseding <= reference:
            durations.append(reference - superseding)
    return durations


def encode_probe(seq: int, ts: int) -> bytes:
    return f"{seq}|{ts}".encode('ascii')


def decode_probe(value: bytes) -> Tuple[int, int]:
    try:
        seq, ts = value.decode('ascii').split('|')
        return int(seq), int(ts)
    except (UnicodeDecodeError, ValueError):
        raise BadRequestError(f"malformed probe value: {value[:32]!r}")

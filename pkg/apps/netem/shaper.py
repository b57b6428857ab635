"""
Sender-side link shaping.

Every outbound frame gets a delivery time: when the direction's token bucket lets
it start, plus its serialization time at the link rate, plus half the round trip.
Delivery times never decrease within one direction, which keeps frames FIFO.
"""

import logging
import threading
import time
from typing import Dict, Optional

from django.conf import settings

from .topology import LinkProfile, Topology

logger = logging.getLogger(__name__)


def delivery_delay(link: LinkProfile, message_size_bytes: int) -> float:
    """Modeled one-way delay in seconds for a frame on an idle link."""
    delay = link.one_way_s
    if not link.unlimited:
        delay += message_size_bytes * 8 / link.bandwidth_bits_per_s
    return delay


class TokenBucket:
    """
    Byte bucket refilled at the link rate.

    The balance may go negative: a frame larger than the bucket leaves at once
    on an idle link and later frames wait until the debt is repaid.
    """

    def __init__(self, capacity_bytes: int, rate_bytes_per_s: float, now: float = None):
        self.capacity = capacity_bytes
        self.rate = rate_bytes_per_s
        self.tokens = float(capacity_bytes)
        self.updated = time.monotonic() if now is None else now

    def reserve(self, size: int, now: float) -> float:
        """Take ``size`` bytes and return the instant transmission may start."""
        elapsed = max(0.0, now - self.updated)
        self.tokens = min(float(self.capacity), self.tokens + elapsed * self.rate)
        self.updated = now
        start = now
        if self.tokens < 0:
            start = now + (-self.tokens) / self.rate
        self.tokens -= size
        return start


class DirectionShaper:
    """Shaping state for one (sender, receiver) direction."""

    def __init__(self, link: LinkProfile, bucket_bytes: int):
        self.link = link
        self.bucket = None if link.unlimited else TokenBucket(bucket_bytes, link.bytes_per_s)
        self._last_delivery = 0.0
        self._lock = threading.Lock()

    def schedule(self, size: int, now: float = None) -> float:
        """Monotonic-clock instant at which a frame of ``size`` bytes arrives."""
        with self._lock:
            now = time.monotonic() if now is None else now
            start = self.bucket.reserve(size, now) if self.bucket else now
            deliver_at = start + delivery_delay(self.link, size)
            if deliver_at < self._last_delivery:
                deliver_at = self._last_delivery
            self._last_delivery = deliver_at
            return deliver_at


class Netem:
    """Per-process emulation of every link the process sends on."""

    def __init__(self, topology: Optional[Topology], self_id: Optional[str], bucket_bytes: int = None):
        self.topology = topology
        self.self_id = self_id
        self.bucket_bytes = bucket_bytes or settings.ENOKI_NETEM_BUCKET_BYTES
        self._shapers: Dict[Optional[str], DirectionShaper] = {}
        self._lock = threading.Lock()

    @property
    def sender_index(self) -> Optional[int]:
        if self.topology is None or self.self_id is None or not self.topology.has_node(self.self_id):
            return None
        return self.topology.index_of(self.self_id)

    def sender_id(self, index: int) -> Optional[str]:
        """Resolve a frame header's sender index to a node id."""
        if self.topology is None:
            return None
        node = self.topology.node_at(index)
        return node.id if node else None

    def profile_to(self, peer_id: Optional[str]) -> LinkProfile:
        if self.topology is None:
            return LinkProfile()
        src = self.self_id if self.topology.has_node(self.self_id or '') else None
        dst = peer_id if peer_id and self.topology.has_node(peer_id) else None
        return self.topology.profile(src, dst)

    def shaper_to(self, peer_id: Optional[str]) -> DirectionShaper:
        with self._lock:
            shaper = self._shapers.get(peer_id)
            if shaper is None:
                profile = self.profile_to(peer_id)
                shaper = DirectionShaper(profile, self.bucket_bytes)
                self._shapers[peer_id] = shaper
                logger.debug(
                    f"Shaping {self.self_id} -> {peer_id or 'unlisted'}: "
                    f"rtt {profile.rtt_ms} ms, {'unlimited' if profile.unlimited else f'{profile.mbps} Mb/s'}"
                )
            return shaper

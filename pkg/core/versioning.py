"""
Version vectors for per-key causality tracking.

A vector maps node ids to counters >= 1; a node that is absent has counter 0.
Vectors are immutable values and every operation returns a new vector.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Mapping, Tuple

from .exceptions import BadRequestError


class Ordering(str, Enum):
    BEFORE = 'Before'
    AFTER = 'After'
    EQUAL = 'Equal'
    CONCURRENT = 'Concurrent'


@dataclass(frozen=True)
class VersionVector:
    """Immutable version vector; counters are kept sorted by node id."""

    counters: Tuple[Tuple[str, int], ...] = ()

    @classmethod
    def of(cls, entries: Mapping[str, int] = None) -> 'VersionVector':
        """Build a vector from a mapping, dropping zero counters."""
        cleaned = {}
        for node, counter in (entries or {}).items():
            if counter < 0:
                raise BadRequestError(f"negative counter for {node}")
            if counter:
                cleaned[node] = int(counter)
        return cls(tuple(sorted(cleaned.items())))

    def get(self, node: str) -> int:
        for name, counter in self.counters:
            if name == node:
                return counter
        return 0

    def as_dict(self) -> Dict[str, int]:
        return dict(self.counters)

    def nodes(self) -> Iterable[str]:
        return (name for name, _ in self.counters)

    def is_empty(self) -> bool:
        return not self.counters

    def encode(self) -> str:
        """Canonical text form, e.g. ``A:2,B:3``."""
        return ','.join(f"{name}:{counter}" for name, counter in self.counters)

    @classmethod
    def parse(cls, text: str) -> 'VersionVector':
        if not text:
            return cls()
        entries = {}
        for pair in text.split(','):
            name, sep, counter = pair.rpartition(':')
            if not sep or not name:
                raise BadRequestError(f"malformed version vector pair: {pair!r}")
            try:
                entries[name] = int(counter)
            except ValueError:
                raise BadRequestError(f"malformed version vector counter: {pair!r}")
        return cls.of(entries)

    def compare(self, other: 'VersionVector') -> Ordering:
        return vv_compare(self, other)

    def merge(self, other: 'VersionVector') -> 'VersionVector':
        return vv_merge(self, other)

    def increment(self, node: str) -> 'VersionVector':
        return vv_increment(self, node)

    def covers(self, other: 'VersionVector') -> bool:
        """True when this vector is After or Equal to ``other``."""
        return vv_compare(self, other) in (Ordering.AFTER, Ordering.EQUAL)

    def __str__(self):
        return self.encode() or '{}'


EMPTY = VersionVector()


def vv_compare(a: VersionVector, b: VersionVector) -> Ordering:
    """Standard version-vector partial order."""
    a_newer = False
    b_newer = False
    a_map = a.as_dict()
    b_map = b.as_dict()
    for node in a_map.keys() | b_map.keys():
        a_counter = a_map.get(node, 0)
        b_counter = b_map.get(node, 0)
        if a_counter > b_counter:
            a_newer = True
        elif b_counter > a_counter:
            b_newer = True
        if a_newer and b_newer:
            return Ordering.CONCURRENT
    if a_newer:
        return Ordering.AFTER
    if b_newer:
        return Ordering.BEFORE
    return Ordering.EQUAL


def vv_merge(a: VersionVector, b: VersionVector) -> VersionVector:
    """Pointwise maximum."""
    merged = a.as_dict()
    for node, counter in b.counters:
        if counter > merged.get(node, 0):
            merged[node] = counter
    return VersionVector.of(merged)


def vv_increment(v: VersionVector, node: str) -> VersionVector:
    bumped = v.as_dict()
    bumped[node] = bumped.get(node, 0) + 1
    return VersionVector.of(bumped)

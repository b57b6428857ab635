"""
In-memory keygroup storage engine.

Each node holds a set of keygroups; a keygroup is an ordered map from key to
versioned ``Entry``. Read-modify-write on a key is atomic under the keygroup
lock, and scans copy their window under the same lock, so a scan is a
point-in-time view of the keygroup.
"""

import bisect
import logging
import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Set

from core.clock import now_us
from core.exceptions import AlreadyExistsError, BadRequestError, NotFoundError
from core.utils import validate_name
from core.versioning import EMPTY, Ordering, VersionVector, vv_compare, vv_increment, vv_merge

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Entry:
    key: str
    value: bytes
    version: VersionVector
    writer: str
    write_ts: int
    tombstone: bool = False

    def to_wire(self) -> dict:
        return {
            'key': self.key,
            'value': self.value,
            'version': self.version.encode(),
            'writer': self.writer,
            'write_ts': self.write_ts,
            'tombstone': self.tombstone,
        }

    @classmethod
    def from_wire(cls, data: dict) -> 'Entry':
        try:
            return cls(
                key=str(data['key']),
                value=bytes(data.get('value') or b''),
                version=VersionVector.parse(data.get('version', '')),
                writer=str(data['writer']),
                write_ts=int(data['write_ts']),
                tombstone=bool(data.get('tombstone', False)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise BadRequestError(f"malformed entry: {e}")


def _check_key(key):
    if not isinstance(key, str) or not key:
        raise BadRequestError(f"invalid key: {key!r}")


class ApplyResult(str, Enum):
    APPLIED = 'Applied'
    IGNORED = 'Ignored'
    CONFLICT_RESOLVED = 'ConflictResolved'


def _tie_key(entry: Entry):
    return entry.writer, entry.write_ts, entry.tombstone, entry.value, entry.version.encode()


def _visible(siblings: List[Entry]) -> Entry:
    """Greatest-writer sibling, carrying the merge of every sibling's version."""
    if len(siblings) == 1:
        return siblings[0]
    version = EMPTY
    for sibling in siblings:
        version = vv_merge(version, sibling.version)
    return replace(max(siblings, key=_tie_key), version=version)


class Keygroup:
    """
    Named container of versioned entries, iterated in lexicographic key order.

    Per key the keygroup holds every received version that no other received
    version dominates. Reads see the greatest-writer sibling under the merged
    version, so the visible state depends only on the set of updates applied,
    never on their order. A local write supersedes all siblings.
    """

    def __init__(self, name: str, replicas: Set[str] = None):
        self.name = name
        self.replicas: Set[str] = set(replicas or ())
        self._siblings: Dict[str, List[Entry]] = {}
        self._entries: Dict[str, Entry] = {}
        self._keys: List[str] = []
        self._lock = threading.RLock()

    def lookup(self, key: str) -> Optional[Entry]:
        """Current record for the key, tombstones included."""
        with self._lock:
            return self._entries.get(key)

    def _store(self, key: str, siblings: List[Entry]):
        if key not in self._entries:
            bisect.insort(self._keys, key)
        siblings = sorted(siblings, key=_tie_key)
        self._siblings[key] = siblings
        self._entries[key] = _visible(siblings)

    def put(self, node_id: str, key: str, value: bytes, base: VersionVector, tombstone=False) -> Entry:
        with self._lock:
            current = self._entries.get(key)
            merged = vv_merge(base, current.version) if current else base
            entry = Entry(
                key=key,
                value=b'' if tombstone else bytes(value),
                version=vv_increment(merged, node_id),
                writer=node_id,
                write_ts=now_us(),
                tombstone=tombstone,
            )
            self._store(key, [entry])
            return entry

    def delete(self, node_id: str, key: str, base: VersionVector) -> Entry:
        with self._lock:
            current = self._entries.get(key)
            if current is None or current.tombstone:
                raise NotFoundError(f"key {key!r} not found in keygroup {self.name}")
            return self.put(node_id, key, b'', base, tombstone=True)

    def scan(self, start_key: str, count: int) -> List[Entry]:
        with self._lock:
            result = []
            position = bisect.bisect_left(self._keys, start_key)
            while position < len(self._keys) and len(result) < count:
                entry = self._entries[self._keys[position]]
                if not entry.tombstone:
                    result.append(entry)
                position += 1
            return result

    def apply(self, remote: Entry) -> ApplyResult:
        with self._lock:
            siblings = self._siblings.get(remote.key, [])
            remaining = []
            for sibling in siblings:
                ordering = vv_compare(remote.version, sibling.version)
                if ordering in (Ordering.BEFORE, Ordering.EQUAL):
                    return ApplyResult.IGNORED
                if ordering == Ordering.CONCURRENT:
                    remaining.append(sibling)
            self._store(remote.key, remaining + [remote])
            return ApplyResult.CONFLICT_RESOLVED if remaining else ApplyResult.APPLIED

    def siblings(self, key: str) -> List[Entry]:
        with self._lock:
            return list(self._siblings.get(key, ()))

    def snapshot(self) -> List[Entry]:
        """Every stored version, concurrent siblings included, in key order."""
        with self._lock:
            return [sibling for key in self._keys for sibling in self._siblings[key]]

    def __len__(self):
        with self._lock:
            return len(self._keys)


class KeyValueStore:
    """Per-node collection of keygroups."""

    def __init__(self, node_id: str):
        self.node_id = node_id
        self._keygroups: Dict[str, Keygroup] = {}
        self._lock = threading.Lock()

    def create_keygroup(self, name: str) -> Keygroup:
        validate_name(name, 'keygroup name')
        with self._lock:
            if name in self._keygroups:
                raise AlreadyExistsError(f"keygroup {name} already exists")
            keygroup = Keygroup(name, replicas={self.node_id})
            self._keygroups[name] = keygroup
        logger.info(f"Created keygroup {name}")
        return keygroup

    def drop_keygroup(self, name: str):
        """Forget a local keygroup, used when a bootstrap cannot finish."""
        with self._lock:
            self._keygroups.pop(name, None)
        logger.info(f"Dropped local keygroup {name}")

    def has_keygroup(self, name: str) -> bool:
        with self._lock:
            return name in self._keygroups

    def keygroup(self, name: str) -> Keygroup:
        with self._lock:
            keygroup = self._keygroups.get(name)
        if keygroup is None:
            raise NotFoundError(f"keygroup {name} not found")
        return keygroup

    def keygroup_names(self) -> List[str]:
        with self._lock:
            return sorted(self._keygroups)

    def put_local(self, kg: str, key: str, value: bytes, base: VersionVector = EMPTY) -> Entry:
        _check_key(key)
        return self.keygroup(kg).put(self.node_id, key, value, base)

    def get_local(self, kg: str, key: str) -> Entry:
        entry = self.keygroup(kg).lookup(key)
        if entry is None or entry.tombstone:
            raise NotFoundError(f"key {key!r} not found in keygroup {kg}")
        return entry

    def lookup(self, kg: str, key: str) -> Optional[Entry]:
        return self.keygroup(kg).lookup(key)

    def scan_local(self, kg: str, start_key: str, count: int) -> List[Entry]:
        if count < 1:
            raise BadRequestError("scan count must be at least 1")
        return self.keygroup(kg).scan(start_key, count)

    def delete_local(self, kg: str, key: str, base: VersionVector = EMPTY) -> Entry:
        return self.keygroup(kg).delete(self.node_id, key, base)

    def apply_remote(self, kg: str, remote: Entry) -> ApplyResult:
        result = self.keygroup(kg).apply(remote)
        if result == ApplyResult.CONFLICT_RESOLVED:
            logger.debug(f"Resolved concurrent write on {kg}/{remote.key} from {remote.writer}")
        return result

    def snapshot(self, kg: str) -> List[Entry]:
        return self.keygroup(kg).snapshot()

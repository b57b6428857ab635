"""
Client-centric consistency over keygroup replicas.

A ``Session`` remembers, per key, the highest version it has written or read.
Reads are served by the contacted replica only once its entry covers that
version; a replica that is behind is polled until it catches up or the session
timeout passes. The same rules apply whether the replica is the local store or
a remote node reached through ``Session*`` messages.
"""

import logging
import time
import uuid
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from django.conf import settings

from apps.kvstore.store import Entry, KeyValueStore
from apps.netem.rpc import RpcClientPool
from core.exceptions import BadRequestError, NotFoundError, OperationTimeoutError
from core.versioning import EMPTY, VersionVector

logger = logging.getLogger(__name__)

_MISSING = object()


@dataclass
class Session:
    keygroup: str
    id: str = field(default_factory=lambda: uuid.uuid4().hex)
    high_water: Dict[str, VersionVector] = field(default_factory=dict)

    def floor(self, key: str) -> VersionVector:
        return self.high_water.get(key, EMPTY)

    def observe(self, entry: Entry):
        """Merge a version written or read into the key's high-water mark."""
        self.high_water[entry.key] = self.floor(entry.key).merge(entry.version)


def _covers(entry: Optional[Entry], floor: VersionVector) -> bool:
    if floor.is_empty():
        return True
    return entry is not None and entry.version.covers(floor)


class GuardedStore:
    """Replica-side operations that honor a caller's minimum versions."""

    def __init__(self, store: KeyValueStore, replicator=None):
        self.store = store
        self.replicator = replicator

    def _wait(self, check, what: str):
        retry = settings.ENOKI_SESSION_RETRY_MS / 1000.0
        deadline = time.monotonic() + settings.ENOKI_SESSION_TIMEOUT_S
        result = check()
        attempts = 0
        while result is _MISSING:
            if time.monotonic() >= deadline:
                raise OperationTimeoutError(f"replica did not catch up for {what}")
            attempts += 1
            time.sleep(retry)
            result = check()
        if attempts:
            logger.debug(f"Session read of {what} waited {attempts} retries")
        return result

    def get(self, kg: str, key: str, floor: VersionVector = EMPTY) -> Optional[Entry]:
        """Entry (tombstones included) covering ``floor``; None if the key was never written."""
        keygroup = self.store.keygroup(kg)

        def check():
            entry = keygroup.lookup(key)
            return entry if _covers(entry, floor) else _MISSING

        return self._wait(check, f"{kg}/{key}")

    def scan(self, kg: str, start_key: str, count: int,
             floors: Dict[str, VersionVector] = None) -> List[Entry]:
        if count < 1:
            raise BadRequestError("scan count must be at least 1")
        keygroup = self.store.keygroup(kg)
        floors = {key: floor for key, floor in (floors or {}).items() if key >= start_key and not floor.is_empty()}

        def check():
            entries = keygroup.scan(start_key, count)
            for entry in entries:
                if not _covers(entry, floors.get(entry.key, EMPTY)):
                    return _MISSING
            window_end = entries[-1].key if len(entries) == count else None
            for key, floor in floors.items():
                if window_end is not None and key > window_end:
                    continue
                if not _covers(keygroup.lookup(key), floor):
                    return _MISSING
            return entries

        return self._wait(check, f"scan {kg}/{start_key}")

    def put(self, kg: str, key: str, value: bytes, base: VersionVector = EMPTY) -> Entry:
        entry = self.store.put_local(kg, key, value, base)
        if self.replicator is not None:
            self.replicator.propagate(kg, entry)
        return entry

    def delete(self, kg: str, key: str, base: VersionVector = EMPTY) -> Entry:
        entry = self.store.delete_local(kg, key, base)
        if self.replicator is not None:
            self.replicator.propagate(kg, entry)
        return entry

    def raw_get(self, kg: str, key: str) -> Entry:
        """Plain replica read without any session rule, used by staleness probes."""
        return self.store.get_local(kg, key)


class RemoteStore:
    """``GuardedStore`` interface for a keygroup replica on another node."""

    def __init__(self, pool: RpcClientPool, peer_id: str, address: str):
        self.pool = pool
        self.peer_id = peer_id
        self.address = address

    def _call(self, message: dict) -> dict:
        return self.pool.call(self.address, message, peer_id=self.peer_id)

    @staticmethod
    def _entry(result: dict) -> Optional[Entry]:
        data = result.get('entry')
        return Entry.from_wire(data) if data else None

    def get(self, kg: str, key: str, floor: VersionVector = EMPTY) -> Optional[Entry]:
        return self._entry(self._call({'type': 'SessionGet', 'keygroup': kg, 'key': key, 'floor': floor.encode()}))

    def scan(self, kg: str, start_key: str, count: int,
             floors: Dict[str, VersionVector] = None) -> List[Entry]:
        result = self._call({
            'type': 'SessionScan', 'keygroup': kg, 'start': start_key, 'count': count,
            'floors': {key: floor.encode() for key, floor in (floors or {}).items()},
        })
        return [Entry.from_wire(item) for item in result['entries']]

    def put(self, kg: str, key: str, value: bytes, base: VersionVector = EMPTY) -> Entry:
        return self._entry(self._call({
            'type': 'SessionSet', 'keygroup': kg, 'key': key, 'value': value, 'base': base.encode(),
        }))

    def delete(self, kg: str, key: str, base: VersionVector = EMPTY) -> Entry:
        return self._entry(self._call({'type': 'SessionDelete', 'keygroup': kg, 'key': key, 'base': base.encode()}))

    def raw_get(self, kg: str, key: str) -> Entry:
        return self._entry(self._call({'type': 'RawGet', 'keygroup': kg, 'key': key}))


def _as_bytes(value: Union[bytes, str]) -> bytes:
    if isinstance(value, str):
        return value.encode('utf-8')
    if isinstance(value, (bytes, bytearray)):
        return bytes(value)
    raise BadRequestError(f"kv values must be bytes or str, not {type(value).__name__}")


class SessionKV:
    """
    The ``kv`` object handed to function handlers.

    Bound to one keygroup and one session; every call applies read-your-writes
    and monotonic reads for that session.
    """

    def __init__(self, backend, session: Session):
        self.backend = backend
        self.session = session

    @property
    def keygroup(self) -> str:
        return self.session.keygroup

    def get(self, key: str, default=_MISSING) -> bytes:
        entry = self.backend.get(self.keygroup, key, self.session.floor(key))
        if entry is not None:
            self.session.observe(entry)
        if entry is None or entry.tombstone:
            if default is not _MISSING:
                return default
            raise NotFoundError(f"key {key!r} not found in keygroup {self.keygroup}")
        return entry.value

    def set(self, key: str, value: Union[bytes, str]):
        entry = self.backend.put(self.keygroup, key, _as_bytes(value), self.session.floor(key))
        self.session.observe(entry)

    def scan(self, start_key: str, count: int) -> List[Tuple[str, bytes]]:
        entries = self.backend.scan(self.keygroup, start_key, count, dict(self.session.high_water))
        for entry in entries:
            self.session.observe(entry)
        return [(entry.key, entry.value) for entry in entries]

    def delete(self, key: str):
        entry = self.backend.delete(self.keygroup, key, self.session.floor(key))
        self.session.observe(entry)


class SessionService:
    """Serves ``Session*`` and ``RawGet`` messages against the local replica."""

    def __init__(self, guarded: GuardedStore):
        self.guarded = guarded

    @staticmethod
    def _floor(message: dict, name: str) -> VersionVector:
        return VersionVector.parse(message.get(name) or '')

    @staticmethod
    def _reply(entry: Optional[Entry]) -> dict:
        return {'entry': entry.to_wire() if entry else None}

    def handle_get(self, message: dict) -> dict:
        return self._reply(self.guarded.get(message.get('keygroup'), message.get('key'), self._floor(message, 'floor')))

    def handle_scan(self, message: dict) -> dict:
        try:
            count = int(message.get('count'))
        except (TypeError, ValueError):
            raise BadRequestError("scan count must be an integer")
        floors = {key: VersionVector.parse(text) for key, text in (message.get('floors') or {}).items()}
        entries = self.guarded.scan(message.get('keygroup'), message.get('start') or '', count, floors)
        return {'entries': [entry.to_wire() for entry in entries]}

    def handle_set(self, message: dict) -> dict:
        value = message.get('value')
        if not isinstance(value, bytes):
            raise BadRequestError("SessionSet needs a binary value")
        return self._reply(self.guarded.put(message.get('keygroup'), message.get('key'), value,
                                            self._floor(message, 'base')))

    def handle_delete(self, message: dict) -> dict:
        return self._reply(self.guarded.delete(message.get('keygroup'), message.get('key'),
                                               self._floor(message, 'base')))

    def handle_raw_get(self, message: dict) -> dict:
        return self._reply(self.guarded.raw_get(message.get('keygroup'), message.get('key')))

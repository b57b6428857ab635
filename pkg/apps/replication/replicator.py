"""
Keygroup replication.

A node that gains a replica registers at the naming service, announces itself
to the existing peers and copies the source's full state. After that every
local write is pushed to each peer through a per-peer FIFO queue. Writers never
wait for peers.
"""

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Tuple

from django.conf import settings

from apps.kvstore.store import Entry, KeyValueStore
from apps.naming.client import NamingClient
from apps.netem.rpc import RpcClientPool
from core.clock import now_us
from core.exceptions import AlreadyExistsError, EnokiError, NotFoundError, UnavailableError

logger = logging.getLogger(__name__)

QUEUED = 'queued'
COMPACTED = 'compacted'
OVERFLOWED = 'overflowed'


@dataclass(frozen=True)
class Peer:
    id: str
    address: str


@dataclass
class ReplicaSet:
    keygroup: str
    peers: List[Peer] = field(default_factory=list)
    fetched_at: int = 0

    def peer_ids(self) -> List[str]:
        return [peer.id for peer in self.peers]


class PeerQueue:
    """
    Outbound updates for one peer.

    Bounded FIFO; on overflow the oldest queued update for the same key is
    replaced by the newest, or the oldest update overall if no key repeats.
    One sender thread delivers updates strictly in queue order, each retried
    with backoff and then dropped.
    """

    def __init__(self, replicator: 'Replicator', peer: Peer):
        self.replicator = replicator
        self.peer = peer
        self.depth = settings.ENOKI_REPLICATION_QUEUE_DEPTH
        self._items: Deque[Tuple[str, Entry]] = deque()
        self._sending = False
        self._condition = threading.Condition()
        self._stopped = False
        self._thread = threading.Thread(target=self._run, name=f'peer-queue-{peer.id}', daemon=True)
        self._thread.start()

    def enqueue(self, keygroup: str, entry: Entry) -> str:
        with self._condition:
            status = QUEUED
            if len(self._items) >= self.depth:
                status = self._make_room(keygroup, entry.key)
            self._items.append((keygroup, entry))
            self._condition.notify_all()
            return status

    def _make_room(self, keygroup: str, key: str) -> str:
        for position, (queued_keygroup, queued) in enumerate(self._items):
            if queued_keygroup == keygroup and queued.key == key:
                del self._items[position]
                return COMPACTED
        dropped_keygroup, dropped = self._items.popleft()
        logger.warning(
            f"Replication queue to {self.peer.id} full; dropped update of {dropped_keygroup}/{dropped.key}"
        )
        return OVERFLOWED

    def __len__(self):
        with self._condition:
            return len(self._items)

    @property
    def idle(self) -> bool:
        with self._condition:
            return not self._items and not self._sending

    def _run(self):
        while True:
            with self._condition:
                while not self._stopped and not self._items:
                    self._condition.wait()
                if self._stopped:
                    return
                keygroup, entry = self._items.popleft()
                self._sending = True
            try:
                self.replicator.send_update(self.peer, keygroup, entry)
            except Exception:
                logger.exception(f"Update of {keygroup}/{entry.key} to {self.peer.id} failed")
            finally:
                with self._condition:
                    self._sending = False
                    self._condition.notify_all()

    def stop(self):
        with self._condition:
            self._stopped = True
            self._condition.notify_all()


class Replicator:

    def __init__(self, node_id: str, address: str, store: KeyValueStore, pool: RpcClientPool, naming: NamingClient):
        self.node_id = node_id
        self.address = address
        self.store = store
        self.pool = pool
        self.naming = naming
        self._replica_sets: Dict[str, ReplicaSet] = {}
        self._queues: Dict[str, PeerQueue] = {}
        self._lock = threading.Lock()

    def replica_set(self, name: str) -> ReplicaSet:
        """Cached peers for a keygroup; never contacts the naming service."""
        with self._lock:
            return self._replica_sets.get(name) or ReplicaSet(keygroup=name)

    def set_replicas(self, name: str, replicas: List[str], addresses: Dict[str, str]) -> ReplicaSet:
        peers = [Peer(replica, addresses[replica]) for replica in replicas if replica != self.node_id]
        replica_set = ReplicaSet(keygroup=name, peers=peers, fetched_at=now_us())
        with self._lock:
            self._replica_sets[name] = replica_set
        if self.store.has_keygroup(name):
            self.store.keygroup(name).replicas = set(replicas) | {self.node_id}
        return replica_set

    def refresh_replicas(self, name: str) -> ReplicaSet:
        """Replace the cached peer list with the naming service's record."""
        info = self.naming.lookup_keygroup(name)
        replica_set = self.set_replicas(name, info.replicas, info.addresses)
        logger.debug(f"Refreshed replicas of {name}: {replica_set.peer_ids()}")
        return replica_set

    def add_peer(self, name: str, peer_id: str, address: str):
        """Record a peer that announced itself; keeps registration order."""
        if peer_id == self.node_id:
            return
        with self._lock:
            current = self._replica_sets.get(name) or ReplicaSet(keygroup=name)
            peers = [peer for peer in current.peers if peer.id != peer_id] + [Peer(peer_id, address)]
            self._replica_sets[name] = ReplicaSet(keygroup=name, peers=peers, fetched_at=current.fetched_at)
        if self.store.has_keygroup(name):
            self.store.keygroup(name).replicas.add(peer_id)
        logger.info(f"Peer {peer_id} joined keygroup {name}")

    def propagate(self, keygroup: str, entry: Entry) -> Dict[str, str]:
        """Queue an already-applied local write for every peer."""
        statuses = {}
        for peer in self.replica_set(keygroup).peers:
            statuses[peer.id] = self._queue_for(peer).enqueue(keygroup, entry)
        return statuses

    def _queue_for(self, peer: Peer) -> PeerQueue:
        with self._lock:
            queue = self._queues.get(peer.id)
            if queue is None or queue.peer.address != peer.address:
                if queue is not None:
                    queue.stop()
                queue = PeerQueue(self, peer)
                self._queues[peer.id] = queue
            return queue

    def send_update(self, peer: Peer, keygroup: str, entry: Entry):
        message = {'type': 'Update', 'keygroup': keygroup, 'entry': entry.to_wire()}
        delays = settings.ENOKI_REPLICATION_RETRY_DELAYS
        for attempt in range(len(delays) + 1):
            try:
                self.pool.call(peer.address, message, peer_id=peer.id)
                return
            except EnokiError as e:
                if attempt == len(delays):
                    logger.warning(
                        f"Dropped update of {keygroup}/{entry.key} to {peer.id} after {attempt + 1} attempts: {e}"
                    )
                    self._refresh_in_background(keygroup)
                    return
                logger.debug(f"Update to {peer.id} failed ({e}); retrying in {delays[attempt]}s")
                time.sleep(delays[attempt])

    def _refresh_in_background(self, keygroup: str):
        def refresh():
            try:
                self.refresh_replicas(keygroup)
            except EnokiError as e:
                logger.warning(f"Could not refresh replicas of {keygroup}: {e}")

        threading.Thread(target=refresh, name=f'refresh-{keygroup}', daemon=True).start()

    def bootstrap_keygroup(self, name: str, source: str) -> int:
        """
        Become a replica of an existing keygroup and copy the source's state.

        The local node is registered at the naming service and announced to the
        current peers before the transfer, so writes made meanwhile reach it
        through fan-out.

        If the transfer fails the local copy is dropped while the naming record
        stays; there is no deregistration.

        Returns:
            Number of entries copied from the source
        """
        if self.store.has_keygroup(name):
            raise AlreadyExistsError(f"keygroup {name} already exists locally")
        info = self.naming.add_replica(name, self.node_id)
        if source not in info.addresses:
            raise NotFoundError(f"{source} is not a replica of {name}")
        self.store.create_keygroup(name)
        replica_set = self.set_replicas(name, info.replicas, info.addresses)
        announce = {'type': 'JoinKeygroup', 'keygroup': name, 'node': self.node_id, 'address': self.address}
        for peer in replica_set.peers:
            try:
                self.pool.call(peer.address, announce, peer_id=peer.id)
            except EnokiError as e:
                if peer.id == source:
                    self._abandon_bootstrap(name, source)
                    raise UnavailableError(f"source {source} unreachable: {e}")
                logger.warning(f"Could not announce {self.node_id} to {peer.id} for {name}: {e}")
        try:
            result = self.pool.call(
                info.addresses[source], {'type': 'FetchKeygroup', 'keygroup': name}, peer_id=source,
            )
        except EnokiError as e:
            self._abandon_bootstrap(name, source)
            if isinstance(e, NotFoundError):
                raise
            raise UnavailableError(f"source {source} unreachable: {e}")
        entries = [Entry.from_wire(item) for item in result['entries']]
        for entry in entries:
            self.store.apply_remote(name, entry)
        logger.info(f"Bootstrapped keygroup {name} from {source}: {len(entries)} entries")
        return len(entries)

    def _abandon_bootstrap(self, name: str, source: str):
        self.store.drop_keygroup(name)
        logger.warning(
            f"Bootstrap of {name} from {source} failed; {self.node_id} stays registered as a replica of {name} "
            f"without holding it"
        )

    def handle_update(self, message: dict) -> dict:
        entry = Entry.from_wire(message.get('entry') or {})
        result = self.store.apply_remote(message.get('keygroup'), entry)
        return {'result': result.value}

    def handle_fetch(self, message: dict) -> dict:
        entries = self.store.snapshot(message.get('keygroup'))
        return {'entries': [entry.to_wire() for entry in entries]}

    def handle_join(self, message: dict) -> dict:
        name = message.get('keygroup')
        if not self.store.has_keygroup(name):
            raise NotFoundError(f"keygroup {name} not found")
        self.add_peer(name, message.get('node'), message.get('address'))
        return {'ack': True}

    def wait_idle(self, timeout: float = 10.0) -> bool:
        """Block until every peer queue is drained; True on success."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                queues = list(self._queues.values())
            if all(queue.idle for queue in queues):
                return True
            time.sleep(0.005)
        return False

    def stop(self):
        with self._lock:
            queues = list(self._queues.values())
            self._queues.clear()
        for queue in queues:
            queue.stop()

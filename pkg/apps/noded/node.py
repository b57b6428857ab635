"""
The node core: store, replication, sessions and runtime behind one RPC listener.

The HTTP surface lives in ``api.py``; it reaches the running node through
``get_node()``.
"""

import logging
import threading
import time
from typing import Callable, Dict, Optional

from django.conf import settings

from apps.kvstore.store import KeyValueStore
from apps.naming.client import NamingClient
from apps.netem.rpc import RpcClientPool, RpcServer
from apps.netem.shaper import Netem
from apps.netem.topology import Topology
from apps.replication.replicator import Replicator
from apps.runtime.functions import FunctionRuntime
from apps.session.sessions import GuardedStore, SessionService
from core.exceptions import BadRequestError, EnokiError, UnavailableError
from core.utils import validate_node_id
from enoki_platform.scheduler import start_scheduler, stop_scheduler

logger = logging.getLogger(__name__)


class Node:

    def __init__(self, node_id: str, topology: Optional[Topology], naming_addr: str,
                 listen_rpc: str = '127.0.0.1:0', role: str = 'edge', heartbeat: bool = True):
        self.id = validate_node_id(node_id)
        self.role = role
        self.topology = topology
        self.netem = Netem(topology, node_id)
        self.pool = RpcClientPool(self.netem)
        self.naming = NamingClient(naming_addr, self.pool)
        self.store = KeyValueStore(node_id)
        self.replicator = Replicator(node_id, listen_rpc, self.store, self.pool, self.naming)
        self.guarded = GuardedStore(self.store, self.replicator)
        self.sessions = SessionService(self.guarded)
        self.runtime = FunctionRuntime(node_id, self.guarded, self.replicator, self.naming, self.pool)
        self.rpc = RpcServer(listen_rpc, self.dispatch, self.netem, name=f'rpc-{node_id}')
        self.heartbeat = heartbeat
        self.scheduler = None
        self.started = False
        self.handlers: Dict[str, Callable[[dict], dict]] = {
            'Update': self.replicator.handle_update,
            'FetchKeygroup': self.replicator.handle_fetch,
            'JoinKeygroup': self.replicator.handle_join,
            'SessionGet': self.sessions.handle_get,
            'SessionScan': self.sessions.handle_scan,
            'SessionSet': self.sessions.handle_set,
            'SessionDelete': self.sessions.handle_delete,
            'RawGet': self.sessions.handle_raw_get,
            'Invoke': self.runtime.handle_invoke,
        }

    @property
    def address(self) -> str:
        return self.rpc.address

    def start(self) -> str:
        """
        Open the RPC listener, register at the naming service and start heartbeats.

        Returns:
            The bound RPC address
        """
        address = self.rpc.start()
        self.replicator.address = address
        try:
            self._register(address)
        except EnokiError:
            self.rpc.stop()
            raise
        if self.heartbeat:
            self.scheduler = start_scheduler(self.naming, self.id)
        self.started = True
        return address

    def _register(self, address: str):
        attempts = settings.ENOKI_NAMING_CONNECT_ATTEMPTS
        for attempt in range(1, attempts + 1):
            try:
                self.naming.register_node(self.id, address)
                logger.info(f"Registered {self.id} at naming service {self.naming.address} as {address}")
                return
            except UnavailableError as e:
                if attempt == attempts:
                    raise UnavailableError(f"naming service unreachable after {attempts} attempts: {e.detail}")
                logger.info(f"Naming service not reachable yet (attempt {attempt}/{attempts})")
                time.sleep(settings.ENOKI_NAMING_CONNECT_BACKOFF_S)

    def dispatch(self, message: dict, sender: Optional[str]):
        handler = self.handlers.get(message['type'])
        if handler is None:
            raise BadRequestError(f"unknown message type {message['type']}")
        return handler(message)

    def stop(self):
        if not self.started:
            return
        self.started = False
        stop_scheduler(self.scheduler)
        self.runtime.stop()
        self.replicator.stop()
        self.rpc.stop()
        self.pool.close()
        logger.info(f"Node {self.id} stopped")


_node: Optional[Node] = None
_node_lock = threading.Lock()


def set_node(node: Optional[Node]):
    global _node
    with _node_lock:
        _node = node


def get_node() -> Node:
    """The node served by this process."""
    with _node_lock:
        node = _node
    if node is None:
        raise UnavailableError("node is not running")
    return node

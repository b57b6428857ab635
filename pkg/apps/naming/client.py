"""
Client for the naming daemon, used by nodes on the control path only.
"""

import logging
import threading
from collections import Counter

from apps.netem.rpc import RpcClientPool
from .registry import KeygroupInfo, NodeInfo
from .server import NAMING_ID

logger = logging.getLogger(__name__)


class NamingClient:
    """Typed calls to the naming service; counts every request it sends."""

    def __init__(self, address: str, pool: RpcClientPool):
        self.address = address
        self.pool = pool
        self.calls = Counter()
        self._lock = threading.Lock()

    @property
    def total_calls(self) -> int:
        with self._lock:
            return sum(self.calls.values())

    def _call(self, message: dict):
        with self._lock:
            self.calls[message['type']] += 1
        return self.pool.call(self.address, message, peer_id=NAMING_ID)

    def register_node(self, node_id: str, address: str) -> NodeInfo:
        return NodeInfo.from_wire(self._call({'type': 'RegisterNode', 'node': node_id, 'address': address}))

    def heartbeat(self, node_id: str) -> NodeInfo:
        return NodeInfo.from_wire(self._call({'type': 'Heartbeat', 'node': node_id}))

    def lookup_node(self, node_id: str) -> NodeInfo:
        return NodeInfo.from_wire(self._call({'type': 'LookupNode', 'node': node_id}))

    def create_keygroup(self, name: str, first_replica: str) -> KeygroupInfo:
        return KeygroupInfo.from_wire(self._call({'type': 'CreateKeygroup', 'keygroup': name, 'node': first_replica}))

    def add_replica(self, name: str, node_id: str) -> KeygroupInfo:
        return KeygroupInfo.from_wire(self._call({'type': 'AddReplica', 'keygroup': name, 'node': node_id}))

    def lookup_keygroup(self, name: str) -> KeygroupInfo:
        return KeygroupInfo.from_wire(self._call({'type': 'LookupKeygroup', 'keygroup': name}))

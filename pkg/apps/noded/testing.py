"""
A naming service and several nodes on ephemeral loopback ports in one process.

Used by integration tests that need real RPC between nodes; needs a test
database for the naming registry (``TransactionTestCase``).
"""

from typing import Dict, Iterable, List, Optional, Union

from apps.naming.server import NamingServer
from apps.netem.rpc import RpcClientPool
from apps.netem.shaper import Netem
from apps.netem.topology import Topology
from apps.runtime.functions import SYNC, FunctionSpec
from .node import Node

CLIENT_ID = 'client'


def cluster_topology(node_ids: Iterable[str], links: List[dict] = None, default: dict = None) -> Topology:
    nodes = [{'id': CLIENT_ID, 'role': 'client', 'addr': '127.0.0.1:0'}]
    for node_id in node_ids:
        nodes.append({'id': node_id, 'role': 'cloud' if node_id.startswith('cloud') else 'edge', 'addr': '127.0.0.1:0'})
    return Topology.from_dict({'nodes': nodes, 'links': links or [], 'default': default or {}})


class InProcessCluster:

    def __init__(self, node_ids: Iterable[str] = ('edge-1', 'edge-2'), links: List[dict] = None,
                 default: dict = None):
        self.node_ids = list(node_ids)
        self.topology = cluster_topology(self.node_ids, links, default)
        self.naming = NamingServer('127.0.0.1:0', topology=self.topology)
        self.nodes: Dict[str, Node] = {}
        self.pool = RpcClientPool(Netem(self.topology, CLIENT_ID))

    def start(self) -> 'InProcessCluster':
        naming_address = self.naming.start()
        try:
            for node_id in self.node_ids:
                node = Node(node_id, self.topology, naming_address, heartbeat=False)
                node.start()
                self.nodes[node_id] = node
        except Exception:
            self.stop()
            raise
        return self

    def stop(self):
        for node in self.nodes.values():
            node.stop()
        self.nodes.clear()
        self.pool.close()
        self.naming.stop()

    def __enter__(self) -> 'InProcessCluster':
        return self.start()

    def __exit__(self, *exc_info):
        self.stop()

    def __getitem__(self, node_id: str) -> Node:
        return self.nodes[node_id]

    def deploy(self, node_id: str, name: str, handler: str = None, **fields):
        return self.nodes[node_id].runtime.deploy(FunctionSpec(name=name, handler=handler or name, **fields))

    def invoke(self, node_id: str, name: str, data: Union[bytes, str] = b'', mode: str = SYNC,
               timeout: Optional[float] = None):
        """Invoke through the emulated client link, as a remote client would."""
        if isinstance(data, str):
            data = data.encode('utf-8')
        message = {'type': 'Invoke', 'function': name, 'input': data, 'mode': mode, 'depth': 0}
        result = self.pool.call(self.nodes[node_id].address, message, peer_id=node_id, timeout=timeout)
        return result.get('output', result.get('token'))

    def settle(self, timeout: float = 10.0) -> bool:
        """Wait until no node has replication updates in flight."""
        return all(node.replicator.wait_idle(timeout) for node in self.nodes.values())

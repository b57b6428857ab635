"""
The benchmark client: invokes functions over emulated client links and deploys over HTTP.
"""

import logging
import time
from typing import Dict, Iterable, Optional

from apps.netem.rpc import RpcClientPool
from apps.netem.shaper import Netem
from apps.netem.topology import Topology
from apps.noded.http_client import NodeHttpClient
from apps.noded.testing import CLIENT_ID
from apps.runtime.functions import ASYNC, SYNC
from core.exceptions import BadRequestError, NotFoundError, UnavailableError

logger = logging.getLogger(__name__)


class BenchClient:
    """
    Talks to the nodes of one topology as its ``client`` node.

    Invocations and probe reads go over RPC so they pay the emulated
    client links; deployment and health checks use each node's HTTP API.
    """

    def __init__(self, topology: Topology, client_id: str = CLIENT_ID):
        topology.index_of(client_id)
        self.topology = topology
        self.client_id = client_id
        self.pool = RpcClientPool(Netem(topology, client_id))
        self._http: Dict[str, NodeHttpClient] = {}

    def _rpc(self, node_id: str, message: dict):
        return self.pool.call(self.topology.node(node_id).addr, message, peer_id=node_id)

    def http(self, node_id: str) -> NodeHttpClient:
        if node_id not in self._http:
            address = self.topology.node(node_id).http
            if not address:
                raise BadRequestError(f"topology has no HTTP address for {node_id}")
            self._http[node_id] = NodeHttpClient(address)
        return self._http[node_id]

    def invoke(self, node_id: str, function: str, data: bytes = b'', mode: str = SYNC) -> bytes:
        reply = self._rpc(node_id, {'type': 'Invoke', 'function': function, 'input': data, 'mode': mode, 'depth': 0})
        if mode == ASYNC:
            return reply['token']
        return reply['output']

    def raw_get(self, node_id: str, keygroup: str, key: str) -> Optional[bytes]:
        """Read a replica's current value with no session guarantee."""
        try:
            reply = self._rpc(node_id, {'type': 'RawGet', 'keygroup': keygroup, 'key': key})
        except NotFoundError:
            return None
        entry = reply.get('entry')
        if entry is None or entry.get('tombstone'):
            return None
        return entry['value']

    def deploy(self, node_id: str, name: str, handler: str, **fields) -> dict:
        result = self.http(node_id).deploy(name, handler, **fields)
        logger.debug(f"Deployed {name} ({handler}) on {node_id}: {result}")
        return result

    def wait_ready(self, node_ids: Iterable[str], timeout: float = 30.0):
        """Block until every node answers its health check."""
        deadline = time.monotonic() + timeout
        for node_id in node_ids:
            while not self.http(node_id).health():
                if time.monotonic() >= deadline:
                    raise UnavailableError(f"node {node_id} did not become healthy within {timeout:.0f}s")
                time.sleep(0.2)

    def close(self):
        for client in self._http.values():
            client.close()
        self._http.clear()
        self.pool.close()

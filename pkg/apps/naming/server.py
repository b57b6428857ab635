"""
Naming daemon: serves the registry over the internal RPC protocol.
"""

import logging
from typing import Optional

from django.db import close_old_connections

from apps.netem.rpc import RpcServer
from apps.netem.shaper import Netem
from apps.netem.topology import Topology
from core.exceptions import BadRequestError
from .registry import NamingRegistry

logger = logging.getLogger(__name__)

NAMING_ID = 'naming'


class NamingServer:

    def __init__(self, listen: str, topology: Optional[Topology] = None, registry: NamingRegistry = None):
        self.registry = registry or NamingRegistry()
        self.rpc = RpcServer(listen, self.dispatch, Netem(topology, NAMING_ID), name='naming')
        self.handlers = {
            'RegisterNode': lambda m: self.registry.register_node(m.get('node'), m.get('address')).to_wire(),
            'Heartbeat': lambda m: self.registry.heartbeat(m.get('node')).to_wire(),
            'LookupNode': lambda m: self.registry.lookup_node(m.get('node')).to_wire(),
            'CreateKeygroup': lambda m: self.registry.create_keygroup_record(m.get('keygroup'), m.get('node')).to_wire(),
            'AddReplica': lambda m: self.registry.add_replica(m.get('keygroup'), m.get('node')).to_wire(),
            'LookupKeygroup': lambda m: self.registry.lookup_keygroup(m.get('keygroup')).to_wire(),
        }

    @property
    def address(self) -> str:
        return self.rpc.address

    def start(self) -> str:
        address = self.rpc.start()
        logger.info(f"Naming service ready on {address}")
        return address

    def stop(self):
        self.rpc.stop()

    def dispatch(self, message: dict, sender: Optional[str]):
        handler = self.handlers.get(message['type'])
        if handler is None:
            raise BadRequestError(f"unknown naming message type {message['type']}")
        close_old_connections()
        try:
            return handler(message)
        finally:
            close_old_connections()

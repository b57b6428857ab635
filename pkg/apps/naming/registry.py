"""
Naming registry: node addresses and keygroup replica sets.

Every operation runs under one process-wide lock inside a transaction, which
makes the registry linearizable for all callers of this daemon.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Dict, List

from django.db import transaction
from django.db.models import Max

from core.clock import now_us
from core.exceptions import AlreadyExistsError, BadRequestError, NotFoundError
from core.utils import parse_address, validate_name, validate_node_id
from .models import KeygroupRecord, KeygroupReplica, NodeRecord

logger = logging.getLogger(__name__)

_registry_lock = threading.RLock()


@dataclass(frozen=True)
class NodeInfo:
    id: str
    address: str
    last_heartbeat: int = 0

    def to_wire(self) -> dict:
        return {'id': self.id, 'address': self.address, 'last_heartbeat': self.last_heartbeat}

    @classmethod
    def from_wire(cls, data: dict) -> 'NodeInfo':
        return cls(id=data['id'], address=data['address'], last_heartbeat=int(data.get('last_heartbeat', 0)))


@dataclass(frozen=True)
class KeygroupInfo:
    """Replica ids in registration order plus their current addresses."""

    name: str
    replicas: List[str]
    addresses: Dict[str, str] = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {'name': self.name, 'replicas': list(self.replicas), 'addresses': dict(self.addresses)}

    @classmethod
    def from_wire(cls, data: dict) -> 'KeygroupInfo':
        return cls(name=data['name'], replicas=list(data['replicas']), addresses=dict(data.get('addresses', {})))


def _node_info(record: NodeRecord) -> NodeInfo:
    return NodeInfo(id=record.node_id, address=record.address, last_heartbeat=record.last_heartbeat)


def _keygroup_info(record: KeygroupRecord) -> KeygroupInfo:
    members = record.replicas.select_related('node').order_by('position')
    return KeygroupInfo(
        name=record.name,
        replicas=[member.node.node_id for member in members],
        addresses={member.node.node_id: member.node.address for member in members},
    )


class NamingRegistry:

    def register_node(self, node_id: str, address: str) -> NodeInfo:
        validate_node_id(node_id)
        parse_address(address)
        with _registry_lock, transaction.atomic():
            holder = NodeRecord.objects.select_for_update().filter(address=address).exclude(node_id=node_id).first()
            if holder is not None:
                raise BadRequestError(f"address {address} is already registered to {holder.node_id}")
            record, created = NodeRecord.objects.select_for_update().get_or_create(
                node_id=node_id,
                defaults={'address': address, 'last_heartbeat': now_us()},
            )
            if not created:
                record.address = address
                record.last_heartbeat = now_us()
                record.save(update_fields=['address', 'last_heartbeat'])
        logger.info(f"{'Registered' if created else 'Re-registered'} node {node_id} at {address}")
        return _node_info(record)

    def heartbeat(self, node_id: str) -> NodeInfo:
        with _registry_lock, transaction.atomic():
            record = self._node(node_id, lock=True)
            record.last_heartbeat = now_us()
            record.save(update_fields=['last_heartbeat'])
        logger.debug(f"Heartbeat from {node_id}")
        return _node_info(record)

    def lookup_node(self, node_id: str) -> NodeInfo:
        with _registry_lock:
            return _node_info(self._node(node_id))

    def create_keygroup_record(self, name: str, first_replica: str) -> KeygroupInfo:
        validate_name(name, 'keygroup name')
        with _registry_lock, transaction.atomic():
            node = self._node(first_replica)
            if KeygroupRecord.objects.filter(name=name).exists():
                raise AlreadyExistsError(f"keygroup {name} already exists")
            record = KeygroupRecord.objects.create(name=name)
            KeygroupReplica.objects.create(keygroup=record, node=node, position=0)
            info = _keygroup_info(record)
        logger.info(f"Created keygroup {name} with first replica {first_replica}")
        return info

    def add_replica(self, name: str, node_id: str) -> KeygroupInfo:
        with _registry_lock, transaction.atomic():
            record = self._keygroup(name, lock=True)
            node = self._node(node_id)
            if not record.replicas.filter(node=node).exists():
                last = record.replicas.aggregate(last=Max('position'))['last']
                KeygroupReplica.objects.create(keygroup=record, node=node, position=(last or 0) + 1)
                logger.info(f"Added replica {node_id} to keygroup {name}")
            return _keygroup_info(record)

    def lookup_keygroup(self, name: str) -> KeygroupInfo:
        with _registry_lock:
            return _keygroup_info(self._keygroup(name))

    def reset(self):
        with _registry_lock, transaction.atomic():
            KeygroupReplica.objects.all().delete()
            KeygroupRecord.objects.all().delete()
            NodeRecord.objects.all().delete()
        logger.info("Naming registry cleared")

    def _node(self, node_id: str, lock: bool = False) -> NodeRecord:
        queryset = NodeRecord.objects.select_for_update() if lock else NodeRecord.objects
        try:
            return queryset.get(node_id=node_id)
        except NodeRecord.DoesNotExist:
            raise NotFoundError(f"node {node_id} is not registered")

    def _keygroup(self, name: str, lock: bool = False) -> KeygroupRecord:
        queryset = KeygroupRecord.objects.select_for_update() if lock else KeygroupRecord.objects
        try:
            return queryset.get(name=name)
        except KeygroupRecord.DoesNotExist:
            raise NotFoundError(f"keygroup {name} not found")

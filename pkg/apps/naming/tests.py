"""
Tests for the naming registry and daemon.
"""

import threading

from django.test import TestCase, TransactionTestCase

from apps.netem.rpc import RpcClientPool
from apps.netem.shaper import Netem
from core.exceptions import AlreadyExistsError, BadRequestError, NotFoundError
from .client import NamingClient
from .models import KeygroupRecord, NodeRecord
from .registry import NamingRegistry
from .server import NamingServer


class NodeRegistrationTestCase(TestCase):
    def setUp(self):
        self.registry = NamingRegistry()

    def test_register_and_lookup(self):
        """Test a registered node can be looked up"""
        self.registry.register_node('edge-1', '127.0.0.1:7101')

        node = self.registry.lookup_node('edge-1')

        self.assertEqual(node.address, '127.0.0.1:7101')
        self.assertGreater(node.last_heartbeat, 0)

    def test_reregister_updates_address(self):
        self.registry.register_node('edge-1', '127.0.0.1:7101')
        self.registry.register_node('edge-1', '127.0.0.1:7201')

        self.assertEqual(self.registry.lookup_node('edge-1').address, '127.0.0.1:7201')
        self.assertEqual(NodeRecord.objects.count(), 1)

    def test_register_empty_id(self):
        with self.assertRaises(BadRequestError):
            self.registry.register_node('', '127.0.0.1:7101')

    def test_register_malformed_address(self):
        with self.assertRaises(BadRequestError):
            self.registry.register_node('edge-1', 'no-port')

    def test_address_held_by_other_node(self):
        self.registry.register_node('edge-1', '127.0.0.1:7101')

        with self.assertRaises(BadRequestError):
            self.registry.register_node('edge-2', '127.0.0.1:7101')

    def test_lookup_unknown_node(self):
        with self.assertRaises(NotFoundError):
            self.registry.lookup_node('ghost')

    def test_heartbeat_refreshes_timestamp(self):
        first = self.registry.register_node('edge-1', '127.0.0.1:7101')

        beat = self.registry.heartbeat('edge-1')

        self.assertGreaterEqual(beat.last_heartbeat, first.last_heartbeat)

    def test_heartbeat_unknown_node(self):
        with self.assertRaises(NotFoundError):
            self.registry.heartbeat('ghost')


class KeygroupRegistryTestCase(TestCase):
    def setUp(self):
        self.registry = NamingRegistry()
        self.registry.register_node('edge-1', '127.0.0.1:7101')
        self.registry.register_node('edge-2', '127.0.0.1:7102')

    def test_create_keygroup(self):
        record = self.registry.create_keygroup_record('fn-avg', 'edge-1')

        self.assertEqual(record.replicas, ['edge-1'])
        self.assertEqual(record.addresses, {'edge-1': '127.0.0.1:7101'})

    def test_create_twice(self):
        self.registry.create_keygroup_record('fn-avg', 'edge-1')

        with self.assertRaises(AlreadyExistsError):
            self.registry.create_keygroup_record('fn-avg', 'edge-2')

    def test_create_with_unregistered_node(self):
        with self.assertRaises(NotFoundError):
            self.registry.create_keygroup_record('fn-avg', 'ghost')
        self.assertFalse(KeygroupRecord.objects.exists())

    def test_add_replica_keeps_registration_order(self):
        self.registry.create_keygroup_record('fn-avg', 'edge-2')

        record = self.registry.add_replica('fn-avg', 'edge-1')

        self.assertEqual(record.replicas, ['edge-2', 'edge-1'])

    def test_add_replica_is_idempotent(self):
        self.registry.create_keygroup_record('fn-avg', 'edge-1')
        self.registry.add_replica('fn-avg', 'edge-2')

        record = self.registry.add_replica('fn-avg', 'edge-1')

        self.assertEqual(record.replicas, ['edge-1', 'edge-2'])

    def test_add_replica_to_missing_keygroup(self):
        with self.assertRaises(NotFoundError):
            self.registry.add_replica('nope', 'edge-1')

    def test_lookup_before_and_after_create(self):
        with self.assertRaises(NotFoundError):
            self.registry.lookup_keygroup('fn-avg')

        self.registry.create_keygroup_record('fn-avg', 'edge-1')
        self.registry.add_replica('fn-avg', 'edge-2')

        self.assertEqual(self.registry.lookup_keygroup('fn-avg').replicas, ['edge-1', 'edge-2'])

    def test_lookup_reflects_address_update(self):
        self.registry.create_keygroup_record('fn-avg', 'edge-1')
        self.registry.register_node('edge-1', '127.0.0.1:9101')

        self.assertEqual(self.registry.lookup_keygroup('fn-avg').addresses['edge-1'], '127.0.0.1:9101')

    def test_reset(self):
        self.registry.create_keygroup_record('fn-avg', 'edge-1')

        self.registry.reset()

        self.assertFalse(NodeRecord.objects.exists())
        self.assertFalse(KeygroupRecord.objects.exists())


class NamingDaemonTestCase(TransactionTestCase):
    """The daemon over real sockets, with concurrent callers."""

    def setUp(self):
        self.server = NamingServer('127.0.0.1:0')
        self.server.start()
        self.addCleanup(self.server.stop)
        self.pool = RpcClientPool(Netem(None, 'edge-1'))
        self.addCleanup(self.pool.close)
        self.client = NamingClient(self.server.address, self.pool)

    def test_full_control_flow(self):
        self.client.register_node('edge-1', '127.0.0.1:7101')
        self.client.register_node('edge-2', '127.0.0.1:7102')
        self.client.create_keygroup('fn-avg', 'edge-1')
        self.client.add_replica('fn-avg', 'edge-2')

        record = self.client.lookup_keygroup('fn-avg')

        self.assertEqual(record.replicas, ['edge-1', 'edge-2'])
        self.assertEqual(record.addresses['edge-2'], '127.0.0.1:7102')
        self.assertEqual(self.client.lookup_node('edge-2').address, '127.0.0.1:7102')
        self.assertEqual(self.client.heartbeat('edge-1').id, 'edge-1')

    def test_errors_cross_the_wire(self):
        with self.assertRaises(NotFoundError):
            self.client.lookup_keygroup('missing')
        with self.assertRaises(BadRequestError):
            self.client.register_node('', '127.0.0.1:1')

    def test_unknown_message_type(self):
        with self.assertRaises(BadRequestError):
            self.pool.call(self.server.address, {'type': 'Watch'})

    def test_calls_are_counted(self):
        self.client.register_node('edge-1', '127.0.0.1:7101')
        self.client.lookup_node('edge-1')

        self.assertEqual(self.client.total_calls, 2)
        self.assertEqual(self.client.calls['LookupNode'], 1)

    def test_concurrent_add_replica_is_linearizable(self):
        """Test parallel joins each land exactly once"""
        self.client.register_node('edge-0', '127.0.0.1:7100')
        self.client.create_keygroup('shared', 'edge-0')
        for i in range(1, 9):
            self.client.register_node(f'edge-{i}', f'127.0.0.1:{7100 + i}')

        def join(i):
            self.client.add_replica('shared', f'edge-{i}')
            self.client.add_replica('shared', f'edge-{i}')

        threads = [threading.Thread(target=join, args=(i,)) for i in range(1, 9)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        replicas = self.client.lookup_keygroup('shared').replicas
        self.assertEqual(replicas[0], 'edge-0')
        self.assertEqual(sorted(replicas), sorted(f'edge-{i}' for i in range(9)))

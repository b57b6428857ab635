"""
Tests for per-peer replication queues and keygroup replication between nodes.
"""

import random
import socket
import statistics
import threading
import time

from django.test import SimpleTestCase, TransactionTestCase, override_settings

from apps.kvstore.store import Entry
from apps.noded.testing import InProcessCluster
from core.exceptions import NotFoundError, UnavailableError
from core.versioning import VersionVector
from .replicator import COMPACTED, OVERFLOWED, QUEUED, Peer, PeerQueue


def entry(key, counter=1, value=b'v'):
    return Entry(key=key, value=value, version=VersionVector.of({'A': counter}), writer='A', write_ts=counter)


def closed_port_address():
    with socket.socket() as sock:
        sock.bind(('127.0.0.1', 0))
        return f"127.0.0.1:{sock.getsockname()[1]}"


def wait_for(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.01)
    return False


class GatedReplicator:
    """Records deliveries; every send blocks until the gate opens."""

    def __init__(self):
        self.gate = threading.Event()
        self.delivered = []
        self._lock = threading.Lock()

    def send_update(self, peer, keygroup, update):
        self.gate.wait(5)
        with self._lock:
            self.delivered.append((update.key, update.version.get('A')))


class PeerQueueTestCase(SimpleTestCase):
    def setUp(self):
        self.replicator = GatedReplicator()

    def tearDown(self):
        self.replicator.gate.set()

    def occupy_sender(self, queue):
        queue.enqueue('kg', entry('busy'))
        self.assertTrue(wait_for(lambda: len(queue) == 0))

    def test_delivers_every_update(self):
        self.replicator.gate.set()
        queue = PeerQueue(self.replicator, Peer('B', '127.0.0.1:1'))

        for i in range(5):
            queue.enqueue('kg', entry(f'k{i}'))

        self.assertTrue(wait_for(lambda: queue.idle))
        self.assertTrue(wait_for(lambda: len(self.replicator.delivered) == 5))
        self.assertEqual(sorted(key for key, _ in self.replicator.delivered), [f'k{i}' for i in range(5)])
        queue.stop()

    def test_delivers_in_enqueue_order(self):
        self.replicator.gate.set()
        queue = PeerQueue(self.replicator, Peer('B', '127.0.0.1:1'))

        for counter in range(1, 101):
            queue.enqueue('kg', entry(f'k{counter % 7}', counter))

        self.assertTrue(wait_for(lambda: len(self.replicator.delivered) == 100))
        self.assertEqual([counter for _, counter in self.replicator.delivered], list(range(1, 101)))
        queue.stop()

    def test_one_update_in_flight_per_peer(self):
        queue = PeerQueue(self.replicator, Peer('B', '127.0.0.1:1'))
        self.occupy_sender(queue)

        queue.enqueue('kg', entry('k1'))
        queue.enqueue('kg', entry('k2'))
        time.sleep(0.05)

        self.assertEqual(len(queue), 2)
        self.assertEqual(self.replicator.delivered, [])
        self.replicator.gate.set()
        self.assertTrue(wait_for(lambda: queue.idle))
        self.assertEqual([key for key, _ in self.replicator.delivered], ['busy', 'k1', 'k2'])
        queue.stop()

    @override_settings(ENOKI_REPLICATION_QUEUE_DEPTH=2)
    def test_overflow_compacts_same_key(self):
        queue = PeerQueue(self.replicator, Peer('B', '127.0.0.1:1'))
        self.occupy_sender(queue)

        self.assertEqual(queue.enqueue('kg', entry('k1', 1)), QUEUED)
        self.assertEqual(queue.enqueue('kg', entry('k2', 1)), QUEUED)
        self.assertEqual(queue.enqueue('kg', entry('k1', 2)), COMPACTED)

        self.assertEqual(len(queue), 2)
        self.replicator.gate.set()
        self.assertTrue(wait_for(lambda: queue.idle))
        self.assertIn(('k1', 2), self.replicator.delivered)
        self.assertNotIn(('k1', 1), self.replicator.delivered)
        queue.stop()

    @override_settings(ENOKI_REPLICATION_QUEUE_DEPTH=2)
    def test_overflow_drops_oldest(self):
        queue = PeerQueue(self.replicator, Peer('B', '127.0.0.1:1'))
        self.occupy_sender(queue)
        queue.enqueue('kg', entry('k1'))
        queue.enqueue('kg', entry('k2'))

        with self.assertLogs('apps.replication.replicator', 'WARNING'):
            self.assertEqual(queue.enqueue('kg', entry('k3')), OVERFLOWED)

        self.replicator.gate.set()
        self.assertTrue(wait_for(lambda: queue.idle))
        keys = [key for key, _ in self.replicator.delivered]
        self.assertNotIn('k1', keys)
        self.assertIn('k3', keys)
        queue.stop()


class ReplicationTestCase(TransactionTestCase):
    def setUp(self):
        self.cluster = InProcessCluster(['edge-1', 'edge-2', 'cloud-1']).start()

    def tearDown(self):
        self.cluster.stop()

    def share(self, keygroup, *node_ids):
        for node_id in node_ids:
            self.cluster.deploy(node_id, keygroup, handler='echo')

    def test_writes_reach_every_replica(self):
        self.share('kg', 'edge-1', 'edge-2', 'cloud-1')

        self.cluster['edge-1'].guarded.put('kg', 'k', b'v')

        self.assertTrue(self.cluster.settle())
        for node_id in ('edge-2', 'cloud-1'):
            self.assertEqual(self.cluster[node_id].store.get_local('kg', 'k').value, b'v')

    def test_bootstrap_copies_existing_state(self):
        self.share('kg', 'edge-1')
        for i in range(50):
            self.cluster['edge-1'].guarded.put('kg', f'k{i:03d}', str(i).encode())

        result = self.cluster.deploy('edge-2', 'kg', handler='echo')

        self.assertEqual(result.replicated_from, 'edge-1')
        self.assertEqual(len(self.cluster['edge-2'].store.keygroup('kg')), 50)

    def test_joining_replica_is_announced_to_peers(self):
        self.share('kg', 'edge-1')
        lookups_before = self.cluster['edge-1'].naming.calls['LookupKeygroup']

        self.share('kg', 'edge-2')
        self.cluster['edge-1'].guarded.put('kg', 'k', b'after-join')

        self.assertTrue(self.cluster.settle())
        self.assertEqual(self.cluster['edge-2'].store.get_local('kg', 'k').value, b'after-join')
        self.assertEqual(self.cluster['edge-1'].naming.calls['LookupKeygroup'], lookups_before)
        self.assertEqual(self.cluster['edge-1'].replicator.replica_set('kg').peer_ids(), ['edge-2'])

    def test_concurrent_writers_converge(self):
        self.share('kg', 'edge-1', 'edge-2', 'cloud-1')

        def write(node_id):
            for i in range(30):
                self.cluster[node_id].guarded.put('kg', f'k{i % 5}', f'{node_id}-{i}'.encode())

        writers = [threading.Thread(target=write, args=(node_id,)) for node_id in ('edge-1', 'edge-2', 'cloud-1')]
        for writer in writers:
            writer.start()
        for writer in writers:
            writer.join()

        self.assertTrue(self.cluster.settle())
        states = [
            [(e.key, e.value, e.version, e.tombstone) for e in self.cluster[node_id].store.snapshot('kg')]
            for node_id in ('edge-1', 'edge-2', 'cloud-1')
        ]
        self.assertEqual(states[0], states[1])
        self.assertEqual(states[0], states[2])

    def test_randomized_writers_converge(self):
        """Test 100 seeded runs of racing writers on two and three replicas"""
        for run in range(100):
            rng = random.Random(run)
            node_ids = ['edge-1', 'edge-2', 'cloud-1'][:2 + run % 2]
            keygroup = f'kg{run:03d}'
            self.share(keygroup, *node_ids)
            plans = {node_id: random.Random(rng.random()) for node_id in node_ids}

            def write(node_id):
                plan = plans[node_id]
                guarded = self.cluster[node_id].guarded
                for i in range(plan.randint(1, 8)):
                    key = f'k{plan.randrange(3)}'
                    if plan.random() < 0.2:
                        try:
                            guarded.delete(keygroup, key)
                        except NotFoundError:
                            pass
                    else:
                        guarded.put(keygroup, key, f'{node_id}-{i}'.encode())
                    if plan.random() < 0.3:
                        time.sleep(plan.random() / 1000)

            writers = [threading.Thread(target=write, args=(node_id,)) for node_id in node_ids]
            for writer in writers:
                writer.start()
            for writer in writers:
                writer.join()

            self.assertTrue(self.cluster.settle())
            states = [
                (
                    self.cluster[node_id].store.snapshot(keygroup),
                    [self.cluster[node_id].store.lookup(keygroup, f'k{i}') for i in range(3)],
                )
                for node_id in node_ids
            ]
            for state in states[1:]:
                self.assertEqual(state, states[0], msg=f"run {run}")

    def test_bootstrap_during_writes(self):
        self.share('kg', 'edge-1')
        stop = threading.Event()

        def write():
            i = 0
            while not stop.is_set():
                self.cluster['edge-1'].guarded.put('kg', f'k{i % 20:02d}', str(i).encode())
                i += 1
                time.sleep(0.001)

        writer = threading.Thread(target=write)
        writer.start()
        try:
            time.sleep(0.05)
            self.share('kg', 'edge-2')
            time.sleep(0.05)
        finally:
            stop.set()
            writer.join()

        self.assertTrue(self.cluster.settle())
        self.assertEqual(self.cluster['edge-1'].store.snapshot('kg'), self.cluster['edge-2'].store.snapshot('kg'))

    def test_deletes_replicate(self):
        self.share('kg', 'edge-1', 'edge-2')
        self.cluster['edge-1'].guarded.put('kg', 'k', b'v')
        self.cluster['edge-1'].guarded.delete('kg', 'k')

        self.assertTrue(self.cluster.settle())
        self.assertTrue(self.cluster['edge-2'].store.lookup('kg', 'k').tombstone)

    @override_settings(ENOKI_REPLICATION_RETRY_DELAYS=(0.01, 0.01, 0.01))
    def test_unreachable_peer_drops_update_with_warning(self):
        self.share('kg', 'edge-1')
        replicator = self.cluster['edge-1'].replicator
        replicator.add_peer('kg', 'ghost', closed_port_address())

        with self.assertLogs('apps.replication.replicator', 'WARNING') as logs:
            self.cluster['edge-1'].guarded.put('kg', 'k', b'v')
            self.assertTrue(replicator.wait_idle(5))

        self.assertTrue(any('ghost' in line for line in logs.output))

    def test_bootstrap_from_unreachable_source(self):
        registry = self.cluster.naming.registry
        registry.register_node('ghost', closed_port_address())
        registry.create_keygroup_record('orphan', 'ghost')

        with self.assertLogs('apps.replication.replicator', 'WARNING') as logs:
            with self.assertRaises(UnavailableError):
                self.cluster['edge-1'].replicator.bootstrap_keygroup('orphan', 'ghost')

        self.assertFalse(self.cluster['edge-1'].store.has_keygroup('orphan'))
        self.assertTrue(any('stays registered' in line for line in logs.output))
        self.assertIn('edge-1', registry.lookup_keygroup('orphan').replicas)


class LocalFirstWriteTestCase(TransactionTestCase):
    """Writers never wait for peers, however slow the links to them are."""

    def setUp(self):
        links = [
            {'a': 'edge-1', 'b': 'edge-2', 'rtt_ms': 60},
            {'a': 'edge-1', 'b': 'cloud-1', 'rtt_ms': 100},
        ]
        self.cluster = InProcessCluster(['edge-1', 'edge-2', 'cloud-1'], links=links).start()

    def tearDown(self):
        self.cluster.stop()

    def median_put_us(self, keygroup):
        guarded = self.cluster['edge-1'].guarded
        guarded.put(keygroup, 'warm', b'v')
        samples = []
        for i in range(50):
            started = time.perf_counter()
            guarded.put(keygroup, f'k{i % 5}', b'v' * 64)
            samples.append((time.perf_counter() - started) * 1e6)
        return statistics.median(samples)

    def test_put_latency_ignores_peers(self):
        self.cluster.deploy('edge-1', 'alone', handler='echo')
        for node_id in ('edge-1', 'edge-2', 'cloud-1'):
            self.cluster.deploy(node_id, 'shared', handler='echo')
        self.assertEqual(len(self.cluster['edge-1'].replicator.replica_set('shared').peers), 2)

        alone = self.median_put_us('alone')
        shared = self.median_put_us('shared')

        self.assertLess(abs(shared - alone), 2000)
        self.assertTrue(self.cluster.settle(30))
        self.assertEqual(self.cluster['cloud-1'].store.get_local('shared', 'k4').value, b'v' * 64)

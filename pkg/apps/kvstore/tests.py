"""
Tests for the keygroup storage engine.
"""

import itertools
import random
import threading

from django.test import SimpleTestCase

from core.exceptions import AlreadyExistsError, BadRequestError, NotFoundError
from core.versioning import VersionVector
from .store import ApplyResult, Entry, KeyValueStore


def vv(**counters):
    return VersionVector.of(counters)


class KeygroupLifecycleTestCase(SimpleTestCase):
    def setUp(self):
        self.store = KeyValueStore('A')

    def test_create_keygroup_registers_self_as_replica(self):
        """Test a fresh keygroup is empty and lists the local node"""
        keygroup = self.store.create_keygroup('fn-avg')

        self.assertEqual(len(keygroup), 0)
        self.assertEqual(keygroup.replicas, {'A'})

    def test_create_keygroup_twice(self):
        """Test creating an existing keygroup fails"""
        self.store.create_keygroup('fn-avg')

        with self.assertRaises(AlreadyExistsError):
            self.store.create_keygroup('fn-avg')

    def test_get_from_empty_keygroup(self):
        self.store.create_keygroup('fn-avg')

        with self.assertRaises(NotFoundError):
            self.store.get_local('fn-avg', 'anything')

    def test_operations_on_missing_keygroup(self):
        with self.assertRaises(NotFoundError):
            self.store.put_local('nope', 'k', b'v')
        with self.assertRaises(NotFoundError):
            self.store.scan_local('nope', '', 1)

    def test_invalid_keygroup_name(self):
        with self.assertRaises(BadRequestError):
            self.store.create_keygroup('has space')


class LocalOperationsTestCase(SimpleTestCase):
    def setUp(self):
        self.store = KeyValueStore('A')
        self.store.create_keygroup('g')

    def test_put_fresh_key(self):
        """Test the first write of a key gets version {A:1}"""
        entry = self.store.put_local('g', 'k', b'v')

        self.assertEqual(entry.version, vv(A=1))
        self.assertEqual(entry.writer, 'A')
        self.assertFalse(entry.tombstone)

    def test_put_again_with_base(self):
        self.store.put_local('g', 'k', b'v')
        entry = self.store.put_local('g', 'k', b'w', vv(A=1))

        self.assertEqual(entry.version, vv(A=2))
        self.assertEqual(self.store.get_local('g', 'k').value, b'w')

    def test_put_after_remote_apply_merges_versions(self):
        """Test node B writing after applying A's write yields {A:1,B:1}"""
        store_b = KeyValueStore('B')
        store_b.create_keygroup('g')
        remote = self.store.put_local('g', 'k', b'v')
        store_b.apply_remote('g', remote)

        entry = store_b.put_local('g', 'k', b'w')

        self.assertEqual(entry.version, vv(A=1, B=1))

    def test_version_never_shrinks(self):
        self.store.put_local('g', 'k', b'1', vv(Z=5))
        entry = self.store.put_local('g', 'k', b'2')

        self.assertEqual(entry.version, vv(A=2, Z=5))

    def test_get_absent_key(self):
        with self.assertRaises(NotFoundError):
            self.store.get_local('g', 'missing')

    def test_delete_then_get(self):
        """Test a deleted key reads as absent but keeps its version"""
        self.store.put_local('g', 'k', b'v')
        tombstone = self.store.delete_local('g', 'k')

        self.assertTrue(tombstone.tombstone)
        self.assertEqual(tombstone.version, vv(A=2))
        with self.assertRaises(NotFoundError):
            self.store.get_local('g', 'k')
        self.assertEqual(self.store.lookup('g', 'k').version, vv(A=2))

    def test_delete_absent_key(self):
        with self.assertRaises(NotFoundError):
            self.store.delete_local('g', 'missing')

    def test_delete_twice(self):
        self.store.put_local('g', 'k', b'v')
        self.store.delete_local('g', 'k')

        with self.assertRaises(NotFoundError):
            self.store.delete_local('g', 'k')

    def test_delete_survives_older_remote(self):
        """Test an older remote version never resurrects a deleted key"""
        original = self.store.put_local('g', 'k', b'v')
        self.store.delete_local('g', 'k')

        result = self.store.apply_remote('g', original)

        self.assertEqual(result, ApplyResult.IGNORED)
        with self.assertRaises(NotFoundError):
            self.store.get_local('g', 'k')

    def test_own_writes_visible_from_one_thread(self):
        for i in range(50):
            self.store.put_local('g', 'k', str(i).encode())
            self.assertEqual(self.store.get_local('g', 'k').value, str(i).encode())


class ScanTestCase(SimpleTestCase):
    def setUp(self):
        self.store = KeyValueStore('A')
        self.store.create_keygroup('g')

    def test_scan_prefix(self):
        for key in ('c', 'a', 'b'):
            self.store.put_local('g', key, key.encode())

        keys = [entry.key for entry in self.store.scan_local('g', 'a', 2)]

        self.assertEqual(keys, ['a', 'b'])

    def test_scan_past_end(self):
        self.store.put_local('g', 'a', b'1')

        self.assertEqual(self.store.scan_local('g', 'z', 5), [])

    def test_scan_window_of_sequence_keys(self):
        """Test the moving-average window read over zero-padded keys"""
        for i in range(1, 16):
            self.store.put_local('g', f'v-{i:04d}', str(i).encode())

        keys = [entry.key for entry in self.store.scan_local('g', 'v-0006', 10)]

        self.assertEqual(keys, [f'v-{i:04d}' for i in range(6, 16)])

    def test_scan_skips_tombstones(self):
        for key in ('a', 'b', 'c'):
            self.store.put_local('g', key, b'x')
        self.store.delete_local('g', 'b')

        keys = [entry.key for entry in self.store.scan_local('g', '', 10)]

        self.assertEqual(keys, ['a', 'c'])

    def test_scan_zero_count(self):
        with self.assertRaises(BadRequestError):
            self.store.scan_local('g', '', 0)

    def test_scan_matches_brute_force(self):
        """Test scan against a filter-and-sort over random keys and deletes"""
        rng = random.Random(7)
        live = {}
        for _ in range(300):
            key = ''.join(rng.choice('abcdef') for _ in range(rng.randint(1, 4)))
            if key in live and rng.random() < 0.3:
                self.store.delete_local('g', key)
                del live[key]
            else:
                value = str(rng.random()).encode()
                self.store.put_local('g', key, value)
                live[key] = value

        for _ in range(100):
            start = ''.join(rng.choice('abcdefg') for _ in range(rng.randint(0, 3)))
            count = rng.randint(1, 20)
            expected = sorted(key for key in live if key >= start)[:count]

            result = self.store.scan_local('g', start, count)

            self.assertEqual([entry.key for entry in result], expected)
            self.assertEqual([entry.value for entry in result], [live[key] for key in expected])


class ApplyRemoteTestCase(SimpleTestCase):
    def setUp(self):
        self.store = KeyValueStore('A')
        self.store.create_keygroup('g')

    def entry(self, writer, version, value=b'v', ts=1, tombstone=False):
        return Entry(key='k', value=value, version=version, writer=writer, write_ts=ts, tombstone=tombstone)

    def test_apply_newer(self):
        self.store.apply_remote('g', self.entry('A', vv(A=1), b'old'))

        result = self.store.apply_remote('g', self.entry('A', vv(A=2), b'new'))

        self.assertEqual(result, ApplyResult.APPLIED)
        self.assertEqual(self.store.get_local('g', 'k').value, b'new')

    def test_apply_older(self):
        self.store.apply_remote('g', self.entry('A', vv(A=2), b'new'))

        result = self.store.apply_remote('g', self.entry('A', vv(A=1), b'old'))

        self.assertEqual(result, ApplyResult.IGNORED)
        self.assertEqual(self.store.get_local('g', 'k').value, b'new')

    def test_apply_concurrent_picks_greater_writer(self):
        """Test writer B wins over writer A and the stored version is merged"""
        self.store.apply_remote('g', self.entry('A', vv(A=1), b'from-a'))

        result = self.store.apply_remote('g', self.entry('B', vv(B=1), b'from-b'))

        self.assertEqual(result, ApplyResult.CONFLICT_RESOLVED)
        stored = self.store.get_local('g', 'k')
        self.assertEqual(stored.writer, 'B')
        self.assertEqual(stored.value, b'from-b')
        self.assertEqual(stored.version, vv(A=1, B=1))

    def test_apply_concurrent_keeps_local_winner(self):
        self.store.apply_remote('g', self.entry('B', vv(B=1), b'from-b'))

        self.store.apply_remote('g', self.entry('A', vv(A=1), b'from-a'))

        stored = self.store.get_local('g', 'k')
        self.assertEqual(stored.value, b'from-b')
        self.assertEqual(stored.version, vv(A=1, B=1))

    def test_apply_is_idempotent(self):
        update = self.entry('B', vv(A=1, B=2), b'x')
        self.store.apply_remote('g', update)
        before = self.store.snapshot('g')

        result = self.store.apply_remote('g', update)

        self.assertEqual(result, ApplyResult.IGNORED)
        self.assertEqual(self.store.snapshot('g'), before)

    def test_apply_missing_keygroup(self):
        with self.assertRaises(NotFoundError):
            self.store.apply_remote('nope', self.entry('A', vv(A=1)))

    def test_entry_wire_form(self):
        update = self.entry('B', vv(A=1, B=2), b'\x00bytes', ts=42, tombstone=False)

        self.assertEqual(Entry.from_wire(update.to_wire()), update)

    def test_entry_from_malformed_wire(self):
        with self.assertRaises(BadRequestError):
            Entry.from_wire({'key': 'k'})


def causal_history(rng, writers=('A', 'B', 'C'), length=4):
    """
    Writes on one key where each writer has seen a random subset of the
    earlier writes, as happens when fan-out races with local writes.
    """
    replicas = {}
    for writer in writers:
        replicas[writer] = KeyValueStore(writer)
        replicas[writer].create_keygroup('g')
    history = []
    for i in range(length):
        writer = rng.choice(writers)
        store = replicas[writer]
        for update in history:
            if rng.random() < 0.5:
                store.apply_remote('g', update)
        current = store.lookup('g', 'x')
        if current is not None and not current.tombstone and rng.random() < 0.2:
            history.append(store.delete_local('g', 'x'))
        else:
            history.append(store.put_local('g', 'x', f'{writer}{i}'.encode()))
    return history


class ConvergenceTestCase(SimpleTestCase):
    """Replicas that apply the same updates in any order end identical."""

    def updates(self):
        # Writes from three nodes on two keys, with both causal chains and concurrency
        a1 = Entry('x', b'a1', vv(A=1), 'A', 10)
        a2 = Entry('x', b'a2', vv(A=2), 'A', 20)
        b1 = Entry('x', b'b1', vv(A=1, B=1), 'B', 15)
        c1 = Entry('x', b'', vv(C=1), 'C', 12, tombstone=True)
        b2 = Entry('y', b'b2', vv(B=1), 'B', 11)
        a3 = Entry('y', b'a3', vv(A=1), 'A', 13)
        return [a1, a2, b1, c1, b2, a3]

    def final_state(self, order):
        store = KeyValueStore('R')
        store.create_keygroup('g')
        for update in order:
            store.apply_remote('g', update)
        return [store.lookup('g', key) for key in ('x', 'y')], store.snapshot('g')

    def test_all_permutations_converge(self):
        updates = self.updates()
        reference = self.final_state(updates)

        for order in itertools.permutations(updates):
            self.assertEqual(self.final_state(order), reference)

    def test_dominated_value_never_wins_a_later_tie(self):
        """Test a write superseded on its own writer cannot resurface through a concurrent one"""
        c0 = Entry('x', b'C0', vv(C=1), 'C', 10)
        a1 = Entry('x', b'A1', vv(A=1, C=1), 'A', 20)
        b2 = Entry('x', b'B2', vv(B=1), 'B', 15)

        for order in itertools.permutations([c0, a1, b2]):
            (visible, _), siblings = self.final_state(order)
            self.assertEqual(visible.value, b'B2')
            self.assertEqual(visible.version, vv(A=1, B=1, C=1))
            self.assertEqual([entry.value for entry in siblings], [b'A1', b'B2'])

    def test_local_write_collapses_siblings(self):
        store = KeyValueStore('A')
        store.create_keygroup('g')
        store.apply_remote('g', Entry('x', b'b', vv(B=1), 'B', 10))
        store.apply_remote('g', Entry('x', b'c', vv(C=1), 'C', 11))
        self.assertEqual(len(store.keygroup('g').siblings('x')), 2)

        entry = store.put_local('g', 'x', b'a')

        self.assertEqual(entry.version, vv(A=1, B=1, C=1))
        self.assertEqual(store.keygroup('g').siblings('x'), [entry])

    def test_generated_histories_converge_in_every_order(self):
        rng = random.Random(11)

        for _ in range(300):
            history = causal_history(rng, length=rng.randint(2, 5))
            reference = self.final_state(history)
            for order in itertools.permutations(history):
                self.assertEqual(self.final_state(order), reference, msg=f"history {history}")

    def test_duplicates_do_not_change_converged_state(self):
        updates = self.updates()
        reference = self.final_state(updates)
        rng = random.Random(3)

        for _ in range(200):
            order = updates + [rng.choice(updates) for _ in range(4)]
            rng.shuffle(order)
            self.assertEqual(self.final_state(order), reference)


class ReplicaInterleavingTestCase(SimpleTestCase):
    """Writers on every replica with fan-out delivered in random order."""

    KEYS = ('k0', 'k1', 'k2')

    def run_cluster(self, rng, node_ids):
        stores = {}
        for node_id in node_ids:
            stores[node_id] = KeyValueStore(node_id)
            stores[node_id].create_keygroup('g')
        in_transit = []

        for _ in range(rng.randint(5, 25)):
            if in_transit and rng.random() < 0.4:
                target, update = in_transit.pop(rng.randrange(len(in_transit)))
                stores[target].apply_remote('g', update)
                continue
            writer = rng.choice(node_ids)
            key = rng.choice(self.KEYS)
            current = stores[writer].lookup('g', key)
            if current is not None and not current.tombstone and rng.random() < 0.2:
                update = stores[writer].delete_local('g', key)
            else:
                update = stores[writer].put_local('g', key, f'{writer}-{rng.random()}'.encode())
            in_transit.extend((peer, update) for peer in node_ids if peer != writer)

        rng.shuffle(in_transit)
        for target, update in in_transit:
            stores[target].apply_remote('g', update)
        return stores

    def state(self, store):
        return [store.lookup('g', key) for key in self.KEYS], store.snapshot('g')

    def test_two_replicas_converge(self):
        rng = random.Random(21)
        for _ in range(150):
            stores = self.run_cluster(rng, ['A', 'B'])
            self.assertEqual(self.state(stores['A']), self.state(stores['B']))

    def test_three_replicas_converge(self):
        rng = random.Random(22)
        for _ in range(150):
            stores = self.run_cluster(rng, ['A', 'B', 'C'])
            reference = self.state(stores['A'])
            self.assertEqual(self.state(stores['B']), reference)
            self.assertEqual(self.state(stores['C']), reference)


class ConcurrentAccessTestCase(SimpleTestCase):
    def test_parallel_writers_never_lose_increments(self):
        """Test read-modify-write per key is atomic under contention"""
        store = KeyValueStore('A')
        store.create_keygroup('g')

        def writer():
            for _ in range(200):
                store.put_local('g', 'k', b'x')

        threads = [threading.Thread(target=writer) for _ in range(8)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        self.assertEqual(store.get_local('g', 'k').version, vv(A=1600))

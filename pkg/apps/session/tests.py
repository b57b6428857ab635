"""
Tests for session guarantees and staleness probes.
"""

import heapq
import itertools
import random
import threading
import time

from django.test import SimpleTestCase, override_settings

from apps.kvstore.store import KeyValueStore
from core.exceptions import BadRequestError, NotFoundError, OperationTimeoutError
from .sessions import GuardedStore, Session, SessionKV, SessionService
from .staleness import (
    StalenessProbeLog,
    compute_staleness,
    decode_probe,
    encode_probe,
    record_probe_read,
    record_probe_write,
)


class DelayedLink:
    """Stands in for a replicator: applies writes at the other replica after a random delay."""

    def __init__(self, target: KeyValueStore, rng: random.Random, max_delay_s: float = 0.003):
        self.target = target
        self.rng = rng
        self.max_delay_s = max_delay_s
        self._heap = []
        self._counter = itertools.count()
        self._condition = threading.Condition()
        self._stopped = False
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def propagate(self, keygroup, entry):
        with self._condition:
            due = time.monotonic() + self.rng.uniform(0, self.max_delay_s)
            heapq.heappush(self._heap, (due, next(self._counter), keygroup, entry))
            self._condition.notify()
        return {}

    def _run(self):
        while True:
            with self._condition:
                while not self._stopped and not self._heap:
                    self._condition.wait()
                if self._stopped:
                    return
                due, _, keygroup, entry = self._heap[0]
                wait = due - time.monotonic()
                if wait > 0:
                    self._condition.wait(wait)
                    continue
                heapq.heappop(self._heap)
            self.target.apply_remote(keygroup, entry)

    def stop(self):
        with self._condition:
            self._stopped = True
            self._condition.notify()


def replica_pair():
    a, b = KeyValueStore('A'), KeyValueStore('B')
    a.create_keygroup('kg')
    b.create_keygroup('kg')
    return a, b


class GuardedReadTestCase(SimpleTestCase):
    def setUp(self):
        self.a, self.b = replica_pair()

    def test_read_without_floor_is_immediate(self):
        self.assertIsNone(GuardedStore(self.b).get('kg', 'k'))

    @override_settings(ENOKI_SESSION_RETRY_MS=1)
    def test_read_waits_for_replication(self):
        written = self.a.put_local('kg', 'k', b'v')
        threading.Timer(0.05, self.b.apply_remote, args=('kg', written)).start()

        entry = GuardedStore(self.b).get('kg', 'k', written.version)

        self.assertEqual(entry.value, b'v')

    @override_settings(ENOKI_SESSION_TIMEOUT_S=0.1)
    def test_read_times_out_when_replica_stays_behind(self):
        written = self.a.put_local('kg', 'k', b'v')

        with self.assertRaises(OperationTimeoutError):
            GuardedStore(self.b).get('kg', 'k', written.version)

    @override_settings(ENOKI_SESSION_TIMEOUT_S=0.1)
    def test_concurrent_version_does_not_satisfy_floor(self):
        written = self.a.put_local('kg', 'k', b'from-a')
        self.b.put_local('kg', 'k', b'from-b')

        with self.assertRaises(OperationTimeoutError):
            GuardedStore(self.b).get('kg', 'k', written.version)

    @override_settings(ENOKI_SESSION_RETRY_MS=1)
    def test_scan_waits_for_keys_missing_from_window(self):
        first = self.a.put_local('kg', 'v-000001', b'1')
        second = self.a.put_local('kg', 'v-000002', b'2')
        self.b.apply_remote('kg', first)
        threading.Timer(0.05, self.b.apply_remote, args=('kg', second)).start()
        floors = {'v-000001': first.version, 'v-000002': second.version}

        entries = GuardedStore(self.b).scan('kg', 'v-', 10, floors)

        self.assertEqual([entry.value for entry in entries], [b'1', b'2'])

    def test_scan_ignores_floors_outside_window(self):
        far = self.a.put_local('kg', 'z', b'far')
        self.b.put_local('kg', 'a', b'near')

        entries = GuardedStore(self.b).scan('kg', 'a', 1, {'z': far.version})

        self.assertEqual([entry.key for entry in entries], ['a'])

    def test_scan_zero_count(self):
        with self.assertRaises(BadRequestError):
            GuardedStore(self.b).scan('kg', '', 0)


class SessionKVTestCase(SimpleTestCase):
    def setUp(self):
        self.store = KeyValueStore('A')
        self.store.create_keygroup('kg')
        self.kv = SessionKV(GuardedStore(self.store), Session(keygroup='kg'))

    def test_get_default(self):
        self.assertEqual(self.kv.get('current', b''), b'')
        with self.assertRaises(NotFoundError):
            self.kv.get('current')

    def test_set_accepts_text(self):
        self.kv.set('k', 'héllo')
        self.assertEqual(self.kv.get('k'), 'héllo'.encode('utf-8'))

    def test_set_rejects_other_types(self):
        with self.assertRaises(BadRequestError):
            self.kv.set('k', 42)

    def test_delete_then_default(self):
        self.kv.set('k', b'v')
        self.kv.delete('k')

        self.assertIsNone(self.kv.get('k', None))

    def test_scan_pairs(self):
        for i in range(3):
            self.kv.set(f'v-{i:06d}', str(i))

        self.assertEqual(self.kv.scan('v-000001', 5), [('v-000001', b'1'), ('v-000002', b'2')])

    def test_writes_raise_high_water(self):
        self.kv.set('k', b'1')
        self.kv.set('k', b'2')

        self.assertEqual(self.kv.session.floor('k').get('A'), 2)


class SessionGuaranteesTestCase(SimpleTestCase):
    SESSIONS = 1000

    @override_settings(ENOKI_SESSION_RETRY_MS=1, ENOKI_SESSION_TIMEOUT_S=2.0)
    def test_read_your_writes_and_monotonic_reads_across_replicas(self):
        rng = random.Random(7)
        a, b = replica_pair()
        to_b, to_a = DelayedLink(b, rng), DelayedLink(a, rng)
        replicas = [GuardedStore(a, to_b), GuardedStore(b, to_a)]
        try:
            for i in range(self.SESSIONS):
                session = Session(keygroup='kg')
                writer = rng.randrange(2)
                key = f'k-{i % 10}'
                value = f'{i}'.encode()

                written = replicas[writer].put('kg', key, value, session.floor(key))
                session.observe(written)

                first = replicas[1 - writer].get('kg', key, session.floor(key))
                self.assertTrue(first.version.covers(written.version), f"session {i} lost its write")
                session.observe(first)

                second = replicas[writer].get('kg', key, session.floor(key))
                self.assertTrue(second.version.covers(first.version), f"session {i} read went backwards")
        finally:
            to_b.stop()
            to_a.stop()


class SessionServiceTestCase(SimpleTestCase):
    def setUp(self):
        self.store = KeyValueStore('A')
        self.store.create_keygroup('kg')
        self.service = SessionService(GuardedStore(self.store))

    def test_set_then_get(self):
        reply = self.service.handle_set({'keygroup': 'kg', 'key': 'k', 'value': b'v', 'base': ''})

        got = self.service.handle_get({'keygroup': 'kg', 'key': 'k', 'floor': reply['entry']['version']})

        self.assertEqual(got['entry']['value'], b'v')

    def test_get_absent_key(self):
        self.assertEqual(self.service.handle_get({'keygroup': 'kg', 'key': 'k'}), {'entry': None})

    def test_set_needs_binary(self):
        with self.assertRaises(BadRequestError):
            self.service.handle_set({'keygroup': 'kg', 'key': 'k', 'value': 'text'})

    def test_scan_count_must_be_integer(self):
        with self.assertRaises(BadRequestError):
            self.service.handle_scan({'keygroup': 'kg', 'start': '', 'count': 'many'})

    def test_raw_get_absent(self):
        with self.assertRaises(NotFoundError):
            self.service.handle_raw_get({'keygroup': 'kg', 'key': 'item'})


class StalenessTestCase(SimpleTestCase):
    def test_superseded_read(self):
        log = StalenessProbeLog()
        for seq, ts in ((4, 500), (5, 1000)):
            record_probe_write(log, seq, ts)
        record_probe_read(log, read_ts=1800, observed_seq=4)

        self.assertEqual(compute_staleness(log), [800])

    def test_fresh_read(self):
        log = StalenessProbeLog()
        record_probe_write(log, 1, 100)
        record_probe_read(log, read_ts=150, observed_seq=1)

        self.assertEqual(compute_staleness(log), [])

    def test_read_issued_before_next_ack(self):
        log = StalenessProbeLog()
        record_probe_write(log, 1, 100)
        record_probe_write(log, 2, 300)
        record_probe_read(log, read_ts=250, observed_seq=1)

        self.assertEqual(compute_staleness(log), [])

    def test_client_observed_uses_completion_time(self):
        log = StalenessProbeLog()
        record_probe_write(log, 1, 100)
        record_probe_write(log, 2, 300)
        record_probe_read(log, read_ts=250, observed_seq=1, completed_ts=320)

        self.assertEqual(compute_staleness(log), [])
        self.assertEqual(compute_staleness(log, observed=True), [20])

    def test_nothing_written_yet(self):
        log = StalenessProbeLog()
        record_probe_read(log, read_ts=10, observed_seq=0)
        record_probe_write(log, 1, 20)
        record_probe_read(log, read_ts=30, observed_seq=0)

        self.assertEqual(compute_staleness(log), [10])

    def test_sequence_must_increase(self):
        log = StalenessProbeLog()
        record_probe_write(log, 2, 100)

        with self.assertRaises(BadRequestError):
            record_probe_write(log, 2, 200)
        with self.assertRaises(BadRequestError):
            record_probe_write(log, 3, 50)

    def test_unknown_observed_sequence(self):
        log = StalenessProbeLog()
        record_probe_write(log, 1, 100)
        record_probe_read(log, read_ts=200, observed_seq=9)

        with self.assertRaises(BadRequestError):
            compute_staleness(log)

    def test_staleness_is_never_negative(self):
        rng = random.Random(11)
        for _ in range(1000):
            log = StalenessProbeLog()
            ts = 0
            for seq in range(1, 20):
                ts += rng.randint(0, 200)
                record_probe_write(log, seq, ts)
            for _ in range(20):
                record_probe_read(log, read_ts=rng.randint(0, ts + 100), observed_seq=rng.randint(0, 19))

            self.assertTrue(all(duration >= 0 for duration in compute_staleness(log)))

    def test_probe_payload(self):
        self.assertEqual(decode_probe(encode_probe(12, 3456)), (12, 3456))
        with self.assertRaises(BadRequestError):
            decode_probe(b'garbage')

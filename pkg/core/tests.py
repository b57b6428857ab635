"""
Tests for version vectors, the process clock and the error taxonomy.
"""

import random

from django.test import SimpleTestCase

from .clock import HybridClock
from .exceptions import (
    BadRequestError,
    EnokiError,
    InternalError,
    NotFoundError,
    OperationTimeoutError,
)
from .utils import parse_address, validate_name, validate_node_id
from .versioning import EMPTY, Ordering, VersionVector, vv_compare, vv_increment, vv_merge

NODES = ('A', 'B', 'C', 'D')


def random_vector(rng):
    return VersionVector.of({node: rng.randint(0, 3) for node in NODES if rng.random() < 0.7})


class VersionVectorExamplesTestCase(SimpleTestCase):
    def test_compare_examples(self):
        self.assertEqual(vv_compare(VersionVector.of({'A': 1}), VersionVector.of({'A': 2})), Ordering.BEFORE)
        self.assertEqual(vv_compare(VersionVector.of({'A': 1}), VersionVector.of({'A': 1})), Ordering.EQUAL)
        self.assertEqual(
            vv_compare(VersionVector.of({'A': 1, 'B': 0}), VersionVector.of({'A': 0, 'B': 1})),
            Ordering.CONCURRENT,
        )

    def test_merge_examples(self):
        self.assertEqual(vv_merge(VersionVector.of({'A': 2}), VersionVector.of({'B': 3})),
                         VersionVector.of({'A': 2, 'B': 3}))
        self.assertEqual(vv_merge(VersionVector.of({'A': 2}), VersionVector.of({'A': 1})),
                         VersionVector.of({'A': 2}))
        x = VersionVector.of({'A': 4, 'C': 1})
        self.assertEqual(vv_merge(x, EMPTY), x)

    def test_increment_examples(self):
        self.assertEqual(vv_increment(EMPTY, 'A'), VersionVector.of({'A': 1}))
        self.assertEqual(vv_increment(VersionVector.of({'A': 1}), 'A'), VersionVector.of({'A': 2}))
        self.assertEqual(vv_increment(VersionVector.of({'A': 1}), 'B'), VersionVector.of({'A': 1, 'B': 1}))

    def test_zero_counters_are_dropped(self):
        self.assertEqual(VersionVector.of({'A': 0, 'B': 2}).counters, (('B', 2),))

    def test_negative_counter(self):
        with self.assertRaises(BadRequestError):
            VersionVector.of({'A': -1})

    def test_text_encoding_is_sorted(self):
        vector = VersionVector.of({'B': 3, 'A': 2})

        self.assertEqual(vector.encode(), 'A:2,B:3')
        self.assertEqual(VersionVector.parse('A:2,B:3'), vector)
        self.assertEqual(VersionVector.parse(''), EMPTY)

    def test_parse_malformed(self):
        for text in ('A', 'A:x', ':1', 'A:1,,B:2'):
            with self.assertRaises(BadRequestError, msg=text):
                VersionVector.parse(text)

    def test_node_ids_with_hyphens_round_trip(self):
        vector = VersionVector.of({'edge-1': 2, 'cloud-1': 1})
        self.assertEqual(VersionVector.parse(vector.encode()), vector)


class VersionVectorPropertiesTestCase(SimpleTestCase):
    CASES = 10_000

    def setUp(self):
        self.rng = random.Random(20231)

    def test_merge_algebra(self):
        for _ in range(self.CASES):
            a, b, c = (random_vector(self.rng) for _ in range(3))

            self.assertEqual(vv_merge(a, b), vv_merge(b, a))
            self.assertEqual(vv_merge(vv_merge(a, b), c), vv_merge(a, vv_merge(b, c)))
            self.assertEqual(vv_merge(a, a), a)
            self.assertEqual(vv_merge(a, EMPTY), a)

    def test_compare_is_antisymmetric(self):
        mirrored = {
            Ordering.BEFORE: Ordering.AFTER,
            Ordering.AFTER: Ordering.BEFORE,
            Ordering.EQUAL: Ordering.EQUAL,
            Ordering.CONCURRENT: Ordering.CONCURRENT,
        }
        for _ in range(self.CASES):
            a, b = random_vector(self.rng), random_vector(self.rng)

            ordering = vv_compare(a, b)

            self.assertEqual(vv_compare(b, a), mirrored[ordering])
            self.assertEqual(ordering == Ordering.EQUAL, a.as_dict() == b.as_dict())

    def test_merge_dominates_inputs(self):
        for _ in range(self.CASES):
            a, b = random_vector(self.rng), random_vector(self.rng)
            merged = vv_merge(a, b)

            self.assertIn(vv_compare(merged, a), (Ordering.AFTER, Ordering.EQUAL))
            self.assertTrue(merged.covers(b))

    def test_increment_is_strictly_after(self):
        for _ in range(self.CASES):
            a = random_vector(self.rng)
            node = self.rng.choice(NODES)

            bumped = vv_increment(a, node)

            self.assertEqual(vv_compare(bumped, a), Ordering.AFTER)
            self.assertEqual(bumped.get(node), a.get(node) + 1)


class HybridClockTestCase(SimpleTestCase):
    def test_non_decreasing(self):
        clock = HybridClock()
        last = clock.now_us()

        for _ in range(1_000_000):
            reading = clock.now_us()
            self.assertGreaterEqual(reading, last)
            last = reading

    def test_looks_like_wall_time(self):
        # after 2020-01-01 in microseconds
        self.assertGreater(HybridClock().now_us(), 1_577_836_800_000_000)


class ErrorTaxonomyTestCase(SimpleTestCase):
    def test_wire_round_trip_keeps_kind(self):
        error = EnokiError.from_wire(NotFoundError('key k').to_wire())

        self.assertIsInstance(error, NotFoundError)
        self.assertEqual(error.detail, 'key k')

    def test_timeout_kind(self):
        self.assertEqual(OperationTimeoutError().kind, 'Timeout')

    def test_unknown_kind_becomes_internal(self):
        self.assertIsInstance(EnokiError.from_wire({'kind': 'Weird', 'detail': 'x'}), InternalError)
        self.assertIsInstance(EnokiError.from_wire(None), InternalError)


class ValidationTestCase(SimpleTestCase):
    def test_node_ids(self):
        self.assertEqual(validate_node_id('edge-1'), 'edge-1')
        for bad in ('', 'edge_1', 'a b', 'é'):
            with self.assertRaises(BadRequestError):
                validate_node_id(bad)

    def test_names(self):
        self.assertEqual(validate_name('movavg.v2'), 'movavg.v2')
        with self.assertRaises(BadRequestError):
            validate_name('has space')

    def test_addresses(self):
        self.assertEqual(parse_address('127.0.0.1:7101'), ('127.0.0.1', 7101))
        for bad in ('', '127.0.0.1', ':80', 'host:x', 'host:70000'):
            with self.assertRaises(BadRequestError):
                parse_address(bad)

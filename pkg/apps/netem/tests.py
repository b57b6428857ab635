"""
Tests for link emulation, framing and the shaped RPC transport.
"""

import io
import json
import socket
import statistics
import time

from django.test import SimpleTestCase, override_settings

from core.exceptions import BadRequestError, NotFoundError, OperationTimeoutError, UnavailableError
from .framing import HEADER, UNLISTED_SENDER, decode_payload, encode_payload, pack_frame, read_frame
from .rpc import RpcClientPool, RpcServer
from .shaper import DirectionShaper, Netem, TokenBucket, delivery_delay
from .topology import LinkProfile, Topology


def two_node_topology(rtt_ms=0, mbps=0):
    return Topology.from_dict({
        'nodes': [
            {'id': 'client', 'role': 'client', 'addr': '127.0.0.1:0'},
            {'id': 'edge-1', 'role': 'edge', 'addr': '127.0.0.1:0'},
        ],
        'links': [{'a': 'client', 'b': 'edge-1', 'rtt_ms': rtt_ms, 'mbps': mbps}],
    })


class DeliveryDelayTestCase(SimpleTestCase):
    def test_latency_only(self):
        link = LinkProfile.from_mbps('a', 'b', rtt_ms=50, mbps=0)

        self.assertAlmostEqual(delivery_delay(link, 10_000_000), 0.025)

    def test_latency_plus_serialization(self):
        """Test 1 MB over 100 Mb/s with 50 ms RTT takes 105 ms"""
        link = LinkProfile.from_mbps('a', 'b', rtt_ms=50, mbps=100)

        self.assertAlmostEqual(delivery_delay(link, 1_000_000), 0.105)

    def test_zero_size_frame(self):
        link = LinkProfile.from_mbps('a', 'b', rtt_ms=20, mbps=100)

        self.assertAlmostEqual(delivery_delay(link, 0), 0.010)


class ShapingTestCase(SimpleTestCase):
    def test_bucket_allows_debt(self):
        bucket = TokenBucket(capacity_bytes=64 * 1024, rate_bytes_per_s=12_500_000, now=0.0)

        first = bucket.reserve(1_000_000, now=0.0)
        second = bucket.reserve(1_000_000, now=0.0)

        self.assertEqual(first, 0.0)
        self.assertAlmostEqual(second, (1_000_000 - 64 * 1024) / 12_500_000)

    def test_bucket_refills_to_capacity(self):
        bucket = TokenBucket(capacity_bytes=1000, rate_bytes_per_s=1000, now=0.0)
        bucket.reserve(1000, now=0.0)

        self.assertEqual(bucket.reserve(1000, now=100.0), 100.0)
        self.assertEqual(bucket.tokens, 0.0)

    def test_sustained_stream_converges_to_cap(self):
        """Test back-to-back 1 MB frames on a 100 Mb/s link deliver about 12.5 MB/s"""
        shaper = DirectionShaper(LinkProfile.from_mbps('a', 'b', rtt_ms=0, mbps=100), 64 * 1024)
        frames = 375  # 30 s worth at the cap

        last = 0.0
        for _ in range(frames):
            last = shaper.schedule(1_000_000, now=0.0)

        goodput = frames * 1_000_000 / last
        self.assertLessEqual(goodput, 12_500_000 * 1.1)
        self.assertGreaterEqual(goodput, 12_500_000 * 0.9)

    def test_delivery_is_fifo(self):
        shaper = DirectionShaper(LinkProfile.from_mbps('a', 'b', rtt_ms=10, mbps=1), 64 * 1024)

        big = shaper.schedule(500_000, now=0.0)
        small = shaper.schedule(0, now=0.0)

        self.assertGreaterEqual(small, big)

    def test_unlisted_pair_uses_default(self):
        topology = Topology.from_dict({
            'nodes': [
                {'id': 'a', 'addr': '127.0.0.1:1'},
                {'id': 'b', 'addr': '127.0.0.1:2'},
                {'id': 'c', 'addr': '127.0.0.1:3'},
            ],
            'links': [{'a': 'a', 'b': 'b', 'rtt_ms': 50, 'mbps': 100}],
            'default': {'rtt_ms': 7, 'mbps': 0},
        })

        self.assertEqual(topology.profile('b', 'a').rtt_ms, 50)
        self.assertEqual(topology.profile('a', 'c').rtt_ms, 7)
        self.assertTrue(topology.profile('a', 'c').unlimited)
        self.assertEqual(Netem(topology, 'c').profile_to('unknown').rtt_ms, 7)


class TopologyTestCase(SimpleTestCase):
    def test_sender_index_follows_declaration_order(self):
        topology = two_node_topology()

        self.assertEqual(topology.index_of('client'), 0)
        self.assertEqual(topology.index_of('edge-1'), 1)
        self.assertIsNone(topology.node_at(5))

    def test_invalid_role(self):
        with self.assertRaises(BadRequestError):
            Topology.from_dict({'nodes': [{'id': 'x', 'role': 'fog', 'addr': '127.0.0.1:1'}]})

    def test_link_to_unknown_node(self):
        with self.assertRaises(BadRequestError):
            Topology.from_dict({
                'nodes': [{'id': 'x', 'addr': '127.0.0.1:1'}],
                'links': [{'a': 'x', 'b': 'y', 'rtt_ms': 1}],
            })

    def test_duplicate_node(self):
        with self.assertRaises(BadRequestError):
            Topology.from_dict({'nodes': [
                {'id': 'x', 'addr': '127.0.0.1:1'},
                {'id': 'x', 'addr': '127.0.0.1:2'},
            ]})

    def test_dict_form_reloads(self):
        topology = two_node_topology(rtt_ms=20, mbps=100)

        again = Topology.from_dict(json.loads(json.dumps(topology.to_dict())))

        self.assertEqual(again.profile('client', 'edge-1'), topology.profile('client', 'edge-1'))


class FramingTestCase(SimpleTestCase):
    def test_binary_values_travel_as_raw_trailer(self):
        payload = encode_payload({'type': 'Update', 'value': b'\x00\x01\n\xff', 'nested': [{'v': b'xy'}]})

        head, _, tail = payload.partition(b'\n')
        self.assertEqual(tail, b'\x00\x01\n\xffxy')
        self.assertEqual(json.loads(head)['$blobs'], [4, 2])
        self.assertEqual(
            decode_payload(payload),
            {'type': 'Update', 'value': b'\x00\x01\n\xff', 'nested': [{'v': b'xy'}]},
        )

    def test_header_layout(self):
        frame = pack_frame({'type': 'Ping'}, sender_index=3)

        length, index = HEADER.unpack(frame[:8])
        self.assertEqual(length, len(frame) - 8)
        self.assertEqual(index, 3)

    def test_unlisted_sender(self):
        frame = pack_frame({'type': 'Ping'}, sender_index=None)

        self.assertEqual(HEADER.unpack(frame[:8])[1], UNLISTED_SENDER)
        self.assertEqual(read_frame(io.BytesIO(frame))[0], None)

    def test_truncated_frame(self):
        frame = pack_frame({'type': 'Ping'}, sender_index=0)

        with self.assertRaises(ConnectionError):
            read_frame(io.BytesIO(frame[:-2]))

    def test_malformed_json(self):
        with self.assertRaises(BadRequestError):
            decode_payload(b'{not json')

    def test_blob_table_mismatch(self):
        with self.assertRaises(BadRequestError):
            decode_payload(b'{"type":"x","$blobs":[5]}\nabc')


def echo_dispatch(message, sender):
    if message['type'] == 'Echo':
        return {'value': message.get('value'), 'sender': sender}
    if message['type'] == 'Missing':
        raise NotFoundError('nothing here')
    if message['type'] == 'Explode':
        raise RuntimeError('boom')
    raise BadRequestError(f"unknown message type {message['type']}")


class RpcTestCase(SimpleTestCase):
    def start(self, rtt_ms=0, mbps=0):
        topology = two_node_topology(rtt_ms, mbps)
        self.server = RpcServer('127.0.0.1:0', echo_dispatch, Netem(topology, 'edge-1'), name='test')
        self.server.start()
        self.addCleanup(self.server.stop)
        self.pool = RpcClientPool(Netem(topology, 'client'))
        self.addCleanup(self.pool.close)

    def test_round_trip_with_sender_identity(self):
        self.start()

        result = self.pool.call(self.server.address, {'type': 'Echo', 'value': b'payload'}, peer_id='edge-1')

        self.assertEqual(result, {'value': b'payload', 'sender': 'client'})

    def test_errors_keep_their_kind(self):
        self.start()

        with self.assertRaises(NotFoundError):
            self.pool.call(self.server.address, {'type': 'Missing'}, peer_id='edge-1')
        with self.assertRaises(BadRequestError):
            self.pool.call(self.server.address, {'type': 'Nope'}, peer_id='edge-1')

    def test_unexpected_exception_is_internal(self):
        self.start()

        with self.assertRaisesMessage(Exception, 'boom') as caught:
            self.pool.call(self.server.address, {'type': 'Explode'}, peer_id='edge-1')
        self.assertEqual(caught.exception.kind, 'Internal')

    def test_malformed_json_keeps_connection(self):
        """Test a bad payload gets an ERR reply and the connection stays usable"""
        self.start()
        host, port = self.server.address.rsplit(':', 1)

        with socket.create_connection((host, int(port))) as sock:
            stream = sock.makefile('rb')
            sock.sendall(HEADER.pack(9, UNLISTED_SENDER) + b'{not json')
            _, payload = read_frame(stream)
            reply = decode_payload(payload)
            self.assertEqual(reply['type'], 'ERR')
            self.assertEqual(reply['error']['kind'], 'BadRequest')

            sock.sendall(pack_frame({'type': 'Echo', 'id': 7, 'value': 'again'}, None))
            _, payload = read_frame(stream)
            reply = decode_payload(payload)
            self.assertEqual(reply['id'], 7)
            self.assertEqual(reply['result']['value'], 'again')
            stream.close()

    def test_unreachable_destination(self):
        topology = two_node_topology()
        pool = RpcClientPool(Netem(topology, 'client'))
        unused = socket.socket()
        unused.bind(('127.0.0.1', 0))
        port = unused.getsockname()[1]
        unused.close()

        with self.assertRaises(UnavailableError):
            pool.call(f'127.0.0.1:{port}', {'type': 'Echo'})

    def test_latency_is_emulated_both_ways(self):
        """Test a zero-payload round trip takes one RTT, half of it each way"""
        self.start(rtt_ms=40)
        self.pool.call(self.server.address, {'type': 'Echo'}, peer_id='edge-1')

        samples = []
        for _ in range(10):
            started = time.monotonic()
            self.pool.call(self.server.address, {'type': 'Echo'}, peer_id='edge-1')
            samples.append(time.monotonic() - started)

        self.assertGreaterEqual(min(samples), 0.040)
        self.assertLess(statistics.median(samples), 0.040 + 0.002)

    def test_replies_arrive_in_order_per_connection(self):
        self.start(rtt_ms=4)
        results = [
            self.pool.call(self.server.address, {'type': 'Echo', 'value': i}, peer_id='edge-1')['value']
            for i in range(20)
        ]

        self.assertEqual(results, list(range(20)))

    @override_settings(ENOKI_RPC_TIMEOUT_S=0.05)
    def test_server_gone_fails_pending_calls(self):
        self.start()
        self.pool.call(self.server.address, {'type': 'Echo'}, peer_id='edge-1')
        address = self.server.address
        self.server.stop()

        with self.assertRaises((UnavailableError, OperationTimeoutError)):
            self.pool.call(address, {'type': 'Echo'}, peer_id='edge-1')

"""
Tests for the node daemon: HTTP API, RPC dispatch and multi-node deployment.
"""

import json
import socket
import tempfile
import threading
import time
from pathlib import Path
from types import SimpleNamespace
from unittest import mock

from django.test import SimpleTestCase, TransactionTestCase, override_settings

from apps.kvstore.store import KeyValueStore
from apps.naming.registry import KeygroupInfo
from apps.replication.replicator import Replicator
from apps.runtime.builtins import BUILTINS, Builtin
from apps.runtime.functions import FunctionRuntime
from apps.session.sessions import GuardedStore
from core.exceptions import BadRequestError, NotFoundError, UnavailableError
from .config import load_node_config
from .node import Node, set_node
from .testing import InProcessCluster, cluster_topology


def free_address():
    with socket.socket() as sock:
        sock.bind(('127.0.0.1', 0))
        return f"127.0.0.1:{sock.getsockname()[1]}"


def standalone_node():
    store = KeyValueStore('edge-1')
    replicator = mock.Mock(spec=Replicator)
    replicator.propagate.return_value = {}
    naming = mock.Mock()
    naming.lookup_keygroup.side_effect = NotFoundError('unknown keygroup')
    naming.create_keygroup.side_effect = lambda name, node: KeygroupInfo(name, [node], {node: '127.0.0.1:1'})
    runtime = FunctionRuntime('edge-1', GuardedStore(store, replicator), replicator, naming, pool=mock.Mock())
    return SimpleNamespace(id='edge-1', runtime=runtime)


class NodeApiTestCase(SimpleTestCase):
    def setUp(self):
        self.node = standalone_node()
        set_node(self.node)

    def tearDown(self):
        self.node.runtime.stop(drain_seconds=1)
        set_node(None)

    def put(self, path, payload):
        return self.client.put(path, data=json.dumps(payload), content_type='application/json')

    def invoke(self, path, body):
        return self.client.post(path, data=body, content_type='application/octet-stream')

    def test_health(self):
        response = self.client.get('/health')

        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.content, b'ok')

    def test_deploy_then_invoke(self):
        response = self.put('/functions/echo', {'handler': 'echo'})

        self.assertEqual(response.status_code, 200)
        self.assertTrue(response.json()['created_keygroup'])

        response = self.invoke('/functions/echo', b'hi')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.content, b'hi')

    def test_redeploy_identical_and_conflicting(self):
        self.put('/functions/avg', {'handler': 'movavg'})

        self.assertEqual(self.put('/functions/avg', {'handler': 'movavg'}).status_code, 200)
        self.assertEqual(self.put('/functions/avg', {'handler': 'movavg', 'threads': 2}).status_code, 409)

    def test_deploy_unknown_handler(self):
        response = self.put('/functions/broken', {'handler': 'nope'})

        self.assertEqual(response.status_code, 400)
        self.assertEqual(response.json()['kind'], 'BadRequest')

    def test_deploy_invalid_threads(self):
        response = self.put('/functions/echo', {'handler': 'echo', 'threads': 0})
        self.assertEqual(response.status_code, 400)

    def test_invoke_unknown_function(self):
        response = self.invoke('/functions/ghost', b'')

        self.assertEqual(response.status_code, 404)
        self.assertEqual(response.json()['kind'], 'NotFound')

    def test_handler_error_is_500(self):
        self.put('/functions/readn', {'handler': 'readn'})

        self.assertEqual(self.invoke('/functions/readn', b'10').status_code, 500)

    @override_settings(ENOKI_HANDLER_TIMEOUT_S=0.2)
    def test_handler_timeout_is_504(self):
        release = threading.Event()
        with mock.patch.dict(BUILTINS, {'stuck': Builtin('stuck', 'test', lambda data, ctx: release.wait(5))}):
            self.put('/functions/stuck', {'handler': 'stuck'})

            self.assertEqual(self.invoke('/functions/stuck', b'').status_code, 504)
            release.set()

    def test_async_invoke_is_accepted_before_completion(self):
        release = threading.Event()
        with mock.patch.dict(BUILTINS, {'slow': Builtin('slow', 'test', lambda data, ctx: release.wait(5))}):
            self.put('/functions/slow', {'handler': 'slow'})

            response = self.invoke('/functions/slow/async', b'')

            self.assertEqual(response.status_code, 202)
            self.assertEqual(response.content, b'')
            release.set()

    def test_listings(self):
        self.put('/functions/avg', {'handler': 'movavg', 'keygroup': 'averages'})

        functions = self.client.get('/functions').json()
        builtins = self.client.get('/builtins').json()

        self.assertEqual(functions[0]['keygroup'], 'averages')
        self.assertIn('movavg', [builtin['name'] for builtin in builtins])

    def test_health_without_node_still_answers(self):
        set_node(None)
        self.assertEqual(self.client.get('/health').status_code, 200)
        self.assertEqual(self.client.get('/functions').status_code, 503)


class NodeConfigTestCase(SimpleTestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)
        self.topology_path = Path(self.directory.name) / 'topology.json'
        cluster_topology(['edge-1']).save(self.topology_path)

    def write_config(self, **overrides):
        config = {
            'id': 'edge-1',
            'listen_http': '127.0.0.1:8101',
            'listen_rpc': '127.0.0.1:7101',
            'naming_addr': '127.0.0.1:7000',
            'topology_path': str(self.topology_path),
            'role': 'edge',
        }
        config.update(overrides)
        path = Path(self.directory.name) / 'node.json'
        path.write_text(json.dumps(config))
        return path

    def test_valid_config(self):
        config = load_node_config(self.write_config())
        self.assertEqual(config.id, 'edge-1')

    def test_duplicate_port(self):
        with self.assertRaises(BadRequestError):
            load_node_config(self.write_config(listen_rpc='127.0.0.1:8101'))

    def test_node_missing_from_topology(self):
        with self.assertRaises(BadRequestError):
            load_node_config(self.write_config(id='edge-9'))

    def test_invalid_role(self):
        with self.assertRaises(BadRequestError):
            load_node_config(self.write_config(role='client'))

    def test_unreadable_file(self):
        with self.assertRaises(BadRequestError):
            load_node_config(Path(self.directory.name) / 'missing.json')


class NodeStartupTestCase(SimpleTestCase):
    @override_settings(ENOKI_NAMING_CONNECT_ATTEMPTS=2, ENOKI_NAMING_CONNECT_BACKOFF_S=0.01)
    def test_naming_down(self):
        node = Node('edge-1', cluster_topology(['edge-1']), free_address(), heartbeat=False)

        with self.assertRaises(UnavailableError):
            node.start()
        self.assertFalse(node.started)


class ClusterTestCase(TransactionTestCase):
    def setUp(self):
        self.cluster = InProcessCluster(['edge-1', 'edge-2']).start()

    def tearDown(self):
        self.cluster.stop()

    def test_second_deploy_replicates_state(self):
        first = self.cluster.deploy('edge-1', 'movavg')
        for value in (b'2', b'4'):
            self.cluster.invoke('edge-1', 'movavg', value)

        second = self.cluster.deploy('edge-2', 'movavg')

        self.assertTrue(first.created_keygroup)
        self.assertFalse(second.created_keygroup)
        self.assertEqual(second.replicated_from, 'edge-1')
        self.assertEqual(self.cluster['edge-2'].store.get_local('movavg', 'ptr').value, b'2')
        self.assertEqual(self.cluster.invoke('edge-2', 'movavg', b'6'), b'4.0')

    def test_invocations_never_contact_naming(self):
        self.cluster.deploy('edge-1', 'movavg')
        self.cluster.deploy('edge-2', 'movavg')
        self.cluster.deploy('edge-1', 'rwitem')
        self.cluster.deploy('edge-2', 'rwitem', replicate_from_existing=False)
        before = {node_id: self.cluster[node_id].naming.total_calls for node_id in ('edge-1', 'edge-2')}

        for i in range(1, 21):
            self.cluster.invoke('edge-1' if i % 2 else 'edge-2', 'movavg', str(i).encode())
        self.cluster.invoke('edge-2', 'rwitem', b'w|steady')
        self.cluster.invoke('edge-2', 'rwitem', b'r')
        self.assertTrue(self.cluster.settle())

        after = {node_id: self.cluster[node_id].naming.total_calls for node_id in ('edge-1', 'edge-2')}
        self.assertEqual(after, before)

    def test_remote_store_binding(self):
        self.cluster.deploy('edge-1', 'rwitem')

        result = self.cluster.deploy('edge-2', 'rwitem', replicate_from_existing=False)
        self.cluster.invoke('edge-2', 'rwitem', b'w|remote')

        self.assertEqual(result.kv_node, 'edge-1')
        self.assertFalse(self.cluster['edge-2'].store.has_keygroup('rwitem'))
        self.assertEqual(self.cluster['edge-1'].store.get_local('rwitem', 'item').value, b'remote')
        self.assertEqual(self.cluster.invoke('edge-2', 'rwitem', b'r'), b'remote')

    def test_read_your_writes_through_remote_store(self):
        self.cluster.deploy('edge-1', 'movavg')
        self.cluster.deploy('edge-2', 'movavg', replicate_from_existing=False)

        outputs = [self.cluster.invoke('edge-2', 'movavg', str(i).encode()) for i in range(1, 11)]

        self.assertEqual(outputs[-1], b'5.5')

    def test_nested_call_on_named_node(self):
        for name in ('movementplan', 'lightphasecalculation', 'trafficstatistics'):
            self.cluster.deploy('edge-2', name)
        self.cluster.deploy(
            'edge-1', 'trafficsensorfilter',
            env={'node.movementplan': 'edge-2', 'node.trafficstatistics': 'edge-2'},
        )

        output = self.cluster.invoke('edge-1', 'trafficsensorfilter', b'{"pass": true}')

        self.assertEqual(output, b'pass')
        self.assertEqual(self.cluster['edge-2'].store.get_local('movementplan', 'ptr').value, b'1')
        self.assertFalse(self.cluster['edge-1'].store.has_keygroup('movementplan'))

    def test_update_for_unknown_keygroup(self):
        update = {'type': 'Update', 'keygroup': 'missing',
                  'entry': {'key': 'k', 'value': b'v', 'version': 'edge-1:1', 'writer': 'edge-1', 'write_ts': 1}}

        with self.assertRaises(NotFoundError):
            self.cluster.pool.call(self.cluster['edge-2'].address, update, peer_id='edge-2')

    def test_update_for_known_keygroup(self):
        self.cluster.deploy('edge-2', 'kg', handler='echo')
        update = {'type': 'Update', 'keygroup': 'kg',
                  'entry': {'key': 'k', 'value': b'v', 'version': 'edge-1:1', 'writer': 'edge-1', 'write_ts': 1}}

        result = self.cluster.pool.call(self.cluster['edge-2'].address, update, peer_id='edge-2')

        self.assertEqual(result, {'result': 'Applied'})

    def test_unknown_message_type(self):
        with self.assertRaises(BadRequestError):
            self.cluster.pool.call(self.cluster['edge-1'].address, {'type': 'Gossip'}, peer_id='edge-1')

    def test_async_invoke_over_rpc(self):
        self.cluster.deploy('edge-1', 'hello')

        token = self.cluster.invoke('edge-1', 'hello', b'', mode='async')

        self.assertTrue(token)
        deadline = time.monotonic() + 5
        while self.cluster['edge-1'].store.lookup('hello', 'current') is None and time.monotonic() < deadline:
            time.sleep(0.01)
        self.assertEqual(self.cluster['edge-1'].store.get_local('hello', 'current').value, b'Hello World!\n')


class EmulatedLatencyTestCase(TransactionTestCase):
    def test_client_invocation_pays_link_rtt(self):
        with InProcessCluster(['edge-1'], default={'rtt_ms': 50}) as cluster:
            cluster.deploy('edge-1', 'echo')
            cluster.invoke('edge-1', 'echo', b'warm')

            started = time.monotonic()
            output = cluster.invoke('edge-1', 'echo', b'x')
            elapsed = time.monotonic() - started

        self.assertEqual(output, b'x')
        self.assertGreaterEqual(elapsed, 0.05)

"""
Tests for the function runtime on a single node.
"""

import shlex
import sys
import threading
import time
from pathlib import Path
from unittest import mock

from django.test import SimpleTestCase, override_settings

from apps.kvstore.store import KeyValueStore
from apps.naming.registry import KeygroupInfo
from apps.replication.replicator import Replicator
from apps.session.sessions import GuardedStore
from core.exceptions import (
    BadRequestError,
    ConflictError,
    InternalError,
    NotFoundError,
    OperationTimeoutError,
    UnavailableError,
)
from .builtins import BUILTINS, Builtin, list_builtins
from .functions import ASYNC, FunctionRuntime, FunctionSpec

HELLO_SCRIPT = Path(__file__).resolve().parent / 'handlers' / 'hello_stdio.py'

REQUIRED_BUILTINS = {
    'echo', 'movavg', 'readn', 'writen', 'rwitem',
    'weathersensorfilter', 'trafficsensorfilter', 'objectrecognition', 'movementplan',
    'trafficstatistics', 'airqualityaggregator', 'emergencydetection', 'lightphasecalculation',
}


def local_runtime(node_id='edge-1'):
    """Runtime whose keygroups are always new; the naming service is a stub."""
    store = KeyValueStore(node_id)
    replicator = mock.Mock(spec=Replicator)
    replicator.propagate.return_value = {}
    naming = mock.Mock()
    naming.lookup_keygroup.side_effect = NotFoundError('unknown keygroup')
    naming.create_keygroup.side_effect = lambda name, node: KeygroupInfo(name, [node], {node: '127.0.0.1:1'})
    return FunctionRuntime(node_id, GuardedStore(store, replicator), replicator, naming, pool=mock.Mock())


def wait_for(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.01)
    return False


def register(name, handler):
    return mock.patch.dict(BUILTINS, {name: Builtin(name=name, description='test', handler=handler)})


class BuiltinCatalogTestCase(SimpleTestCase):
    def test_catalog_holds_required_names(self):
        names = {builtin.name for builtin in list_builtins()}

        self.assertTrue(REQUIRED_BUILTINS <= names)
        self.assertIn('hello', names)

    def test_three_smart_city_functions_persist(self):
        smart_city = REQUIRED_BUILTINS - {'echo', 'movavg', 'readn', 'writen', 'rwitem'}

        persisting = {name for name in smart_city if BUILTINS[name].persists}

        self.assertEqual(persisting, {'movementplan', 'trafficstatistics', 'airqualityaggregator'})

    def test_catalog_is_sorted(self):
        names = [builtin.name for builtin in list_builtins()]
        self.assertEqual(names, sorted(names))


class DeployTestCase(SimpleTestCase):
    def setUp(self):
        self.runtime = local_runtime()

    def tearDown(self):
        self.runtime.stop(drain_seconds=1)

    def test_first_deploy_creates_keygroup(self):
        result = self.runtime.deploy(FunctionSpec(name='avg', handler='movavg'))

        self.assertTrue(result.created_keygroup)
        self.assertIsNone(result.replicated_from)
        self.assertTrue(self.runtime.store.has_keygroup('avg'))
        self.runtime.naming.create_keygroup.assert_called_once_with('avg', 'edge-1')

    def test_unknown_builtin_has_no_side_effects(self):
        with self.assertRaises(BadRequestError):
            self.runtime.deploy(FunctionSpec(name='broken', handler='nope'))

        self.assertFalse(self.runtime.store.has_keygroup('broken'))
        self.runtime.naming.lookup_keygroup.assert_not_called()

    def test_missing_program_is_rejected(self):
        with self.assertRaises(BadRequestError):
            self.runtime.deploy(FunctionSpec(name='ext', handler='exec:/no/such/program --flag'))

    def test_identical_redeploy_is_idempotent(self):
        spec = FunctionSpec(name='avg', handler='movavg')
        first = self.runtime.deploy(spec)

        second = self.runtime.deploy(FunctionSpec(name='avg', handler='movavg'))

        self.assertEqual(first, second)
        self.assertEqual(self.runtime.naming.create_keygroup.call_count, 1)

    def test_redeploy_with_different_spec(self):
        self.runtime.deploy(FunctionSpec(name='avg', handler='movavg'))

        with self.assertRaises(ConflictError):
            self.runtime.deploy(FunctionSpec(name='avg', handler='movavg', threads=4))

    def test_keygroup_defaults_to_function_name(self):
        self.assertEqual(FunctionSpec(name='avg', handler='movavg').keygroup, 'avg')
        self.assertEqual(FunctionSpec(name='avg', handler='movavg', keygroup='shared').keygroup, 'shared')

    def test_threads_must_be_positive(self):
        with self.assertRaises(BadRequestError):
            FunctionSpec(name='avg', handler='movavg', threads=0)

    def test_naming_unavailable(self):
        self.runtime.naming.create_keygroup.side_effect = UnavailableError('naming down')

        with self.assertRaises(UnavailableError):
            self.runtime.deploy(FunctionSpec(name='avg', handler='movavg'))

        self.assertFalse(self.runtime.store.has_keygroup('avg'))
        with self.assertRaises(NotFoundError):
            self.runtime.invoke('avg', b'1')

    def test_list_functions(self):
        self.runtime.deploy(FunctionSpec(name='b', handler='echo'))
        self.runtime.deploy(FunctionSpec(name='a', handler='echo'))

        self.assertEqual([spec.name for spec in self.runtime.list_functions()], ['a', 'b'])


class InvokeTestCase(SimpleTestCase):
    def setUp(self):
        self.runtime = local_runtime()

    def tearDown(self):
        self.runtime.stop(drain_seconds=1)

    def deploy(self, name, handler=None, **fields):
        return self.runtime.deploy(FunctionSpec(name=name, handler=handler or name, **fields))

    def test_echo(self):
        self.deploy('echo')
        self.assertEqual(self.runtime.invoke('echo', b'x'), b'x')

    def test_hello_appends_a_line_per_call(self):
        self.deploy('hello')

        self.assertEqual(self.runtime.invoke('hello', b''), b'Hello World!\n')
        self.assertEqual(self.runtime.invoke('hello', b''), b'Hello World!\nHello World!\n')

    def test_movavg_single_input(self):
        self.deploy('movavg')
        self.assertEqual(self.runtime.invoke('movavg', b'4'), b'4.0')

    def test_movavg_of_one_to_ten(self):
        self.deploy('movavg')

        outputs = [self.runtime.invoke('movavg', str(i).encode()) for i in range(1, 11)]

        self.assertEqual(outputs[-1], b'5.5')

    def test_movavg_matches_recomputed_mean(self):
        self.deploy('movavg')
        inputs = []

        for n in range(1, 101):
            value = (n * 37) % 101 - 50
            inputs.append(value)
            output = self.runtime.invoke('movavg', str(value).encode())

            window = [float(x) for x in inputs[-min(n, 10):]]
            self.assertEqual(output, str(sum(window) / len(window)).encode(), f"call {n}")

    def test_movavg_rejects_non_numbers(self):
        self.deploy('movavg')

        with self.assertRaises(InternalError):
            self.runtime.invoke('movavg', b'abc')

    def test_readn_before_seeding(self):
        self.deploy('readn')

        with self.assertRaises(InternalError):
            self.runtime.invoke('readn', b'10')

    def test_writen_then_readn_share_a_keygroup(self):
        self.deploy('writen', keygroup='blob')
        self.deploy('readn', keygroup='blob')

        self.assertEqual(self.runtime.invoke('writen', b'1000'), b'ok')
        self.assertEqual(self.runtime.invoke('readn', b'1000'), b'ok')
        self.assertEqual(len(self.runtime.store.get_local('blob', 'blob').value), 1000)

    def test_rwitem(self):
        self.deploy('rwitem')

        self.assertEqual(self.runtime.invoke('rwitem', b'w|17|123'), b'ok')
        self.assertEqual(self.runtime.invoke('rwitem', b'r'), b'17|123')
        with self.assertRaises(InternalError):
            self.runtime.invoke('rwitem', b'x')

    def test_unknown_function(self):
        with self.assertRaises(NotFoundError):
            self.runtime.invoke('ghost', b'')

    def test_unknown_mode(self):
        self.deploy('echo')
        with self.assertRaises(BadRequestError):
            self.runtime.invoke('echo', b'', mode='later')

    def test_call_depth_is_capped(self):
        self.deploy('echo')
        with self.assertRaises(BadRequestError):
            self.runtime.invoke('echo', b'', depth=17)

    def test_handler_failure_recycles_slot(self):
        calls = []

        def flaky(data, ctx):
            calls.append(data)
            if data == b'boom':
                raise RuntimeError('boom')
            return data

        with register('flaky', flaky):
            self.deploy('flaky', threads=1)
            with self.assertRaises(InternalError):
                self.runtime.invoke('flaky', b'boom')
            self.assertEqual(self.runtime.invoke('flaky', b'fine'), b'fine')

        self.assertEqual(calls, [b'boom', b'fine'])

    def test_async_returns_before_handler_finishes(self):
        release = threading.Event()
        finished = threading.Event()

        def slow(data, ctx):
            release.wait(5)
            ctx.kv.set('done', data)
            finished.set()

        with register('slow', slow):
            self.deploy('slow')
            token = self.runtime.invoke('slow', b'yes', mode=ASYNC)

            self.assertTrue(token)
            self.assertFalse(finished.is_set())
            release.set()
            self.assertTrue(finished.wait(5))

        self.assertEqual(self.runtime.store.get_local('slow', 'done').value, b'yes')

    def test_threads_bound_concurrency(self):
        lock = threading.Lock()
        state = {'running': 0, 'peak': 0}

        def tracked(data, ctx):
            with lock:
                state['running'] += 1
                state['peak'] = max(state['peak'], state['running'])
            time.sleep(0.05)
            with lock:
                state['running'] -= 1
            return data

        with register('tracked', tracked):
            self.deploy('tracked', threads=3)
            callers = [
                threading.Thread(target=self.runtime.invoke, args=('tracked', b'x'))
                for _ in range(12)
            ]
            for caller in callers:
                caller.start()
            for caller in callers:
                caller.join()

        self.assertEqual(state['peak'], 3)

    @override_settings(ENOKI_HANDLER_TIMEOUT_S=0.2)
    def test_handler_timeout(self):
        release = threading.Event()

        with register('stuck', lambda data, ctx: release.wait(5)):
            self.deploy('stuck')
            started = time.monotonic()
            with self.assertRaises(OperationTimeoutError):
                self.runtime.invoke('stuck', b'')
            release.set()

        self.assertLess(time.monotonic() - started, 2.0)

    @override_settings(ENOKI_HANDLER_TIMEOUT_S=0.3)
    def test_single_thread_self_call_times_out(self):
        def recursive(data, ctx):
            return ctx.call('recursive', data)

        with register('recursive', recursive):
            self.deploy('recursive', threads=1)
            with self.assertRaises(OperationTimeoutError):
                self.runtime.invoke('recursive', b'')

    @override_settings(ENOKI_QUEUE_CAP=1)
    def test_queue_overflow(self):
        release = threading.Event()

        with register('blocked', lambda data, ctx: release.wait(5)):
            self.deploy('blocked', threads=1)
            self.runtime.invoke('blocked', b'', mode=ASYNC)
            self.runtime.invoke('blocked', b'', mode=ASYNC)

            with self.assertRaises(UnavailableError):
                self.runtime.invoke('blocked', b'', mode=ASYNC)
            release.set()

    def test_fresh_session_per_invocation(self):
        sessions = []

        def remember(data, ctx):
            sessions.append(ctx.kv.session.id)
            return b''

        with register('remember', remember):
            self.deploy('remember')
            self.runtime.invoke('remember', b'')
            self.runtime.invoke('remember', b'')

        self.assertEqual(len(set(sessions)), 2)

    def test_nested_call_uses_env_rename(self):
        def caller(data, ctx):
            return ctx.call('target', data)

        with register('caller', caller):
            self.deploy('shout', handler='echo')
            self.deploy('caller', env={'fn.target': 'shout'})

            self.assertEqual(self.runtime.invoke('caller', b'hey'), b'hey')

    def test_traffic_filter_chain(self):
        for name in ('movementplan', 'trafficstatistics', 'lightphasecalculation', 'trafficsensorfilter'):
            self.deploy(name)

        self.assertEqual(self.runtime.invoke('trafficsensorfilter', b'{"pass": false}'), b'filtered')
        self.assertEqual(self.runtime.invoke('trafficsensorfilter', b'{"pass": true}'), b'pass')

        self.assertEqual(self.runtime.store.get_local('movementplan', 'ptr').value, b'1')
        self.assertTrue(wait_for(
            lambda: self.runtime.store.lookup('trafficstatistics', 'count') is not None
        ))
        self.assertEqual(self.runtime.store.get_local('trafficstatistics', 'count').value, b'1')

    def test_object_recognition_plans_on_request(self):
        for name in ('movementplan', 'lightphasecalculation', 'emergencydetection', 'objectrecognition'):
            self.deploy(name)

        self.assertEqual(self.runtime.invoke('objectrecognition', b'{"plan": false}'), b'noplan')
        self.assertEqual(self.runtime.invoke('objectrecognition', b'{"plan": true}'), b'plan')
        self.assertEqual(self.runtime.store.get_local('movementplan', 'ptr').value, b'1')

    def test_weather_filter_feeds_aggregate(self):
        self.deploy('airqualityaggregator')
        self.deploy('weathersensorfilter')

        self.runtime.invoke('weathersensorfilter', b'{"pass": true, "reading": 2.5}')
        self.runtime.invoke('weathersensorfilter', b'{"pass": true, "reading": 1.5}')

        def aggregated():
            entry = self.runtime.store.lookup('airqualityaggregator', 'sum')
            return entry is not None and entry.value == b'4.0'

        self.assertTrue(wait_for(aggregated))

    def test_stop_drains_queued_invocations(self):
        done = []

        def slow(data, ctx):
            time.sleep(0.05)
            done.append(data)

        with register('slow', slow):
            self.deploy('slow', threads=1)
            for i in range(3):
                self.runtime.invoke('slow', str(i).encode(), mode=ASYNC)
            self.runtime.stop(drain_seconds=2)

        self.assertEqual(done, [b'0', b'1', b'2'])


class SubprocessHandlerTestCase(SimpleTestCase):
    def setUp(self):
        self.runtime = local_runtime()
        self.handler = f"exec:{shlex.quote(sys.executable)} {shlex.quote(str(HELLO_SCRIPT))}"

    def tearDown(self):
        self.runtime.stop(drain_seconds=1)

    def test_external_hello(self):
        self.runtime.deploy(FunctionSpec(name='hello-ext', handler=self.handler))

        self.assertEqual(self.runtime.invoke('hello-ext', b''), b'Hello World!\n')
        self.assertEqual(self.runtime.invoke('hello-ext', b''), b'Hello World!\nHello World!\n')
        self.assertEqual(self.runtime.store.get_local('hello-ext', 'current').value, b'Hello World!\nHello World!\n')

    def test_external_failure_then_recovery(self):
        self.runtime.deploy(FunctionSpec(name='hello-ext', handler=self.handler))

        with self.assertRaises(InternalError):
            self.runtime.invoke('hello-ext', b'fail')
        self.assertEqual(self.runtime.invoke('hello-ext', b''), b'Hello World!\n')

    def test_external_nested_invoke(self):
        self.runtime.deploy(FunctionSpec(name='echo', handler='echo'))
        self.runtime.deploy(FunctionSpec(name='hello-ext', handler=self.handler))

        self.assertEqual(self.runtime.invoke('hello-ext', b'echo:ping'), b'ping')

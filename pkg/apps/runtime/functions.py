"""
Function runtime of a node.

Deploying a function binds it to a handler and to its keygroup: the keygroup
is created when it is new, copied to this node when it already lives
elsewhere, or (without replication) reached on its first replica over RPC.
Invocations run on a per-function pool of ``threads`` workers behind a FIFO
queue; every invocation gets a fresh session on the function's keygroup.
"""

import logging
import threading
import time
import uuid
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

from django.conf import settings

from apps.kvstore.store import KeyValueStore
from apps.naming.client import NamingClient
from apps.netem.rpc import RpcClientPool
from apps.replication.replicator import Replicator
from apps.session.sessions import GuardedStore, RemoteStore, Session, SessionKV
from core.clock import now_us
from core.exceptions import (
    AlreadyExistsError,
    BadRequestError,
    ConflictError,
    EnokiError,
    InternalError,
    NotFoundError,
    OperationTimeoutError,
    UnavailableError,
)
from core.utils import validate_name
from .builtins import BUILTINS
from .subprocess_handler import EXEC_PREFIX, SubprocessHandler

logger = logging.getLogger(__name__)

SYNC = 'sync'
ASYNC = 'async'
MODES = (SYNC, ASYNC)


@dataclass(frozen=True)
class FunctionSpec:
    name: str
    handler: str
    threads: int = 1
    keygroup: str = ''
    env: Dict[str, str] = field(default_factory=dict)
    replicate_from_existing: bool = True

    def __post_init__(self):
        validate_name(self.name, 'function name')
        if not self.handler:
            raise BadRequestError("handler is required")
        if self.threads < 1:
            raise BadRequestError("threads must be at least 1")
        if not self.keygroup:
            object.__setattr__(self, 'keygroup', self.name)
        validate_name(self.keygroup, 'keygroup name')

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DeploymentResult:
    created_keygroup: bool
    replicated_from: Optional[str] = None
    kv_node: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Invocation:
    function: str
    mode: str
    size_bytes: int
    received_ts: int = field(default_factory=now_us)
    completed_ts: Optional[int] = None

    @property
    def duration_us(self) -> Optional[int]:
        if self.completed_ts is None:
            return None
        return self.completed_ts - self.received_ts


def resolve_handler(spec: FunctionSpec) -> Callable:
    """Builtin handler by name, or a subprocess handler for ``exec:<command>``."""
    if spec.handler.startswith(EXEC_PREFIX):
        return SubprocessHandler(spec.handler, spec.threads, spec.env)
    builtin = BUILTINS.get(spec.handler)
    if builtin is None:
        raise BadRequestError(f"unknown builtin handler: {spec.handler}")
    return builtin.handler


class HandlerContext:
    """What a handler sees besides its input: ``kv``, ``call`` and where it runs."""

    def __init__(self, kv: SessionKV, runtime: 'FunctionRuntime', function: str,
                 env: Dict[str, str], depth: int = 0):
        self.kv = kv
        self.runtime = runtime
        self.function = function
        self.env = env
        self.depth = depth

    @property
    def self_node(self) -> str:
        return self.runtime.node_id

    def call(self, name: str, data: Union[bytes, str] = b'', mode: str = SYNC,
             node: str = None) -> Union[bytes, str]:
        """
        Invoke another function.

        ``fn.<name>`` in the function's env renames the target and
        ``node.<name>`` places it on another node.

        Returns:
            The output for a sync call, the acceptance token for an async one
        """
        if isinstance(data, str):
            data = data.encode('utf-8')
        target = self.env.get(f'fn.{name}', name)
        target_node = node or self.env.get(f'node.{name}') or self.self_node
        if target_node == self.self_node:
            return self.runtime.invoke(target, data, mode=mode, depth=self.depth + 1)
        return self.runtime.invoke_remote(target_node, target, data, mode=mode, depth=self.depth + 1)


class Deployment:
    """A deployed function: its handler, kv binding and worker pool."""

    def __init__(self, spec: FunctionSpec, handler: Callable, backend, result: DeploymentResult):
        self.spec = spec
        self.handler = handler
        self.backend = backend
        self.result = result
        self.executor = ThreadPoolExecutor(max_workers=spec.threads, thread_name_prefix=f'fn-{spec.name}')
        self._pending = 0
        self._lock = threading.Lock()

    @property
    def pending(self) -> int:
        with self._lock:
            return self._pending

    def reserve(self):
        with self._lock:
            if self._pending >= self.spec.threads + settings.ENOKI_QUEUE_CAP:
                raise UnavailableError(f"invocation queue of {self.spec.name} is full")
            self._pending += 1

    def release(self, _future=None):
        with self._lock:
            self._pending -= 1

    def close(self):
        self.executor.shutdown(wait=False)
        if isinstance(self.handler, SubprocessHandler):
            self.handler.close()


class FunctionRuntime:

    def __init__(self, node_id: str, guarded: GuardedStore, replicator: Replicator,
                 naming: NamingClient, pool: RpcClientPool):
        self.node_id = node_id
        self.guarded = guarded
        self.store: KeyValueStore = guarded.store
        self.replicator = replicator
        self.naming = naming
        self.pool = pool
        self._functions: Dict[str, Deployment] = {}
        self._node_addresses: Dict[str, str] = {}
        self._deploy_lock = threading.Lock()
        self._lock = threading.Lock()

    # Deployment

    def deploy(self, spec: FunctionSpec) -> DeploymentResult:
        handler = resolve_handler(spec)
        with self._deploy_lock:
            existing = self._functions.get(spec.name)
            if existing is not None:
                if existing.spec == spec:
                    return existing.result
                raise ConflictError(f"function {spec.name} is already deployed with a different spec")
            try:
                result, backend = self._bind_keygroup(spec)
            except EnokiError:
                if isinstance(handler, SubprocessHandler):
                    handler.close()
                raise
            deployment = Deployment(spec, handler, backend, result)
            with self._lock:
                self._functions[spec.name] = deployment
        logger.info(
            f"Deployed {spec.name} ({spec.handler}, threads={spec.threads}) on keygroup {spec.keygroup}: "
            f"created={result.created_keygroup} replicated_from={result.replicated_from} kv_node={result.kv_node}"
        )
        return result

    def _bind_keygroup(self, spec: FunctionSpec) -> Tuple[DeploymentResult, object]:
        name = spec.keygroup
        try:
            info = self.naming.lookup_keygroup(name)
        except NotFoundError:
            info = None

        if info is None:
            if not self.store.has_keygroup(name):
                self.store.create_keygroup(name)
            try:
                info = self.naming.create_keygroup(name, self.node_id)
            except AlreadyExistsError:
                # another node registered it first
                self.store.drop_keygroup(name)
                info = self.naming.lookup_keygroup(name)
            except EnokiError:
                self.store.drop_keygroup(name)
                raise
            else:
                self.replicator.set_replicas(name, info.replicas, info.addresses)
                return DeploymentResult(created_keygroup=True, kv_node=self.node_id), self.guarded

        if self.node_id in info.replicas:
            if self.store.has_keygroup(name):
                self.replicator.set_replicas(name, info.replicas, info.addresses)
                return DeploymentResult(created_keygroup=False, kv_node=self.node_id), self.guarded
            others = [replica for replica in info.replicas if replica != self.node_id]
            if not others:
                self.store.create_keygroup(name)
                self.replicator.set_replicas(name, info.replicas, info.addresses)
                return DeploymentResult(created_keygroup=False, kv_node=self.node_id), self.guarded
            self.replicator.bootstrap_keygroup(name, others[0])
            return DeploymentResult(created_keygroup=False, replicated_from=others[0], kv_node=self.node_id), self.guarded

        source = info.replicas[0]
        if spec.replicate_from_existing:
            self.replicator.bootstrap_keygroup(name, source)
            return DeploymentResult(created_keygroup=False, replicated_from=source, kv_node=self.node_id), self.guarded
        backend = RemoteStore(self.pool, source, info.addresses[source])
        return DeploymentResult(created_keygroup=False, kv_node=source), backend

    def deployment(self, name: str) -> Deployment:
        with self._lock:
            deployment = self._functions.get(name)
        if deployment is None:
            raise NotFoundError(f"function {name} is not deployed")
        return deployment

    def list_functions(self) -> List[FunctionSpec]:
        with self._lock:
            return [self._functions[name].spec for name in sorted(self._functions)]

    # Invocation

    def invoke(self, name: str, data: bytes, mode: str = SYNC, depth: int = 0) -> Union[bytes, str]:
        """
        Run a deployed function.

        Args:
            name: Function name
            data: Raw input
            mode: ``sync`` waits for the output, ``async`` returns once queued
            depth: Nesting level of the call

        Returns:
            Output bytes (sync) or an acceptance token (async)
        """
        if mode not in MODES:
            raise BadRequestError(f"unknown invocation mode: {mode}")
        if depth > settings.ENOKI_MAX_CALL_DEPTH:
            raise BadRequestError(f"nested call depth exceeds {settings.ENOKI_MAX_CALL_DEPTH}")
        deployment = self.deployment(name)
        invocation = Invocation(function=name, mode=mode, size_bytes=len(data))
        deadline = time.monotonic() + settings.ENOKI_HANDLER_TIMEOUT_S

        deployment.reserve()
        try:
            future = deployment.executor.submit(self._run, deployment, invocation, data, deadline, depth)
        except RuntimeError:
            deployment.release()
            raise UnavailableError(f"function {name} is shutting down")
        future.add_done_callback(deployment.release)

        if mode == ASYNC:
            token = uuid.uuid4().hex
            future.add_done_callback(lambda done: self._log_async(name, token, done))
            return token

        try:
            return future.result(timeout=max(deadline - time.monotonic(), 0.0))
        except FutureTimeout:
            # the worker keeps its slot until the handler returns
            raise OperationTimeoutError(
                f"{name} did not finish within {settings.ENOKI_HANDLER_TIMEOUT_S}s"
            )

    def _run(self, deployment: Deployment, invocation: Invocation, data: bytes,
             deadline: float, depth: int) -> bytes:
        spec = deployment.spec
        if time.monotonic() >= deadline:
            raise OperationTimeoutError(f"{spec.name} expired in the invocation queue")
        ctx = HandlerContext(
            kv=SessionKV(deployment.backend, Session(keygroup=spec.keygroup)),
            runtime=self,
            function=spec.name,
            env=spec.env,
            depth=depth,
        )
        try:
            output = deployment.handler(data, ctx)
        except Exception as e:
            logger.exception(f"Handler of {spec.name} failed")
            raise InternalError(f"{spec.name} failed: {e}")
        finally:
            invocation.completed_ts = now_us()
        logger.debug(f"Invoked {spec.name} ({invocation.mode}) in {invocation.duration_us}us")
        if output is None:
            return b''
        if isinstance(output, str):
            return output.encode('utf-8')
        if isinstance(output, (bytes, bytearray)):
            return bytes(output)
        raise InternalError(f"{spec.name} returned {type(output).__name__}, expected bytes")

    @staticmethod
    def _log_async(name: str, token: str, future: Future):
        error = future.exception()
        if error is not None:
            logger.warning(f"Async invocation {token} of {name} failed: {error}")

    def invoke_remote(self, node_id: str, name: str, data: bytes, mode: str = SYNC,
                      depth: int = 0) -> Union[bytes, str]:
        message = {'type': 'Invoke', 'function': name, 'input': data, 'mode': mode, 'depth': depth}
        result = self.pool.call(self._address_of(node_id), message, peer_id=node_id)
        if mode == ASYNC:
            return result['token']
        return result['output']

    def _address_of(self, node_id: str) -> str:
        with self._lock:
            address = self._node_addresses.get(node_id)
        if address is None:
            address = self.naming.lookup_node(node_id).address
            with self._lock:
                self._node_addresses[node_id] = address
        return address

    def handle_invoke(self, message: dict) -> dict:
        data = message.get('input', b'')
        if not isinstance(data, bytes):
            raise BadRequestError("Invoke needs a binary input")
        try:
            depth = int(message.get('depth', 0))
        except (TypeError, ValueError):
            raise BadRequestError("call depth must be an integer")
        mode = message.get('mode', SYNC)
        output = self.invoke(message.get('function'), data, mode=mode, depth=depth)
        if mode == ASYNC:
            return {'token': output}
        return {'output': output}

    # Shutdown

    def stop(self, drain_seconds: float = None):
        """Stop accepting work and wait for queued invocations to finish."""
        drain_seconds = settings.ENOKI_DRAIN_SECONDS if drain_seconds is None else drain_seconds
        with self._lock:
            deployments = list(self._functions.values())
        for deployment in deployments:
            deployment.executor.shutdown(wait=False)
        deadline = time.monotonic() + drain_seconds
        while time.monotonic() < deadline and any(deployment.pending for deployment in deployments):
            time.sleep(0.01)
        left = sum(deployment.pending for deployment in deployments)
        if left:
            logger.warning(f"Stopped with {left} invocations still queued")
        for deployment in deployments:
            deployment.close()

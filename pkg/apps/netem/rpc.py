"""
Framed request/response RPC over TCP, shaped by the process's ``Netem``.

Requests carry an ``id``; replies are ``{"type": "OK", "id", "result"}`` or
``{"type": "ERR", "id", "error": {"kind", "detail"}}``. One connection carries
many outstanding requests. Every frame a process writes, request or reply,
leaves through a ``ShapedChannel`` so it arrives after the modeled link delay.
"""

import itertools
import logging
import queue
import socket
import socketserver
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from typing import Any, Callable, Dict, Optional, Set

from django.conf import settings

from core.exceptions import (
    BadRequestError,
    EnokiError,
    InternalError,
    OperationTimeoutError,
    UnavailableError,
)
from core.utils import parse_address
from .framing import decode_payload, pack_frame, read_frame
from .shaper import DirectionShaper, Netem

logger = logging.getLogger(__name__)

CONNECT_TIMEOUT_S = 5.0

Dispatch = Callable[[dict, Optional[str]], Any]


def _tune(sock: socket.socket):
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class ShapedChannel:
    """Outbound half of a connection; a dispatcher thread releases frames at their delivery time."""

    def __init__(self, sock: socket.socket, shaper: DirectionShaper,
                 on_failure: Callable[[Exception], None] = None, name: str = 'channel'):
        self._sock = sock
        self._shaper = shaper
        self._on_failure = on_failure
        self._queue: 'queue.Queue' = queue.Queue()
        self._closed = False
        self._thread = threading.Thread(target=self._run, name=f'netem-{name}', daemon=True)
        self._thread.start()

    @property
    def closed(self) -> bool:
        return self._closed

    def send(self, frame: bytes):
        """Schedule a frame; returns without waiting for the modeled delay."""
        if self._closed:
            raise UnavailableError("connection closed")
        self._queue.put((self._shaper.schedule(len(frame)), frame))

    def _run(self):
        while True:
            item = self._queue.get()
            if item is None:
                return
            deliver_at, frame = item
            delay = deliver_at - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            try:
                self._sock.sendall(frame)
            except OSError as e:
                self._closed = True
                logger.debug(f"Send failed on {self._thread.name}: {e}")
                if self._on_failure:
                    self._on_failure(e)
                return

    def close(self):
        self._closed = True
        self._queue.put(None)


class _ThreadedServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True
    block_on_close = False


class _FrameHandler(socketserver.BaseRequestHandler):
    def handle(self):
        self.server.rpc.serve_connection(self.request)


class RpcServer:
    """
    Listener that hands every request to ``dispatch(message, sender_id)``.

    The dispatch result becomes the reply's ``result``; an ``EnokiError`` becomes
    an ERR reply of its kind and anything else an Internal error.
    """

    def __init__(self, address: str, dispatch: Dispatch, netem: Netem, name: str = 'rpc', workers: int = None):
        self.requested_address = address
        self.dispatch = dispatch
        self.netem = netem
        self.name = name
        self.workers = workers or settings.ENOKI_RPC_WORKERS
        self._server: Optional[_ThreadedServer] = None
        self._executor: Optional[ThreadPoolExecutor] = None
        self._thread: Optional[threading.Thread] = None
        self._connections: Set[socket.socket] = set()
        self._lock = threading.Lock()

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> str:
        host, port = parse_address(self.requested_address)
        try:
            self._server = _ThreadedServer((host, port), _FrameHandler)
        except OSError as e:
            raise UnavailableError(f"cannot listen on {self.requested_address}: {e}")
        self._server.rpc = self
        self._executor = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix=f'{self.name}-worker')
        self._thread = threading.Thread(target=self._server.serve_forever, name=f'{self.name}-listener', daemon=True)
        self._thread.start()
        logger.info(f"RPC listener {self.name} on {self.address}")
        return self.address

    def stop(self):
        if self._server is None:
            return
        self._server.shutdown()
        self._server.server_close()
        with self._lock:
            connections = list(self._connections)
            self._connections.clear()
        for sock in connections:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        self._executor.shutdown(wait=False, cancel_futures=True)
        self._server = None
        logger.info(f"RPC listener {self.name} stopped")

    def serve_connection(self, sock: socket.socket):
        _tune(sock)
        with self._lock:
            self._connections.add(sock)
        stream = sock.makefile('rb')
        channel = None
        try:
            while True:
                try:
                    sender_index, payload = read_frame(stream)
                except (ConnectionError, OSError):
                    break
                sender_id = self.netem.sender_id(sender_index) if sender_index is not None else None
                if channel is None:
                    channel = ShapedChannel(sock, self.netem.shaper_to(sender_id), name=f'{self.name}->{sender_id}')
                try:
                    self._executor.submit(self._handle, channel, sender_id, payload)
                except RuntimeError:
                    break
        finally:
            if channel:
                channel.close()
            with self._lock:
                self._connections.discard(sock)
            stream.close()

    def _handle(self, channel: ShapedChannel, sender_id: Optional[str], payload: bytes):
        request_id = None
        try:
            message = decode_payload(payload)
            request_id = message.get('id')
            if not isinstance(message.get('type'), str):
                raise BadRequestError("message has no type")
            result = self.dispatch(message, sender_id)
            reply = {'type': 'OK', 'id': request_id, 'result': result}
        except EnokiError as e:
            reply = {'type': 'ERR', 'id': request_id, 'error': e.to_wire()}
        except Exception as e:
            logger.exception(f"Unhandled error while serving a {self.name} request")
            reply = {'type': 'ERR', 'id': request_id, 'error': InternalError(str(e)).to_wire()}
        try:
            channel.send(pack_frame(reply, self.netem.sender_index))
        except EnokiError as e:
            logger.debug(f"Dropped reply to {sender_id}: {e}")


class RpcConnection:
    """One client connection multiplexing concurrent requests."""

    def __init__(self, address: str, peer_id: Optional[str], netem: Netem):
        self.address = address
        self.peer_id = peer_id
        self.netem = netem
        host, port = parse_address(address)
        try:
            self._sock = socket.create_connection((host, port), timeout=CONNECT_TIMEOUT_S)
        except OSError as e:
            raise UnavailableError(f"cannot connect to {peer_id or address}: {e}")
        self._sock.settimeout(None)
        _tune(self._sock)
        self._pending: Dict[int, Future] = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self._closed = False
        self._channel = ShapedChannel(
            self._sock, netem.shaper_to(peer_id), on_failure=self._fail_all,
            name=f'{netem.self_id}->{peer_id or address}',
        )
        self._reader = threading.Thread(target=self._read_loop, name=f'rpc-reader-{address}', daemon=True)
        self._reader.start()

    @property
    def alive(self) -> bool:
        return not self._closed

    def call(self, message: dict, timeout: float = None) -> Any:
        future: Future = Future()
        with self._lock:
            if self._closed:
                raise UnavailableError(f"connection to {self.peer_id or self.address} is closed")
            request_id = next(self._ids)
            self._pending[request_id] = future
        frame = pack_frame({**message, 'id': request_id}, self.netem.sender_index)
        try:
            self._channel.send(frame)
        except EnokiError:
            self._fail_all(ConnectionError("channel closed"))
            raise UnavailableError(f"connection to {self.peer_id or self.address} is closed")
        try:
            return future.result(timeout if timeout is not None else settings.ENOKI_RPC_TIMEOUT_S)
        except FutureTimeout:
            with self._lock:
                self._pending.pop(request_id, None)
            raise OperationTimeoutError(f"{message.get('type')} to {self.peer_id or self.address} timed out")

    def _read_loop(self):
        stream = self._sock.makefile('rb')
        try:
            while True:
                _, payload = read_frame(stream)
                try:
                    reply = decode_payload(payload)
                except BadRequestError as e:
                    logger.warning(f"Malformed reply from {self.peer_id or self.address}: {e}")
                    continue
                with self._lock:
                    future = self._pending.pop(reply.get('id'), None)
                if future is None:
                    logger.debug(f"Reply for unknown request {reply.get('id')} from {self.address}")
                    continue
                if reply.get('type') == 'OK':
                    future.set_result(reply.get('result'))
                else:
                    future.set_exception(EnokiError.from_wire(reply.get('error')))
        except (ConnectionError, OSError) as e:
            self._fail_all(e)
        finally:
            stream.close()

    def _fail_all(self, reason: Exception):
        with self._lock:
            if self._closed and not self._pending:
                return
            self._closed = True
            pending = list(self._pending.values())
            self._pending.clear()
        for future in pending:
            if not future.done():
                future.set_exception(UnavailableError(f"connection to {self.peer_id or self.address} lost: {reason}"))
        self._channel.close()

    def close(self):
        self._fail_all(ConnectionError("closed locally"))
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class RpcClientPool:
    """Keeps one connection per destination address, reconnecting after failures."""

    def __init__(self, netem: Netem):
        self.netem = netem
        self._connections: Dict[str, RpcConnection] = {}
        self._lock = threading.Lock()

    def connection(self, address: str, peer_id: Optional[str] = None) -> RpcConnection:
        with self._lock:
            connection = self._connections.get(address)
            if connection is None or not connection.alive:
                connection = RpcConnection(address, peer_id, self.netem)
                self._connections[address] = connection
            return connection

    def call(self, address: str, message: dict, peer_id: Optional[str] = None, timeout: float = None) -> Any:
        return self.connection(address, peer_id).call(message, timeout)

    def close(self):
        with self._lock:
            connections = list(self._connections.values())
            self._connections.clear()
        for connection in connections:
            connection.close()

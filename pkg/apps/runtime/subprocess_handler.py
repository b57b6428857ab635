"""
Handlers that run as external processes speaking a line protocol on stdio.

runtime -> handler:  CALL <b64 input>
handler -> runtime:  KV GET <key> | KV SET <key> <b64> | KV SCAN <start> <count> | KV DEL <key>
                     INVOKE <sync|async> <fn> <b64> | RET <b64 output> | ERR <message>
runtime -> handler:  OK <b64> | NF | ERR <message>   (answers to KV and INVOKE lines)

A scan answer is the base64 of a JSON list of ``[key, b64 value]`` pairs.
Each instance slot owns one process, which is reused across invocations.
"""

import json
import logging
import os
import queue
import shlex
import shutil
import subprocess
import threading
from typing import List, Optional

from core.exceptions import BadRequestError, EnokiError, InternalError, NotFoundError
from core.utils import b64decode, b64encode

logger = logging.getLogger(__name__)

EXEC_PREFIX = 'exec:'


def parse_command(handler_ref: str) -> List[str]:
    """Split an ``exec:<command line>`` reference and check the program exists."""
    try:
        argv = shlex.split(handler_ref[len(EXEC_PREFIX):])
    except ValueError as e:
        raise BadRequestError(f"malformed handler command: {e}")
    if not argv:
        raise BadRequestError("empty handler command")
    program = argv[0]
    if not (shutil.which(program) or (os.path.isfile(program) and os.access(program, os.X_OK))):
        raise BadRequestError(f"handler program not found: {program}")
    return argv


class HandlerProcess:
    """One running handler process; serves one invocation at a time."""

    def __init__(self, argv: List[str], env: dict):
        self.argv = argv
        try:
            self.process = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                env={**os.environ, **env},
                bufsize=0,
            )
        except OSError as e:
            raise InternalError(f"cannot launch handler {argv[0]}: {e}")
        self.stdout = self.process.stdout
        logger.debug(f"Started handler process {self.process.pid}: {' '.join(argv)}")

    @property
    def alive(self) -> bool:
        return self.process.poll() is None

    def _send(self, line: str):
        self.process.stdin.write(line.encode('ascii') + b'\n')
        self.process.stdin.flush()

    def _receive(self) -> str:
        line = self.stdout.readline()
        if not line:
            raise InternalError(f"handler process {self.process.pid} exited")
        return line.decode('ascii').rstrip('\n')

    def call(self, data: bytes, ctx) -> bytes:
        try:
            self._send(f"CALL {b64encode(data)}")
            while True:
                line = self._receive()
                verb, _, rest = line.partition(' ')
                if verb == 'RET':
                    return b64decode(rest)
                if verb == 'ERR':
                    raise InternalError(f"handler reported: {rest}")
                if verb == 'KV':
                    self._send(self._answer_kv(rest, ctx))
                elif verb == 'INVOKE':
                    self._send(self._answer_invoke(rest, ctx))
                else:
                    raise InternalError(f"unknown handler line: {line[:64]}")
        except (OSError, ValueError) as e:
            raise InternalError(f"handler process failed: {e}")

    @staticmethod
    def _answer_kv(request: str, ctx) -> str:
        parts = request.split(' ')
        op = parts[0]
        try:
            if op == 'GET' and len(parts) == 2:
                return f"OK {b64encode(ctx.kv.get(parts[1]))}"
            if op == 'SET' and len(parts) == 3:
                ctx.kv.set(parts[1], b64decode(parts[2]))
                return 'OK '
            if op == 'SCAN' and len(parts) == 3:
                items = ctx.kv.scan(parts[1], int(parts[2]))
                listing = json.dumps([[key, b64encode(value)] for key, value in items])
                return f"OK {b64encode(listing.encode('utf-8'))}"
            if op == 'DEL' and len(parts) == 2:
                ctx.kv.delete(parts[1])
                return 'OK '
            return f"ERR malformed KV request: {request[:64]}"
        except NotFoundError:
            return 'NF'
        except (EnokiError, ValueError) as e:
            return f"ERR {e}"

    @staticmethod
    def _answer_invoke(request: str, ctx) -> str:
        parts = request.split(' ')
        if len(parts) != 3 or parts[0] not in ('sync', 'async'):
            return f"ERR malformed INVOKE request: {request[:64]}"
        try:
            output = ctx.call(parts[1], b64decode(parts[2]), mode=parts[0])
        except EnokiError as e:
            return f"ERR {e}"
        return f"OK {b64encode(output if isinstance(output, bytes) else b'')}"

    def terminate(self):
        if self.alive:
            self.process.terminate()
            try:
                self.process.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.process.kill()


class SubprocessHandler:
    """Callable handler backed by a pool of up to ``slots`` processes."""

    def __init__(self, handler_ref: str, slots: int, env: dict = None):
        self.argv = parse_command(handler_ref)
        self.slots = slots
        self.env = {key: value for key, value in (env or {}).items() if '.' not in key}
        self._idle: 'queue.Queue[HandlerProcess]' = queue.Queue()
        self._all: List[HandlerProcess] = []
        self._lock = threading.Lock()

    def _acquire(self) -> HandlerProcess:
        try:
            process: Optional[HandlerProcess] = self._idle.get_nowait()
        except queue.Empty:
            process = None
        if process is not None and process.alive:
            return process
        process = HandlerProcess(self.argv, self.env)
        with self._lock:
            self._all.append(process)
        return process

    def __call__(self, data: bytes, ctx) -> bytes:
        process = self._acquire()
        try:
            output = process.call(data, ctx)
        except InternalError:
            process.terminate()
            raise
        self._idle.put(process)
        return output

    def close(self):
        with self._lock:
            processes = list(self._all)
            self._all.clear()
        for process in processes:
            process.terminate()

"""
Handler-side half of the stdio protocol.

An external handler script defines ``call(data, kv, invoke)`` and hands it to
``serve``. ``kv`` behaves like the in-process session kv object; ``invoke``
calls another function through the runtime. This module has no Django
dependency so any Python interpreter can run a handler script.
"""

import base64
import json
import sys
from typing import BinaryIO, Callable, List, Tuple, Union

_MISSING = object()


class KeyNotFound(KeyError):
    pass


class RuntimeRefused(Exception):
    """The runtime answered a request with ERR."""


def _encode(data: bytes) -> str:
    return base64.b64encode(data).decode('ascii')


def _decode(text: str) -> bytes:
    return base64.b64decode(text.encode('ascii'))


def _as_bytes(value: Union[bytes, str]) -> bytes:
    return value.encode('utf-8') if isinstance(value, str) else bytes(value)


class StdioChannel:

    def __init__(self, stdin: BinaryIO, stdout: BinaryIO):
        self.stdin = stdin
        self.stdout = stdout

    def send(self, line: str):
        self.stdout.write(line.encode('ascii') + b'\n')
        self.stdout.flush()

    def receive(self) -> str:
        line = self.stdin.readline()
        if not line:
            raise EOFError
        return line.decode('ascii').rstrip('\n')

    def request(self, line: str) -> bytes:
        self.send(line)
        reply = self.receive()
        verb, _, rest = reply.partition(' ')
        if verb == 'OK':
            return _decode(rest)
        if verb == 'NF':
            raise KeyNotFound(line)
        raise RuntimeRefused(rest)


class StdioKV:

    def __init__(self, channel: StdioChannel):
        self.channel = channel

    def get(self, key: str, default=_MISSING) -> bytes:
        try:
            return self.channel.request(f"KV GET {key}")
        except KeyNotFound:
            if default is _MISSING:
                raise KeyNotFound(key)
            return default

    def set(self, key: str, value: Union[bytes, str]):
        self.channel.request(f"KV SET {key} {_encode(_as_bytes(value))}")

    def scan(self, start_key: str, count: int) -> List[Tuple[str, bytes]]:
        listing = json.loads(self.channel.request(f"KV SCAN {start_key} {count}"))
        return [(key, _decode(value)) for key, value in listing]

    def delete(self, key: str):
        self.channel.request(f"KV DEL {key}")


def serve(call: Callable, stdin: BinaryIO = None, stdout: BinaryIO = None):
    """Answer CALL lines until the runtime closes stdin."""
    channel = StdioChannel(stdin or sys.stdin.buffer, stdout or sys.stdout.buffer)
    kv = StdioKV(channel)

    def invoke(function: str, data: Union[bytes, str] = b'', mode: str = 'sync') -> bytes:
        return channel.request(f"INVOKE {mode} {function} {_encode(_as_bytes(data))}")

    while True:
        try:
            line = channel.receive()
        except EOFError:
            return
        verb, _, rest = line.partition(' ')
        if verb != 'CALL':
            channel.send(f"ERR unexpected line {verb}")
            continue
        try:
            output = call(_decode(rest), kv, invoke)
        except Exception as e:
            channel.send(f"ERR {type(e).__name__}: {e}".replace('\n', ' '))
            continue
        channel.send(f"RET {_encode(_as_bytes(output if output is not None else b''))}")

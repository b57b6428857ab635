"""
Built-in handler catalog.

Every handler takes the raw input and a ``HandlerContext`` and returns bytes.
State goes through ``ctx.kv`` only; other functions are reached through
``ctx.call``.
"""

import json
import random
import time
from dataclasses import dataclass
from typing import Callable, Dict, List

from core.exceptions import BadRequestError

WINDOW = 10
HELLO_LINE = 'Hello World!\n'


@dataclass(frozen=True)
class Builtin:
    name: str
    description: str
    handler: Callable
    persists: bool = False


BUILTINS: Dict[str, Builtin] = {}


def builtin(name: str, description: str, persists: bool = False):
    def register(handler):
        BUILTINS[name] = Builtin(name=name, description=description, handler=handler, persists=persists)
        return handler
    return register


def list_builtins() -> List[Builtin]:
    return [BUILTINS[name] for name in sorted(BUILTINS)]


def _event(data: bytes) -> dict:
    """Smart-city inputs are JSON objects; an empty input is an empty event."""
    if not data:
        return {}
    try:
        event = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BadRequestError(f"event is not valid JSON: {e}")
    if not isinstance(event, dict):
        raise BadRequestError("event must be a JSON object")
    return event


def _counter(kv, key: str) -> int:
    return int(kv.get(key, b'0'))


@builtin('echo', 'Returns its input unchanged')
def echo(data: bytes, ctx) -> bytes:
    return data


@builtin('hello', 'Appends a greeting line to the stored text and returns it', persists=True)
def hello(data: bytes, ctx) -> bytes:
    current = ctx.kv.get('current', b'').decode('utf-8')
    current += HELLO_LINE
    ctx.kv.set('current', current)
    return current.encode('utf-8')


@builtin('movavg', 'Moving average over the last ten inputs', persists=True)
def movavg(data: bytes, ctx) -> bytes:
    float(data)
    ptr = _counter(ctx.kv, 'ptr') + 1
    ctx.kv.set(f'v-{ptr:06d}', data)
    ctx.kv.set('ptr', str(ptr))
    window = min(ptr, WINDOW)
    recent = ctx.kv.scan(f'v-{ptr - window + 1:06d}', window)
    return str(sum(float(item) for _, item in recent) / len(recent)).encode()


@builtin('readn', 'Reads the stored blob without returning it', persists=True)
def readn(data: bytes, ctx) -> bytes:
    int(data)
    ctx.kv.get('blob')
    return b'ok'


@builtin('writen', 'Stores n pseudorandom bytes as the blob', persists=True)
def writen(data: bytes, ctx) -> bytes:
    size = int(data)
    if size < 0:
        raise BadRequestError("size must be non-negative")
    ctx.kv.set('blob', random.randbytes(size))
    return b'ok'


@builtin('rwitem', "Reads ('r') or updates ('w|<payload>') a single data item", persists=True)
def rwitem(data: bytes, ctx) -> bytes:
    if data == b'r':
        return ctx.kv.get('item')
    if data.startswith(b'w|'):
        ctx.kv.set('item', data[2:])
        return b'ok'
    raise BadRequestError("rwitem input must be 'r' or 'w|<payload>'")


@builtin('weathersensorfilter', 'Filters weather readings; passing ones feed the air quality aggregate')
def weathersensorfilter(data: bytes, ctx) -> bytes:
    event = _event(data)
    if not event.get('pass'):
        return b'filtered'
    ctx.call('airqualityaggregator', data, mode='async')
    return b'pass'


@builtin('trafficsensorfilter', 'Filters traffic readings; passing ones plan movement and update statistics')
def trafficsensorfilter(data: bytes, ctx) -> bytes:
    event = _event(data)
    if not event.get('pass'):
        return b'filtered'
    ctx.call('movementplan', data)
    ctx.call('trafficstatistics', data, mode='async')
    return b'pass'


@builtin('objectrecognition', 'Checks camera frames for emergencies and optionally plans movement')
def objectrecognition(data: bytes, ctx) -> bytes:
    event = _event(data)
    ctx.call('emergencydetection', data)
    if event.get('plan'):
        ctx.call('movementplan', data)
        return b'plan'
    return b'noplan'


@builtin('movementplan', 'Plans vehicle movement from recent plans and triggers light phases', persists=True)
def movementplan(data: bytes, ctx) -> bytes:
    ptr = _counter(ctx.kv, 'ptr')
    window = max(min(ptr, WINDOW), 1)
    recent = ctx.kv.scan(f'plan-{max(ptr - window + 1, 1):06d}', window)
    ctx.kv.set(f'plan-{ptr + 1:06d}', data)
    ctx.kv.set('ptr', str(ptr + 1))
    ctx.call('lightphasecalculation', data, mode='async')
    return str(len(recent) + 1).encode()


@builtin('trafficstatistics', 'Counts passing traffic readings', persists=True)
def trafficstatistics(data: bytes, ctx) -> bytes:
    count = _counter(ctx.kv, 'count') + 1
    ctx.kv.set('count', str(count))
    return str(count).encode()


@builtin('airqualityaggregator', 'Running sum of passing weather readings', persists=True)
def airqualityaggregator(data: bytes, ctx) -> bytes:
    event = _event(data)
    total = float(ctx.kv.get('sum', b'0')) + float(event.get('reading', 0))
    ctx.kv.set('sum', str(total))
    return str(total).encode()


@builtin('emergencydetection', 'Stateless emergency check on an event')
def emergencydetection(data: bytes, ctx) -> bytes:
    event = _event(data)
    return b'emergency' if event.get('emergency') else b'clear'


@builtin('lightphasecalculation', 'Stateless light phase computation (about 1 ms of work)')
def lightphasecalculation(data: bytes, ctx) -> bytes:
    time.sleep(0.001)
    return b'phase'

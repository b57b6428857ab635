"""
The greeting handler as an external process.

Run by the runtime as ``exec:python apps/runtime/handlers/hello_stdio.py``.
An input of ``fail`` makes the handler raise.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[3]))

from apps.runtime.stdio_kv import serve  # noqa: E402


def call(data, kv, invoke):
    if data == b'fail':
        raise ValueError('asked to fail')
    if data.startswith(b'echo:'):
        return invoke('echo', data[5:])
    current = kv.get('current', b'').decode('utf-8')
    current += 'Hello World!\n'
    kv.set('current', current)
    return current


if __name__ == '__main__':
    serve(call)

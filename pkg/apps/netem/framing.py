"""
Frame format for internal RPC.

A frame is an 8-byte header (payload length, sender index; both 4-byte big-endian)
followed by the payload. The payload is a JSON object with a ``type`` field,
optionally followed by a newline and the raw bytes of every binary value in the
message. Binary values are replaced in the JSON by ``{"$blob": i}`` and their
lengths are listed under ``"$blobs"``.
"""

import json
import struct
from typing import Any, BinaryIO, List, Optional, Tuple

from core.exceptions import BadRequestError

HEADER = struct.Struct('>II')
UNLISTED_SENDER = 0xFFFFFFFF
MAX_FRAME_SIZE = 256 * 1024 * 1024
BLOB_MARKER = '$blob'
BLOB_LENGTHS = '$blobs'


def _extract_blobs(value: Any, blobs: List[bytes]) -> Any:
    if isinstance(value, (bytes, bytearray, memoryview)):
        blobs.append(bytes(value))
        return {BLOB_MARKER: len(blobs) - 1}
    if isinstance(value, dict):
        return {key: _extract_blobs(item, blobs) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_extract_blobs(item, blobs) for item in value]
    return value


def _restore_blobs(value: Any, blobs: List[bytes]) -> Any:
    if isinstance(value, dict):
        if len(value) == 1 and BLOB_MARKER in value:
            try:
                return blobs[value[BLOB_MARKER]]
            except (IndexError, TypeError):
                raise BadRequestError("frame references a missing blob")
        return {key: _restore_blobs(item, blobs) for key, item in value.items()}
    if isinstance(value, list):
        return [_restore_blobs(item, blobs) for item in value]
    return value


def encode_payload(message: dict) -> bytes:
    blobs: List[bytes] = []
    document = _extract_blobs(message, blobs)
    if blobs:
        document[BLOB_LENGTHS] = [len(blob) for blob in blobs]
    text = json.dumps(document, separators=(',', ':')).encode('utf-8')
    if not blobs:
        return text
    return b''.join([text, b'\n'] + blobs)


def decode_payload(payload: bytes) -> dict:
    head, separator, tail = payload.partition(b'\n')
    try:
        document = json.loads(head.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BadRequestError(f"malformed frame payload: {e}")
    if not isinstance(document, dict):
        raise BadRequestError("frame payload must be a JSON object")
    lengths = document.pop(BLOB_LENGTHS, [])
    blobs = []
    offset = 0
    try:
        for length in lengths:
            blobs.append(tail[offset:offset + length])
            offset += length
    except TypeError:
        raise BadRequestError("malformed blob table")
    if offset != len(tail):
        raise BadRequestError("blob table does not match frame size")
    return _restore_blobs(document, blobs)


def pack_frame(message: dict, sender_index: Optional[int]) -> bytes:
    payload = encode_payload(message)
    if len(payload) > MAX_FRAME_SIZE:
        raise BadRequestError(f"frame of {len(payload)} bytes exceeds the limit")
    index = UNLISTED_SENDER if sender_index is None else sender_index
    return HEADER.pack(len(payload), index) + payload


def _read_exact(stream: BinaryIO, size: int) -> bytes:
    data = stream.read(size)
    if data is None or len(data) < size:
        raise ConnectionError("connection closed while reading a frame")
    return data


def read_frame(stream: BinaryIO) -> Tuple[Optional[int], bytes]:
    """
    Read one raw frame from a buffered stream.

    Returns:
        Tuple of (sender index or None when unlisted, raw payload)
    """
    length, index = HEADER.unpack(_read_exact(stream, HEADER.size))
    if length > MAX_FRAME_SIZE:
        raise ConnectionError(f"frame of {length} bytes exceeds the limit")
    payload = _read_exact(stream, length) if length else b''
    return (None if index == UNLISTED_SENDER else index), payload

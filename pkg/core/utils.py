"""
Utility functions for the Enoki project.
"""

import base64
import re
from typing import Tuple

from .exceptions import BadRequestError

NODE_ID_PATTERN = re.compile(r'^[A-Za-z0-9-]+$')
NAME_PATTERN = re.compile(r'^[A-Za-z0-9_.-]+$')


def validate_node_id(node_id: str) -> str:
    """
    Validate a node identifier.

    Args:
        node_id: Candidate id, letters, digits and hyphens only

    Returns:
        The id unchanged
    """
    if not node_id or not NODE_ID_PATTERN.match(node_id):
        raise BadRequestError(f"invalid node id: {node_id!r}")
    return node_id


def validate_name(name: str, what: str = 'name') -> str:
    """
    Validate a function or keygroup name.

    Args:
        name: Candidate name, a non-empty token
        what: Label used in the error message

    Returns:
        The name unchanged
    """
    if not name or not NAME_PATTERN.match(name):
        raise BadRequestError(f"invalid {what}: {name!r}")
    return name


def parse_address(address: str) -> Tuple[str, int]:
    """
    Split a ``host:port`` string.

    Args:
        address: Address such as ``127.0.0.1:7101``

    Returns:
        Tuple of (host, port)
    """
    if not address or ':' not in address:
        raise BadRequestError(f"malformed address: {address!r}")
    host, _, port = address.rpartition(':')
    if not host:
        raise BadRequestError(f"malformed address: {address!r}")
    try:
        port_number = int(port)
    except ValueError:
        raise BadRequestError(f"malformed port in address: {address!r}")
    if not 0 <= port_number <= 65535:
        raise BadRequestError(f"port out of range in address: {address!r}")
    return host, port_number


def b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode('ascii')


def b64decode(text: str) -> bytes:
    try:
        return base64.b64decode(text.encode('ascii'), validate=True)
    except (ValueError, UnicodeEncodeError):
        raise BadRequestError("invalid base64 payload")

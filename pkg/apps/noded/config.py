import json
from pathlib import Path
from typing import Optional

from ninja import Schema
from pydantic import ValidationError, validator

from apps.netem.topology import Topology
from core.exceptions import BadRequestError
from core.utils import NODE_ID_PATTERN, parse_address

NODE_ROLES = ('edge', 'cloud')


class NodeConfig(Schema):
    id: str
    listen_http: str
    listen_rpc: str
    naming_addr: str
    topology_path: str
    role: str = 'edge'

    @validator('id')
    def validate_id(cls, v):
        if not NODE_ID_PATTERN.match(v or ''):
            raise ValueError('Node id may only contain letters, digits and hyphens')
        return v

    @validator('listen_http', 'listen_rpc', 'naming_addr')
    def validate_address(cls, v):
        try:
            parse_address(v)
        except BadRequestError as e:
            raise ValueError(e.detail)
        return v

    @validator('listen_rpc')
    def validate_distinct_ports(cls, v, values):
        http = values.get('listen_http')
        if http and parse_address(v)[1] != 0 and parse_address(v)[1] == parse_address(http)[1]:
            raise ValueError('HTTP and RPC listeners need distinct ports')
        return v

    @validator('role')
    def validate_role(cls, v):
        if v not in NODE_ROLES:
            raise ValueError(f"Role must be one of {', '.join(NODE_ROLES)}")
        return v


def load_node_config(path, topology: Optional[Topology] = None) -> NodeConfig:
    """
    Read and validate a node configuration file.

    Args:
        path: JSON file with the ``NodeConfig`` fields
        topology: Already loaded topology; read from ``topology_path`` if None

    Returns:
        The validated config
    """
    try:
        data = json.loads(Path(path).read_text())
    except OSError as e:
        raise BadRequestError(f"cannot read node config {path}: {e}")
    except json.JSONDecodeError as e:
        raise BadRequestError(f"node config {path} is not valid JSON: {e}")
    try:
        config = NodeConfig(**data)
    except (ValidationError, TypeError) as e:
        raise BadRequestError(f"invalid node config: {e}")
    topology = topology or Topology.load(config.topology_path)
    if not topology.has_node(config.id):
        raise BadRequestError(f"node {config.id} is not in topology {config.topology_path}")
    return config

"""
Emulated network topology: which nodes exist and what the links between them look like.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ninja import Schema
from pydantic import ValidationError, validator

from core.exceptions import BadRequestError
from core.utils import NODE_ID_PATTERN, parse_address

logger = logging.getLogger(__name__)

ROLES = ('client', 'edge', 'cloud')


@dataclass(frozen=True)
class LinkProfile:
    """Symmetric link; a bandwidth of 0 means unlimited."""

    a: str = '*'
    b: str = '*'
    rtt_ms: float = 0.0
    bandwidth_bits_per_s: float = 0.0

    @classmethod
    def from_mbps(cls, a: str, b: str, rtt_ms: float, mbps: float) -> 'LinkProfile':
        return cls(a=a, b=b, rtt_ms=float(rtt_ms), bandwidth_bits_per_s=float(mbps) * 1_000_000)

    @property
    def unlimited(self) -> bool:
        return self.bandwidth_bits_per_s <= 0

    @property
    def one_way_s(self) -> float:
        return self.rtt_ms / 2000.0

    @property
    def bytes_per_s(self) -> float:
        return self.bandwidth_bits_per_s / 8.0

    @property
    def mbps(self) -> float:
        return self.bandwidth_bits_per_s / 1_000_000


UNLIMITED_LINK = LinkProfile()


@dataclass(frozen=True)
class NodeSpec:
    id: str
    role: str
    addr: str
    http: Optional[str] = None


class NodeSchema(Schema):
    id: str
    role: str = 'edge'
    addr: str
    http: Optional[str] = None

    @validator('id')
    def validate_id(cls, v):
        if not NODE_ID_PATTERN.match(v or ''):
            raise ValueError('Node id may only contain letters, digits and hyphens')
        return v

    @validator('role')
    def validate_role(cls, v):
        if v not in ROLES:
            raise ValueError(f"Role must be one of {', '.join(ROLES)}")
        return v

    @validator('addr', 'http')
    def validate_address(cls, v):
        if v is None:
            return v
        try:
            parse_address(v)
        except BadRequestError as e:
            raise ValueError(e.detail)
        return v


class LinkSchema(Schema):
    a: str
    b: str
    rtt_ms: float = 0.0
    mbps: float = 0.0

    @validator('rtt_ms', 'mbps')
    def validate_non_negative(cls, v):
        if v < 0:
            raise ValueError('Link parameters must be non-negative')
        return v


class DefaultLinkSchema(Schema):
    rtt_ms: float = 0.0
    mbps: float = 0.0


class TopologySchema(Schema):
    nodes: List[NodeSchema]
    links: List[LinkSchema] = []
    default: DefaultLinkSchema = DefaultLinkSchema()
    naming: Optional[str] = None


class Topology:
    """
    Nodes in declaration order plus symmetric link profiles.

    The position of a node in ``nodes`` is its sender index in frame headers.
    """

    def __init__(self, nodes: List[NodeSpec], links: List[LinkProfile] = None,
                 default: LinkProfile = UNLIMITED_LINK, naming: Optional[str] = None):
        self.nodes = list(nodes)
        self.links = list(links or [])
        self.default = default
        self.naming = naming
        self._index: Dict[str, int] = {}
        for position, node in enumerate(self.nodes):
            if node.id in self._index:
                raise BadRequestError(f"duplicate node id in topology: {node.id}")
            self._index[node.id] = position
        self._profiles: Dict[Tuple[str, str], LinkProfile] = {}
        for link in self.links:
            pair = tuple(sorted((link.a, link.b)))
            if pair in self._profiles:
                raise BadRequestError(f"duplicate link in topology: {link.a} <-> {link.b}")
            self._profiles[pair] = link

    @classmethod
    def from_dict(cls, data: dict) -> 'Topology':
        try:
            parsed = TopologySchema(**data)
        except (ValidationError, TypeError) as e:
            raise BadRequestError(f"invalid topology: {e}")
        nodes = [NodeSpec(id=node.id, role=node.role, addr=node.addr, http=node.http) for node in parsed.nodes]
        known = {node.id for node in nodes}
        links = []
        for link in parsed.links:
            for end in (link.a, link.b):
                if end not in known:
                    raise BadRequestError(f"link references unknown node {end}")
            links.append(LinkProfile.from_mbps(link.a, link.b, link.rtt_ms, link.mbps))
        default = LinkProfile.from_mbps('*', '*', parsed.default.rtt_ms, parsed.default.mbps)
        return cls(nodes, links, default, naming=parsed.naming)

    @classmethod
    def load(cls, path) -> 'Topology':
        try:
            data = json.loads(Path(path).read_text())
        except OSError as e:
            raise BadRequestError(f"cannot read topology {path}: {e}")
        except json.JSONDecodeError as e:
            raise BadRequestError(f"topology {path} is not valid JSON: {e}")
        topology = cls.from_dict(data)
        logger.debug(f"Loaded topology {path} with {len(topology.nodes)} nodes")
        return topology

    def to_dict(self) -> dict:
        data = {
            'nodes': [
                {key: value for key, value in
                 (('id', node.id), ('role', node.role), ('addr', node.addr), ('http', node.http))
                 if value is not None}
                for node in self.nodes
            ],
            'links': [
                {'a': link.a, 'b': link.b, 'rtt_ms': link.rtt_ms, 'mbps': link.mbps}
                for link in self.links
            ],
            'default': {'rtt_ms': self.default.rtt_ms, 'mbps': self.default.mbps},
        }
        if self.naming:
            data['naming'] = self.naming
        return data

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def has_node(self, node_id: str) -> bool:
        return node_id in self._index

    def index_of(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise BadRequestError(f"node {node_id} is not in the topology")

    def node_at(self, index: int) -> Optional[NodeSpec]:
        if 0 <= index < len(self.nodes):
            return self.nodes[index]
        return None

    def node(self, node_id: str) -> NodeSpec:
        return self.nodes[self.index_of(node_id)]

    def nodes_with_role(self, role: str) -> List[NodeSpec]:
        return [node for node in self.nodes if node.role == role]

    def profile(self, a: Optional[str], b: Optional[str]) -> LinkProfile:
        """Link between two nodes; unlisted pairs and unknown ends get the default."""
        if a is None or b is None:
            return self.default
        return self._profiles.get(tuple(sorted((a, b))), self.default)

"""
Benchmark scenarios.

Each scenario deploys builtins on a fresh set of function names, drives them
with an open or closed workload through ``BenchClient`` and records samples
per store variant:

- ``single``: one stateful function, state at the edge or in the cloud
- ``throughput-read`` / ``throughput-write``: closed-loop blob transfer per payload size
- ``replication``: write at one edge, read at another; probe staleness
- ``smartcity``: the eight-function traffic application
"""

import json
import logging
import random
import threading
import uuid
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, List, Optional, Tuple

from apps.netem.topology import Topology
from apps.noded.testing import CLIENT_ID
from apps.session.staleness import (
    StalenessProbeLog,
    compute_staleness,
    decode_probe,
    encode_probe,
    record_probe_read,
    record_probe_write,
)
from core.clock import now_us
from core.exceptions import BadRequestError
from .client import BenchClient
from .metrics import MetricSample, SampleRecorder
from .workload import PlannedRequest, run_closed_workload, run_open_workload, timed

logger = logging.getLogger(__name__)

STORE_VARIANTS = ('store=cloud', 'store=edge')
VARIANTS: Dict[str, Tuple[str, ...]] = {
    'single': STORE_VARIANTS,
    'throughput-read': STORE_VARIANTS,
    'throughput-write': STORE_VARIANTS,
    'replication': ('store=cloud', 'store=peer', 'store=replicated'),
    'smartcity': STORE_VARIANTS,
}
SCENARIOS = tuple(VARIANTS)

PAYLOAD_SIZES = (1, 1_000, 10_000, 100_000, 1_000_000)
FUNCTION_THREADS = 16
THROUGHPUT_THREADS = 100


@dataclass(frozen=True)
class ScenarioDefaults:
    rate_per_s: Optional[float]
    threads: Optional[int]
    desk_duration_s: float
    full_duration_s: float
    repetitions: int


DEFAULTS: Dict[str, ScenarioDefaults] = {
    'single': ScenarioDefaults(10, None, 60, 300, 3),
    'throughput-read': ScenarioDefaults(None, THROUGHPUT_THREADS, 30, 120, 1),
    'throughput-write': ScenarioDefaults(None, THROUGHPUT_THREADS, 30, 120, 1),
    'replication': ScenarioDefaults(10, None, 60, 120, 3),
    'smartcity': ScenarioDefaults(5, None, 120, 600, 3),
}


@dataclass
class ScenarioConfig:
    name: str
    variant: str
    duration_s: float
    seed: int = 0
    rate_per_s: Optional[float] = None
    threads: Optional[int] = None
    repetitions: int = 1
    topology_path: Optional[str] = None
    sizes: Tuple[int, ...] = PAYLOAD_SIZES

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise BadRequestError(f"unknown scenario {self.name!r}; expected one of {', '.join(SCENARIOS)}")
        if self.variant not in VARIANTS[self.name]:
            raise BadRequestError(
                f"scenario {self.name} has no variant {self.variant!r}; "
                f"expected one of {', '.join(VARIANTS[self.name])}"
            )
        if (self.rate_per_s is None) == (self.threads is None):
            raise BadRequestError("a scenario runs either an open workload (rate) or a closed one (threads)")
        if self.duration_s <= 0:
            raise BadRequestError(f"duration must be positive, got {self.duration_s}")
        if self.repetitions < 1:
            raise BadRequestError(f"repetitions must be at least 1, got {self.repetitions}")


def build_configs(name: str, variant: Optional[str] = None, seed: int = 0, full_scale: bool = False,
                  duration_s: Optional[float] = None, repetitions: Optional[int] = None,
                  topology_path: Optional[str] = None) -> List[ScenarioConfig]:
    """One config per requested variant, filled from the scenario's defaults."""
    if name not in DEFAULTS:
        raise BadRequestError(f"unknown scenario {name!r}; expected one of {', '.join(SCENARIOS)}")
    defaults = DEFAULTS[name]
    variants = [variant] if variant else list(VARIANTS[name])
    return [
        ScenarioConfig(
            name=name,
            variant=v,
            duration_s=duration_s or (defaults.full_duration_s if full_scale else defaults.desk_duration_s),
            seed=seed,
            rate_per_s=defaults.rate_per_s,
            threads=defaults.threads,
            repetitions=repetitions or defaults.repetitions,
            topology_path=topology_path,
        )
        for v in variants
    ]


# Topologies

CLIENT_EDGE = {'rtt_ms': 10, 'mbps': 1000}
EDGE_CLOUD = {'rtt_ms': 50, 'mbps': 100}
EDGE_EDGE = {'rtt_ms': 20, 'mbps': 100}
CLIENT_CLOUD = {'rtt_ms': 60, 'mbps': 100}


def default_topology(name: str) -> Topology:
    """Client, edge node(s) and one cloud node on loopback; ports are chosen at launch."""
    edges = ['edge-1', 'edge-2'] if name == 'replication' else ['edge-1']
    nodes = [{'id': CLIENT_ID, 'role': 'client', 'addr': '127.0.0.1:0'}]
    nodes += [{'id': edge, 'role': 'edge', 'addr': '127.0.0.1:0'} for edge in edges]
    nodes.append({'id': 'cloud-1', 'role': 'cloud', 'addr': '127.0.0.1:0'})
    links = [{'a': CLIENT_ID, 'b': 'cloud-1', **CLIENT_CLOUD}]
    for edge in edges:
        links.append({'a': CLIENT_ID, 'b': edge, **CLIENT_EDGE})
        links.append({'a': edge, 'b': 'cloud-1', **EDGE_CLOUD})
    if len(edges) == 2:
        links.append({'a': edges[0], 'b': edges[1], **EDGE_EDGE})
    return Topology.from_dict({'nodes': nodes, 'links': links})


@dataclass
class Placement:
    edges: List[str]
    cloud: str


def placement(topology: Topology, edges_needed: int = 1) -> Placement:
    edges = [node.id for node in topology.nodes_with_role('edge')]
    clouds = [node.id for node in topology.nodes_with_role('cloud')]
    if len(edges) < edges_needed or not clouds:
        raise BadRequestError(f"topology needs {edges_needed} edge node(s) and a cloud node")
    return Placement(edges=edges, cloud=clouds[0])


# Shared helpers

@dataclass
class ScenarioResult:
    samples: List[MetricSample] = field(default_factory=list)
    observed_staleness_us: List[int] = field(default_factory=list)


def run_tag(variant: str, repetition: int) -> str:
    """Suffix that gives every run its own function names and keygroups."""
    return f"{variant.split('=')[-1]}-{repetition}-{uuid.uuid4().hex[:6]}"


def deploy_stateful(client: BenchClient, name: str, handler: str, host: str, store: str,
                    threads: int = FUNCTION_THREADS, keygroup: Optional[str] = None,
                    env: Dict[str, str] = None):
    """
    Deploy ``name`` on ``host`` with its keygroup's only replica on ``store``.

    When the two differ the function is first deployed on ``store`` to create
    the keygroup there, then bound remotely on ``host``.
    """
    if store != host:
        client.deploy(store, name, handler, threads=threads, keygroup=keygroup, env=env)
        client.deploy(host, name, handler, threads=threads, keygroup=keygroup, env=env,
                      replicate_from_existing=False)
    else:
        client.deploy(host, name, handler, threads=threads, keygroup=keygroup, env=env)


def _drive(cfg: ScenarioConfig, plan: Callable[[int], PlannedRequest], recorder: SampleRecorder):
    if cfg.rate_per_s is not None:
        run_open_workload(plan, cfg.rate_per_s, cfg.duration_s, recorder)
    else:
        run_closed_workload(plan, cfg.threads, cfg.duration_s, recorder)


# single

def run_single(cfg: ScenarioConfig, client: BenchClient, recorder: SampleRecorder, repetition: int
               ) -> List[int]:
    nodes = placement(client.topology)
    edge = nodes.edges[0]
    name = f"movavg-{run_tag(cfg.variant, repetition)}"
    store = nodes.cloud if cfg.variant == 'store=cloud' else edge
    deploy_stateful(client, name, 'movavg', host=edge, store=store)

    def plan(index: int) -> PlannedRequest:
        data = str(index + 1).encode()
        return PlannedRequest('movavg', partial(client.invoke, edge, name, data), size_bytes=len(data))

    _drive(cfg, plan, recorder)
    return []


# throughput-read / throughput-write

def run_throughput(cfg: ScenarioConfig, client: BenchClient, recorder: SampleRecorder, repetition: int
                   ) -> List[int]:
    nodes = placement(client.topology)
    edge = nodes.edges[0]
    store = nodes.cloud if cfg.variant == 'store=cloud' else edge
    tag = run_tag(cfg.variant, repetition)
    keygroup = f"blob-{tag}"
    writer, reader = f"writen-{tag}", f"readn-{tag}"
    threads = cfg.threads or THROUGHPUT_THREADS
    deploy_stateful(client, writer, 'writen', host=edge, store=store, threads=threads, keygroup=keygroup)
    if cfg.name == 'throughput-read':
        deploy_stateful(client, reader, 'readn', host=edge, store=store, threads=threads, keygroup=keygroup)

    for size in cfg.sizes:
        data = str(size).encode()
        if cfg.name == 'throughput-read':
            client.invoke(edge, writer, data)
            target, op = reader, f'read:{size}'
        else:
            target, op = writer, f'write:{size}'
        plan = partial(_constant_request, PlannedRequest(op, partial(client.invoke, edge, target, data), size))
        _drive(cfg, plan, recorder)
    return []


def _constant_request(request: PlannedRequest, index: int) -> PlannedRequest:
    return request


# replication

class ReplicationProbe:
    """
    Writes increasing sequence numbers at one edge and reads them back elsewhere.

    Writes are serialized so that acknowledgements arrive in sequence order;
    each acknowledged write is followed by a raw read of the replica that
    serves the reading edge and by a session read through the function.
    """

    def __init__(self, client: BenchClient, recorder: SampleRecorder, function: str,
                 writer: str, reader: str, probe_node: str):
        self.client = client
        self.recorder = recorder
        self.function = function
        self.writer = writer
        self.reader = reader
        self.probe_node = probe_node
        self.log = StalenessProbeLog()
        self._write_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self._next_seq = 1

    def _write(self, seq: int) -> bytes:
        payload = b'w|' + encode_probe(seq, now_us())
        return self.client.invoke(self.writer, self.function, payload)

    def _probe(self) -> int:
        value = self.client.raw_get(self.probe_node, self.function, 'item')
        return decode_probe(value)[0] if value else 0

    def _staleness(self, observed_seq: int, start: int, end: int) -> Optional[int]:
        with self._log_lock:
            if observed_seq and observed_seq not in self.log.writes:
                # written but not yet acknowledged to us; newest value, not stale
                return None
            record_probe_read(self.log, read_ts=start, observed_seq=observed_seq, completed_ts=end)
            superseding = self.log.writes.get(observed_seq + 1)
        if superseding is not None and superseding <= start:
            return start - superseding
        return None

    def tick(self):
        with self._write_lock:
            seq = self._next_seq
            self._next_seq += 1
            acknowledged = timed(self.recorder, 'write', partial(self._write, seq))
            if acknowledged is not None:
                with self._log_lock:
                    record_probe_write(self.log, seq, now_us())
        timed(self.recorder, 'probe', self._probe, staleness=self._staleness)
        timed(self.recorder, 'read', partial(self.client.invoke, self.reader, self.function, b'r'))

    def observed_staleness(self) -> List[int]:
        with self._log_lock:
            return compute_staleness(self.log, observed=True)


def run_replication(cfg: ScenarioConfig, client: BenchClient, recorder: SampleRecorder, repetition: int
                    ) -> List[int]:
    nodes = placement(client.topology, edges_needed=2)
    writer, reader = nodes.edges[0], nodes.edges[1]
    name = f"rwitem-{run_tag(cfg.variant, repetition)}"

    if cfg.variant == 'store=replicated':
        client.deploy(writer, name, 'rwitem', threads=FUNCTION_THREADS)
        client.deploy(reader, name, 'rwitem', threads=FUNCTION_THREADS)
        probe_node = reader
    else:
        store = nodes.cloud if cfg.variant == 'store=cloud' else writer
        deploy_stateful(client, name, 'rwitem', host=writer, store=store)
        if reader != store:
            client.deploy(reader, name, 'rwitem', threads=FUNCTION_THREADS, replicate_from_existing=False)
        probe_node = store

    probe = ReplicationProbe(client, recorder, name, writer, reader, probe_node)
    plan = partial(_constant_request, PlannedRequest('tick', probe.tick, record=False))
    _drive(cfg, plan, recorder)
    return probe.observed_staleness()


# smartcity

SMARTCITY_ENTRY_WEIGHTS = (
    ('trafficsensorfilter', 0.45),
    ('objectrecognition', 0.45),
    ('weathersensorfilter', 0.10),
)
SMARTCITY_EDGE_FUNCTIONS = ('weathersensorfilter', 'trafficsensorfilter', 'objectrecognition', 'movementplan')
SMARTCITY_CLOUD_FUNCTIONS = ('emergencydetection', 'lightphasecalculation', 'trafficstatistics',
                             'airqualityaggregator')
SMARTCITY_STATEFUL = ('movementplan', 'trafficstatistics', 'airqualityaggregator')
PASS_PROBABILITY = 0.5


def smartcity_requests(seed: int, count: int) -> List[Tuple[str, dict]]:
    """The first ``count`` client requests for ``seed``: entry function and event."""
    rng = random.Random(seed)
    return [_smartcity_request(rng, index) for index in range(count)]


def _smartcity_request(rng: random.Random, index: int) -> Tuple[str, dict]:
    draw = rng.random()
    cumulative = 0.0
    function = SMARTCITY_ENTRY_WEIGHTS[-1][0]
    for candidate, weight in SMARTCITY_ENTRY_WEIGHTS:
        cumulative += weight
        if draw < cumulative:
            function = candidate
            break
    passed = rng.random() < PASS_PROBABILITY
    event = {'seq': index}
    if function == 'objectrecognition':
        event['plan'] = passed
        event['emergency'] = False
    else:
        event['pass'] = passed
    if function == 'weathersensorfilter':
        event['reading'] = round(rng.uniform(0, 100), 2)
    return function, event


def smartcity_op(function: str, event: dict) -> str:
    if function == 'objectrecognition':
        return f"{function}:{'plan' if event['plan'] else 'noplan'}"
    return f"{function}:{'pass' if event['pass'] else 'filtered'}"


def run_smartcity(cfg: ScenarioConfig, client: BenchClient, recorder: SampleRecorder, repetition: int
                  ) -> List[int]:
    nodes = placement(client.topology)
    edge, cloud = nodes.edges[0], nodes.cloud
    tag = run_tag(cfg.variant, repetition)
    hosts = {function: edge for function in SMARTCITY_EDGE_FUNCTIONS}
    hosts.update({function: cloud for function in SMARTCITY_CLOUD_FUNCTIONS})
    names = {function: f"{function}-{tag}" for function in hosts}
    store = cloud if cfg.variant == 'store=cloud' else edge

    logger.warning("smartcity: the call graph is a synthetic approximation of the traffic application; "
                   "per-function internals are not those of the original benchmark")

    for function, host in hosts.items():
        env = {f'fn.{callee}': names[callee] for callee in hosts}
        env.update({f'node.{callee}': hosts[callee] for callee in hosts if hosts[callee] != host})
        if function in SMARTCITY_STATEFUL:
            deploy_stateful(client, names[function], function, host=host, store=store, env=env)
        else:
            client.deploy(host, names[function], function, threads=FUNCTION_THREADS, env=env)

    rng = random.Random(cfg.seed + repetition - 1)

    def plan(index: int) -> PlannedRequest:
        function, event = _smartcity_request(rng, index)
        data = json.dumps(event).encode()
        return PlannedRequest(smartcity_op(function, event), partial(client.invoke, edge, names[function], data),
                              size_bytes=len(data))

    _drive(cfg, plan, recorder)
    return []


DRIVERS: Dict[str, Callable[[ScenarioConfig, BenchClient, SampleRecorder, int], List[int]]] = {
    'single': run_single,
    'throughput-read': run_throughput,
    'throughput-write': run_throughput,
    'replication': run_replication,
    'smartcity': run_smartcity,
}


def run_scenario(cfg: ScenarioConfig, client: BenchClient) -> ScenarioResult:
    """
    Run every repetition of one scenario variant.

    Returns:
        All samples of the variant plus the client-observed staleness of its probes
    """
    recorder = SampleRecorder(cfg.name, cfg.variant)
    result = ScenarioResult()
    for repetition in range(1, cfg.repetitions + 1):
        logger.info(f"{cfg.name}/{cfg.variant}: repetition {repetition}/{cfg.repetitions}, "
                    f"{cfg.duration_s:g}s, seed {cfg.seed}")
        result.observed_staleness_us.extend(DRIVERS[cfg.name](cfg, client, recorder, repetition))
    result.samples = recorder.samples
    return result

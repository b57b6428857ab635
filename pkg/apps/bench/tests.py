"""
Tests for the benchmark harness: metrics, workload generators and scenario drivers.
"""

import csv
import tempfile
import threading
import time
from collections import Counter
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TransactionTestCase

from apps.noded.testing import InProcessCluster
from apps.session.staleness import encode_probe
from core.exceptions import BadRequestError, UnavailableError
from core.utils import parse_address
from .client import BenchClient
from .cluster import assign_addresses
from .metrics import (
    SAMPLE_COLUMNS,
    MetricSample,
    SampleRecorder,
    percentile,
    summarize,
    write_samples,
    write_summary,
)
from .scenarios import (
    ReplicationProbe,
    ScenarioConfig,
    build_configs,
    default_topology,
    run_scenario,
    smartcity_op,
    smartcity_requests,
)
from .workload import PlannedRequest, run_closed_workload, run_open_workload, schedule_size


class PercentileTestCase(SimpleTestCase):
    def test_nearest_rank_examples(self):
        self.assertEqual(percentile([1, 2, 3, 4], 50), 2)
        self.assertEqual(percentile([5], 99), 5)
        self.assertEqual(percentile(list(range(1, 101)), 90), 90)

    def test_unsorted_input(self):
        self.assertEqual(percentile([4, 1, 3, 2], 100), 4)

    def test_empty(self):
        with self.assertRaises(BadRequestError):
            percentile([], 50)

    def test_out_of_range(self):
        for p in (0, 101):
            with self.assertRaises(BadRequestError):
                percentile([1], p)


class MetricsTestCase(SimpleTestCase):
    def setUp(self):
        self.recorder = SampleRecorder('single', 'store=edge')

    def test_sample_cannot_end_before_start(self):
        with self.assertRaises(BadRequestError):
            MetricSample('single', 'store=edge', 'movavg', start_us=10, end_us=5)

    def test_summary(self):
        for i in range(10):
            self.recorder.record('read', start_us=i * 100_000, end_us=i * 100_000 + 1000 * (i + 1),
                                 size_bytes=1_000_000)
        self.recorder.record('read', start_us=0, end_us=10, ok=False)

        report, = summarize(self.recorder.samples)

        self.assertEqual((report.count, report.errors), (11, 1))
        self.assertEqual((report.p50_us, report.p90_us, report.p99_us), (5000, 9000, 10000))
        self.assertAlmostEqual(report.ops_per_s, 10 / 0.91)
        self.assertAlmostEqual(report.mb_per_s, 10 / 0.91)

    def test_summary_groups_by_op(self):
        self.recorder.record('write', 0, 10)
        self.recorder.record('probe', 0, 10, staleness_us=1500)
        self.recorder.record('probe', 0, 10)

        reports = summarize(self.recorder.samples, {('single', 'store=edge'): [1700]})

        self.assertEqual([report.op for report in reports], ['probe', 'write'])
        self.assertEqual(reports[0].staleness_us, [1500])
        self.assertEqual(reports[0].observed_staleness_us, [1700])
        self.assertEqual(reports[1].observed_staleness_us, [])

    def test_all_failed(self):
        self.recorder.record('movavg', 0, 10, ok=False)

        report, = summarize(self.recorder.samples)

        self.assertIsNone(report.p50_us)
        self.assertEqual(report.errors, 1)

    def test_csv_files(self):
        self.recorder.record('probe', 100, 350, size_bytes=3, staleness_us=40)
        self.recorder.record('read', 100, 200, ok=False)
        with tempfile.TemporaryDirectory() as directory:
            report_path, summary_path = Path(directory) / 'report.csv', Path(directory) / 'summary.csv'

            rows = write_samples(report_path, self.recorder.samples)
            write_summary(summary_path, summarize(self.recorder.samples))

            with open(report_path, newline='') as handle:
                table = list(csv.reader(handle))
            with open(summary_path, newline='') as handle:
                summary = list(csv.DictReader(handle))

        self.assertEqual(rows, 2)
        self.assertEqual(len(table), rows + 1)
        self.assertEqual(tuple(table[0]), SAMPLE_COLUMNS)
        self.assertEqual(table[1], ['single', 'store=edge', 'probe', '100', '350', '250', 'true', '3', '40'])
        self.assertEqual(table[2][6:], ['false', '0', ''])
        self.assertEqual(summary[0]['stale_reads'], '1')


def failing_call():
    raise UnavailableError('node down')


class OpenWorkloadTestCase(SimpleTestCase):
    def test_schedule_size(self):
        self.assertEqual(schedule_size(10, 300), 3000)
        self.assertEqual(schedule_size(5, 600), 3000)
        with self.assertRaises(BadRequestError):
            schedule_size(0, 10)

    def test_failures_are_samples_and_do_not_slow_the_schedule(self):
        recorder = SampleRecorder('t', 'v')

        samples = run_open_workload(lambda index: PlannedRequest('op', failing_call), 50, 0.4, recorder)

        self.assertEqual(len(samples), 20)
        self.assertFalse(any(sample.ok for sample in samples))
        starts = sorted(sample.start_us for sample in samples)
        self.assertGreaterEqual(starts[-1] - starts[0], 300_000)

    def test_fires_without_waiting_for_completions(self):
        recorder = SampleRecorder('t', 'v')
        started = time.monotonic()

        samples = run_open_workload(lambda index: PlannedRequest('op', lambda: time.sleep(0.3)), 20, 0.5, recorder)

        self.assertEqual(len(samples), 10)
        self.assertTrue(all(sample.ok for sample in samples))
        self.assertLess(time.monotonic() - started, 1.5)

    def test_issue_times_follow_schedule(self):
        recorder = SampleRecorder('t', 'v')

        samples = run_open_workload(lambda index: PlannedRequest('op', lambda: None), 20, 1.0, recorder)

        starts = sorted(sample.start_us for sample in samples)
        for index, start in enumerate(starts):
            self.assertAlmostEqual(start - starts[0], index * 50_000, delta=20_000)

    def test_plans_in_order(self):
        planned = []

        def plan(index):
            planned.append(index)
            return PlannedRequest('op', lambda: None)

        run_open_workload(plan, 100, 0.2, SampleRecorder('t', 'v'))

        self.assertEqual(planned, list(range(20)))


class ClosedWorkloadTestCase(SimpleTestCase):
    def test_concurrency_bounded_by_threads(self):
        lock = threading.Lock()
        active, peak = [0], [0]

        def call():
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            time.sleep(0.01)
            with lock:
                active[0] -= 1

        samples = run_closed_workload(lambda index: PlannedRequest('op', call), 3, 0.3, SampleRecorder('t', 'v'))

        self.assertLessEqual(peak[0], 3)
        self.assertGreater(len(samples), 3)
        self.assertTrue(all(sample.ok for sample in samples))

    def test_in_flight_request_completes_after_deadline(self):
        samples = run_closed_workload(
            lambda index: PlannedRequest('op', lambda: time.sleep(0.2)), 2, 0.05, SampleRecorder('t', 'v'),
        )

        self.assertEqual(len(samples), 2)
        self.assertTrue(all(sample.latency_us >= 200_000 for sample in samples))

    def test_needs_a_thread(self):
        with self.assertRaises(BadRequestError):
            run_closed_workload(lambda index: PlannedRequest('op', lambda: None), 0, 1, SampleRecorder('t', 'v'))


class ScenarioConfigTestCase(SimpleTestCase):
    def test_exactly_one_workload_kind(self):
        with self.assertRaises(BadRequestError):
            ScenarioConfig('single', 'store=edge', 10, rate_per_s=10, threads=4)
        with self.assertRaises(BadRequestError):
            ScenarioConfig('single', 'store=edge', 10)

    def test_unknown_variant(self):
        with self.assertRaises(BadRequestError):
            ScenarioConfig('replication', 'store=edge', 10, rate_per_s=10)

    def test_defaults(self):
        desk = build_configs('smartcity')
        full = build_configs('smartcity', variant='store=edge', full_scale=True)

        self.assertEqual([cfg.variant for cfg in desk], ['store=cloud', 'store=edge'])
        self.assertEqual((desk[0].rate_per_s, desk[0].duration_s, desk[0].repetitions), (5, 120, 3))
        self.assertEqual(len(full), 1)
        self.assertEqual(full[0].duration_s, 600)
        self.assertEqual(build_configs('throughput-read')[0].threads, 100)

    def test_default_topology_links(self):
        topology = default_topology('replication')

        self.assertEqual(topology.profile('edge-1', 'cloud-1').rtt_ms, 50)
        self.assertEqual(topology.profile('edge-1', 'cloud-1').mbps, 100)
        self.assertEqual(topology.profile('edge-2', 'edge-1').rtt_ms, 20)
        self.assertEqual(topology.profile('client', 'edge-2').rtt_ms, 10)

    def test_assign_addresses(self):
        topology = assign_addresses(default_topology('single'))

        ports = []
        for node in topology.nodes:
            if node.role == 'client':
                self.assertEqual(node.addr, '127.0.0.1:0')
                continue
            ports += [parse_address(node.addr)[1], parse_address(node.http)[1]]
        ports.append(parse_address(topology.naming)[1])
        self.assertNotIn(0, ports)
        self.assertEqual(len(set(ports)), len(ports))


class SmartCityPlanTestCase(SimpleTestCase):
    def test_same_seed_same_requests(self):
        self.assertEqual(smartcity_requests(7, 500), smartcity_requests(7, 500))
        self.assertNotEqual(smartcity_requests(7, 500), smartcity_requests(8, 500))

    def test_entry_mix_and_pass_rate(self):
        requests = smartcity_requests(1, 10_000)
        entries = Counter(function for function, _ in requests)
        passed = sum(1 for _, event in requests if event.get('pass', event.get('plan')))

        self.assertAlmostEqual(entries['trafficsensorfilter'] / 10_000, 0.45, delta=0.03)
        self.assertAlmostEqual(entries['objectrecognition'] / 10_000, 0.45, delta=0.03)
        self.assertAlmostEqual(entries['weathersensorfilter'] / 10_000, 0.10, delta=0.02)
        self.assertAlmostEqual(passed / 10_000, 0.5, delta=0.03)

    def test_op_labels(self):
        self.assertEqual(smartcity_op('trafficsensorfilter', {'pass': True}), 'trafficsensorfilter:pass')
        self.assertEqual(smartcity_op('weathersensorfilter', {'pass': False}), 'weathersensorfilter:filtered')
        self.assertEqual(smartcity_op('objectrecognition', {'plan': True}), 'objectrecognition:plan')


class LaggingReplicaClient:
    """Writes land at once; the probed replica always shows the previous write."""

    def __init__(self, lag: bool = True):
        self.lag = lag
        self.values = [None]

    def invoke(self, node_id, function, data=b''):
        if data.startswith(b'w|'):
            self.values.append(data[2:])
            return b'ok'
        return self.values[-1]

    def raw_get(self, node_id, keygroup, key):
        return self.values[-2] if self.lag else self.values[-1]


class ReplicationProbeTestCase(SimpleTestCase):
    def run_ticks(self, client, ticks=5):
        recorder = SampleRecorder('replication', 'store=replicated')
        probe = ReplicationProbe(client, recorder, 'rwitem', 'edge-1', 'edge-2', 'edge-2')
        for _ in range(ticks):
            probe.tick()
        return probe, [sample for sample in recorder.samples if sample.op == 'probe']

    def test_lagging_replica_reads_are_stale(self):
        probe, probes = self.run_ticks(LaggingReplicaClient(lag=True))

        self.assertEqual(len(probes), 5)
        self.assertTrue(all(sample.staleness_us is not None and sample.staleness_us >= 0 for sample in probes))
        self.assertEqual(len(probe.observed_staleness()), 5)

    def test_fresh_replica_reads_are_not_stale(self):
        probe, probes = self.run_ticks(LaggingReplicaClient(lag=False))

        self.assertTrue(all(sample.staleness_us is None for sample in probes))
        self.assertEqual(probe.observed_staleness(), [])

    def test_probe_value_format(self):
        client = LaggingReplicaClient()
        self.run_ticks(client, ticks=1)

        seq, _ = client.values[-1].split(b'|')
        self.assertEqual(seq, b'1')
        self.assertEqual(encode_probe(1, 5), b'1|5')


class InProcessBenchClient(BenchClient):
    """Bench client for an ``InProcessCluster``: RPC to the bound ports, deployment in-process."""

    def __init__(self, cluster: InProcessCluster):
        self.cluster = cluster
        self.topology = cluster.topology
        self.client_id = 'client'
        self.pool = cluster.pool
        self._http = {}

    def _rpc(self, node_id, message):
        return self.pool.call(self.cluster[node_id].address, message, peer_id=node_id)

    def deploy(self, node_id, name, handler, **fields):
        fields = {key: value for key, value in fields.items() if value is not None}
        return self.cluster.deploy(node_id, name, handler, **fields).to_dict()

    def close(self):
        pass


class ScenarioRunTestCase(TransactionTestCase):
    def setUp(self):
        self.cluster = InProcessCluster(['edge-1', 'edge-2', 'cloud-1']).start()
        self.client = InProcessBenchClient(self.cluster)

    def tearDown(self):
        self.cluster.stop()

    def config(self, name, variant, **overrides):
        cfg, = build_configs(name, variant=variant, duration_s=overrides.pop('duration_s', 0.5), repetitions=1)
        for key, value in overrides.items():
            setattr(cfg, key, value)
        return cfg

    def test_single(self):
        for variant in ('store=cloud', 'store=edge'):
            with self.subTest(variant=variant):
                result = run_scenario(self.config('single', variant), self.client)

                self.assertEqual(len(result.samples), 5)
                self.assertTrue(all(sample.ok for sample in result.samples))

    def test_throughput(self):
        for name in ('throughput-read', 'throughput-write'):
            with self.subTest(name=name):
                cfg = self.config(name, 'store=cloud', duration_s=0.2, threads=2, sizes=(1, 1000))

                result = run_scenario(cfg, self.client)

                self.assertEqual({sample.op.split(':')[1] for sample in result.samples}, {'1', '1000'})
                self.assertTrue(all(sample.ok for sample in result.samples))

    def test_replication_variants(self):
        for variant in ('store=cloud', 'store=peer', 'store=replicated'):
            with self.subTest(variant=variant):
                result = run_scenario(self.config('replication', variant), self.client)

                ops = Counter(sample.op for sample in result.samples)
                self.assertEqual(ops, {'write': 5, 'probe': 5, 'read': 5})
                self.assertTrue(all(sample.ok for sample in result.samples if sample.op != 'read'))
                # the first read at the second replica may race the first update
                self.assertGreaterEqual(sum(1 for sample in result.samples if sample.op == 'read' and sample.ok), 4)
                if variant != 'store=replicated':
                    self.assertTrue(all(sample.staleness_us is None for sample in result.samples))
                    self.assertEqual(result.observed_staleness_us, [])

    def test_smartcity(self):
        for variant in ('store=cloud', 'store=edge'):
            with self.subTest(variant=variant):
                result = run_scenario(self.config('smartcity', variant, duration_s=1.0), self.client)

                self.assertEqual(len(result.samples), 5)
                self.assertTrue(all(sample.ok for sample in result.samples))
                self.assertTrue(all(':' in sample.op for sample in result.samples))


class DefaultLinksRunTestCase(TransactionTestCase):
    """Short runs over the built-in topologies' emulated links."""

    def cluster_for(self, name):
        topology = default_topology(name)
        node_ids = [node.id for node in topology.nodes if node.role != 'client']
        return InProcessCluster(node_ids, links=topology.to_dict()['links'])

    def run_variant(self, name, variant, duration_s):
        cfg, = build_configs(name, variant=variant, duration_s=duration_s, repetitions=1)
        with self.cluster_for(name) as cluster:
            return run_scenario(cfg, InProcessBenchClient(cluster))

    def median_latency_us(self, result):
        return percentile([sample.latency_us for sample in result.samples if sample.ok], 50)

    def test_cloud_store_costs_four_edge_cloud_round_trips(self):
        cloud = self.run_variant('single', 'store=cloud', 1.5)
        edge = self.run_variant('single', 'store=edge', 1.5)

        self.assertTrue(all(sample.ok for sample in cloud.samples + edge.samples))
        delta_ms = (self.median_latency_us(cloud) - self.median_latency_us(edge)) / 1000
        self.assertGreaterEqual(delta_ms, 170)
        self.assertLessEqual(delta_ms, 230)

    def test_replicated_staleness_stays_within_one_edge_hop(self):
        result = self.run_variant('replication', 'store=replicated', 2.0)

        probes = [sample for sample in result.samples if sample.op == 'probe']
        self.assertGreaterEqual(len(probes), 15)
        self.assertTrue(all(sample.ok for sample in probes))
        staleness = [sample.staleness_us for sample in probes if sample.staleness_us is not None]
        self.assertTrue(all(value >= 0 for value in staleness))
        self.assertLessEqual(max(staleness, default=0), 15_000)
        self.assertTrue(all(value >= 0 for value in result.observed_staleness_us))


class BenchCommandTestCase(SimpleTestCase):
    def test_attach_needs_topology(self):
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(CommandError):
                call_command('bench', '--scenario', 'single', '--attach', '--out', directory)

    def test_variant_with_all(self):
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(CommandError):
                call_command('bench', '--all', '--variant', 'store=edge', '--out', directory)

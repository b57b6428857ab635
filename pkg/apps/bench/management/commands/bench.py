import tempfile
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from apps.bench.client import BenchClient
from apps.bench.cluster import LocalCluster
from apps.bench.metrics import summarize, write_samples, write_summary
from apps.bench.scenarios import SCENARIOS, build_configs, default_topology, run_scenario
from apps.netem.topology import Topology
from core.exceptions import EnokiError


class Command(BaseCommand):
    help = 'Run benchmark scenarios against a local or already-running cluster and write CSV reports'

    def add_arguments(self, parser):
        scenario = parser.add_mutually_exclusive_group(required=True)
        scenario.add_argument('--scenario', choices=SCENARIOS, help='Scenario to run')
        scenario.add_argument('--all', action='store_true', help='Run every scenario and variant')
        parser.add_argument('--variant', help='Run a single variant, e.g. store=edge (default: all variants)')
        parser.add_argument('--topology', help='Topology file (default: the scenario\'s built-in topology)')
        parser.add_argument('--seed', type=int, default=0, help='Seed for every random choice (default: 0)')
        parser.add_argument(
            '--paper-scale',
            action='store_true',
            dest='full_scale',
            help='Use the long published durations instead of the desk-scale defaults',
        )
        parser.add_argument('--duration', type=float, help='Override the duration of each run in seconds')
        parser.add_argument('--repetitions', type=int, help='Override the number of repetitions')
        parser.add_argument(
            '--attach',
            action='store_true',
            help='Use daemons already running at the topology\'s addresses instead of launching them',
        )
        parser.add_argument('--out', required=True, help='Directory for report.csv and summary.csv')

    def handle(self, *args, **options):
        if options['all'] and options['variant']:
            raise CommandError('--variant cannot be combined with --all')
        if options['attach'] and not options['topology']:
            raise CommandError('--attach needs --topology with the running daemons\' addresses')

        out = Path(options['out'])
        out.mkdir(parents=True, exist_ok=True)
        names = SCENARIOS if options['all'] else (options['scenario'],)

        samples, observed = [], {}
        try:
            for name in names:
                configs = build_configs(
                    name,
                    variant=options['variant'],
                    seed=options['seed'],
                    full_scale=options['full_scale'],
                    duration_s=options['duration'],
                    repetitions=options['repetitions'],
                    topology_path=options['topology'],
                )
                topology = Topology.load(options['topology']) if options['topology'] else default_topology(name)
                for cfg, result in self._run(topology, configs, out, options['attach']):
                    samples.extend(result.samples)
                    observed[(cfg.name, cfg.variant)] = result.observed_staleness_us
                    self.stdout.write(f'{cfg.name} {cfg.variant}: {len(result.samples)} samples')
        except EnokiError as e:
            raise CommandError(str(e))

        rows = write_samples(out / 'report.csv', samples)
        write_summary(out / 'summary.csv', summarize(samples, observed))
        self.stdout.write(self.style.SUCCESS(f'Wrote {rows} samples to {out / "report.csv"} and {out / "summary.csv"}'))

    def _run(self, topology, configs, out, attach):
        if attach:
            client = BenchClient(topology)
            try:
                client.wait_ready(node.id for node in topology.nodes if node.role != 'client')
                for cfg in configs:
                    yield cfg, run_scenario(cfg, client)
            finally:
                client.close()
            return

        for cfg in configs:
            # one cluster per variant
            workdir = Path(tempfile.mkdtemp(prefix=f'{cfg.name}-', dir=out))
            with LocalCluster(topology, workdir) as cluster:
                client = BenchClient(cluster.topology)
                try:
                    yield cfg, run_scenario(cfg, client)
                finally:
                    client.close()

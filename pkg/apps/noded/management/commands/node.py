from django.core.management.base import BaseCommand, CommandError

from apps.netem.topology import Topology
from apps.noded.config import load_node_config
from apps.noded.node import Node
from apps.noded.server import NodeApplication
from core.exceptions import EnokiError


class Command(BaseCommand):
    help = 'Run an Enoki node: function runtime, keygroup replicas and the public HTTP API'

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            required=True,
            help='Node configuration file (JSON)'
        )
        parser.add_argument(
            '--http-threads',
            type=int,
            default=None,
            help='Number of HTTP worker threads (default: ENOKI_HTTP_THREADS)'
        )

    def handle(self, *args, **options):
        try:
            config = load_node_config(options['config'])
            topology = Topology.load(config.topology_path)
        except EnokiError as e:
            raise CommandError(str(e))

        def node_factory():
            return Node(
                config.id,
                topology,
                config.naming_addr,
                listen_rpc=config.listen_rpc,
                role=config.role,
            )

        self.stdout.write(f'Starting node {config.id} (http {config.listen_http}, rpc {config.listen_rpc})...')
        NodeApplication(node_factory, config.listen_http, threads=options['http_threads']).run()

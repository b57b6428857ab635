import signal
import threading

from django.core.management import call_command
from django.core.management.base import BaseCommand, CommandError

from apps.naming.registry import NamingRegistry
from apps.naming.server import NamingServer
from apps.netem.topology import Topology
from core.exceptions import EnokiError


class Command(BaseCommand):
    help = 'Run the central naming service for node addresses and keygroup replica sets'

    def add_arguments(self, parser):
        parser.add_argument(
            '--listen',
            required=True,
            help='Address to listen on for internal RPC, e.g. 127.0.0.1:7000'
        )
        parser.add_argument(
            '--topology',
            help='Topology file used to shape replies to known nodes'
        )
        parser.add_argument(
            '--reset',
            action='store_true',
            help='Clear every node and keygroup record before serving',
        )

    def handle(self, *args, **options):
        call_command('migrate', verbosity=0, interactive=False)

        registry = NamingRegistry()
        if options['reset']:
            registry.reset()

        try:
            topology = Topology.load(options['topology']) if options['topology'] else None
            server = NamingServer(options['listen'], topology=topology, registry=registry)
            address = server.start()
        except EnokiError as e:
            raise CommandError(str(e))

        stopped = threading.Event()

        def signal_handler(sig, frame):
            stopped.set()

        signal.signal(signal.SIGINT, signal_handler)
        signal.signal(signal.SIGTERM, signal_handler)

        self.stdout.write(self.style.SUCCESS(f'Naming service listening on {address}. Press Ctrl+C to stop.'))
        while not stopped.wait(1.0):
            pass
        self.stdout.write('Shutting down naming service...')
        server.stop()

import json

from django.core.management.base import BaseCommand, CommandError

from apps.noded.http_client import NodeHttpClient
from core.exceptions import EnokiError


class Command(BaseCommand):
    help = 'Deploy a function on a running node'

    def add_arguments(self, parser):
        parser.add_argument('--node', required=True, help='HTTP address of the node, e.g. 127.0.0.1:8101')
        parser.add_argument('--name', required=True, help='Function name')
        parser.add_argument('--handler', required=True, help='Builtin name or exec:<command line>')
        parser.add_argument('--threads', type=int, default=1, help='Maximum concurrent instances (default: 1)')
        parser.add_argument('--keygroup', help='Keygroup of the function (default: the function name)')
        parser.add_argument(
            '--no-replicate',
            action='store_true',
            help='Use the existing keygroup remotely instead of replicating it to this node',
        )
        parser.add_argument('--env', nargs='*', default=[], metavar='K=V', help='Environment entries for the handler')

    def handle(self, *args, **options):
        env = {}
        for item in options['env']:
            key, sep, value = item.partition('=')
            if not sep or not key:
                raise CommandError(f'Environment entries must look like K=V, got {item!r}')
            env[key] = value

        client = NodeHttpClient(options['node'])
        try:
            result = client.deploy(
                options['name'],
                options['handler'],
                threads=options['threads'],
                keygroup=options['keygroup'],
                replicate_from_existing=not options['no_replicate'],
                env=env,
            )
        except EnokiError as e:
            raise CommandError(str(e))
        finally:
            client.close()
        self.stdout.write(json.dumps(result))

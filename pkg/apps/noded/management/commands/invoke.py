from django.core.management.base import BaseCommand, CommandError

from apps.noded.http_client import NodeHttpClient
from core.exceptions import EnokiError


class Command(BaseCommand):
    help = 'Invoke a deployed function and print its output'

    def add_arguments(self, parser):
        parser.add_argument('--node', required=True, help='HTTP address of the node')
        parser.add_argument('--name', required=True, help='Function name')
        parser.add_argument('--async', dest='asynchronous', action='store_true', help='Return once the call is queued')
        parser.add_argument('--input', default='', help='Input passed to the function')

    def handle(self, *args, **options):
        client = NodeHttpClient(options['node'])
        try:
            output = client.invoke(options['name'], options['input'].encode('utf-8'), options['asynchronous'])
        except EnokiError as e:
            raise CommandError(str(e))
        finally:
            client.close()
        if options['asynchronous']:
            self.stdout.write(self.style.SUCCESS('accepted'))
        else:
            self.stdout.write(output.decode('utf-8', errors='replace'), ending='')

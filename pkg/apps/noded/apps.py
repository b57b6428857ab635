from django.apps import AppConfig


class NodedConfig(AppConfig):
    name = 'apps.noded'
    verbose_name = 'Node daemon'

from django.apps import AppConfig


class NetemConfig(AppConfig):
    name = 'apps.netem'
    verbose_name = 'Network emulation'

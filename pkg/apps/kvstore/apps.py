from django.apps import AppConfig


class KvstoreConfig(AppConfig):
    name = 'apps.kvstore'
    verbose_name = 'Key-value store'

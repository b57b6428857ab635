from django.apps import AppConfig


class NamingConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.naming'
    verbose_name = 'Naming service'

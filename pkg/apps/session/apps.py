from django.apps import AppConfig


class SessionConfig(AppConfig):
    name = 'apps.session'
    label = 'enoki_session'
    verbose_name = 'Client sessions'

"""
WSGI config for the Enoki node daemon.

It exposes the WSGI callable as a module-level variable named ``application``.
The node command serves it with an embedded gunicorn.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'enoki_platform.settings.development')

application = get_wsgi_application()

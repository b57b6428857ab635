"""
Development settings for the Enoki platform.
"""

from .base import *

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = 'django-insecure-enoki-development-key-not-for-production'

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = config('DEBUG', default=False, cast=bool)

# Development CORS (more permissive)
CORS_ALLOW_ALL_ORIGINS = True

ALLOWED_HOSTS = ['*']

# Database - naming registry in SQLite
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': ENOKI_NAMING_DB,
        'OPTIONS': {
            'timeout': 20,
        },
    }
}

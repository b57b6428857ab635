"""
Base settings for the Enoki platform.
"""

import sys
from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent

# Add apps directory to Python path
sys.path.insert(0, str(BASE_DIR / 'apps'))

# Application definition

THIRD_PARTY_APPS = [
    'ninja',
    'corsheaders',
]

LOCAL_APPS = [
    'apps.kvstore',
    'apps.naming',
    'apps.netem',
    'apps.replication',
    'apps.session',
    'apps.runtime',
    'apps.noded',
    'apps.bench',
]

INSTALLED_APPS = THIRD_PARTY_APPS + LOCAL_APPS

MIDDLEWARE = [
    'corsheaders.middleware.CorsMiddleware',
    'django.middleware.security.SecurityMiddleware',
    'django.middleware.common.CommonMiddleware',
]

ROOT_URLCONF = 'enoki_platform.urls'

WSGI_APPLICATION = 'enoki_platform.wsgi.application'

# The public API never redirects invocation bodies
APPEND_SLASH = False

# Function inputs and kv values can be large
DATA_UPLOAD_MAX_MEMORY_SIZE = 64 * 1024 * 1024

USE_TZ = True
TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Naming registry database (only the naming daemon opens it)
ENOKI_NAMING_DB = config('ENOKI_NAMING_DB', default=str(BASE_DIR / 'naming.sqlite3'))

# Logging: line-oriented "ts level module message", level from ENOKI_LOG
LOG_LEVELS = {
    'error': 'ERROR',
    'warn': 'WARNING',
    'warning': 'WARNING',
    'info': 'INFO',
    'debug': 'DEBUG',
}
ENOKI_LOG = config('ENOKI_LOG', default='info').lower()
LOG_LEVEL = LOG_LEVELS.get(ENOKI_LOG, 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'line': {
            'format': '{asctime} {levelname} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'line',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': LOG_LEVEL,
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
        'apscheduler': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
        'gunicorn.error': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
    },
}

# APScheduler settings - memory store, heartbeats only
SCHEDULER_CONFIG = {
    'apscheduler.jobstores.default': {
        'type': 'memory'
    },
    'apscheduler.executors.default': {
        'type': 'threadpool',
        'max_workers': 4
    },
    'apscheduler.job_defaults.coalesce': True,
    'apscheduler.job_defaults.max_instances': 1,
    'apscheduler.timezone': TIME_ZONE,
}

ENOKI_HEARTBEAT_SECONDS = config('ENOKI_HEARTBEAT_SECONDS', default=5, cast=int)

# Runtime
ENOKI_HANDLER_TIMEOUT_S = config('ENOKI_HANDLER_TIMEOUT_S', default=30.0, cast=float)
ENOKI_QUEUE_CAP = config('ENOKI_QUEUE_CAP', default=10000, cast=int)
ENOKI_MAX_CALL_DEPTH = 16
ENOKI_DRAIN_SECONDS = 5

# Replication
ENOKI_REPLICATION_QUEUE_DEPTH = config('ENOKI_REPLICATION_QUEUE_DEPTH', default=10000, cast=int)
ENOKI_REPLICATION_RETRY_DELAYS = (0.05, 0.2, 0.8)

# Session guarantees
ENOKI_SESSION_RETRY_MS = config('ENOKI_SESSION_RETRY_MS', default=5, cast=int)
ENOKI_SESSION_TIMEOUT_S = config('ENOKI_SESSION_TIMEOUT_S', default=1.0, cast=float)

# Internal RPC and link emulation
ENOKI_RPC_WORKERS = config('ENOKI_RPC_WORKERS', default=512, cast=int)
ENOKI_RPC_TIMEOUT_S = config('ENOKI_RPC_TIMEOUT_S', default=60.0, cast=float)
ENOKI_NETEM_BUCKET_BYTES = config('ENOKI_NETEM_BUCKET_BYTES', default=65536, cast=int)

# Node start-up
ENOKI_NAMING_CONNECT_ATTEMPTS = 10
ENOKI_NAMING_CONNECT_BACKOFF_S = 0.5
ENOKI_HTTP_THREADS = config('ENOKI_HTTP_THREADS', default=64, cast=int)

# Benchmark harness
ENOKI_BENCH_MAX_IN_FLIGHT = config('ENOKI_BENCH_MAX_IN_FLIGHT', default=1024, cast=int)
ENOKI_BENCH_STARTUP_TIMEOUT_S = config('ENOKI_BENCH_STARTUP_TIMEOUT_S', default=30.0, cast=float)

"""
Serves a node's HTTP API with gunicorn inside the node process.

A single gthread worker holds the whole node in memory; the node core starts
when the worker has booted and stops when it exits.
"""

import logging
from typing import Callable

from django.conf import settings
from gunicorn.app.base import BaseApplication

from .node import Node, set_node

logger = logging.getLogger(__name__)


class NodeApplication(BaseApplication):

    def __init__(self, node_factory: Callable[[], Node], bind: str, threads: int = None):
        self.node_factory = node_factory
        self.node = None
        self.options = {
            'bind': bind,
            'workers': 1,
            'worker_class': 'gthread',
            'threads': threads or settings.ENOKI_HTTP_THREADS,
            'timeout': int(settings.ENOKI_HANDLER_TIMEOUT_S) * 2,
            'graceful_timeout': settings.ENOKI_DRAIN_SECONDS + 1,
            'loglevel': settings.LOG_LEVEL.lower(),
            'post_worker_init': self.post_worker_init,
            'worker_exit': self.worker_exit,
        }
        super().__init__()

    def load_config(self):
        for key, value in self.options.items():
            self.cfg.set(key, value)

    def load(self):
        from enoki_platform.wsgi import application
        return application

    def post_worker_init(self, worker):
        node = self.node_factory()
        node.start()
        self.node = node
        set_node(node)
        logger.info(f"ready node={node.id} role={node.role} http={self.options['bind']} rpc={node.address}")

    def worker_exit(self, server, worker):
        if self.node is not None:
            self.node.stop()
        set_node(None)

"""
Launches a naming daemon and one node process per topology node on this machine.
"""

import json
import logging
import os
import socket
import subprocess
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

from django.conf import settings

from apps.netem.topology import Topology
from core.exceptions import UnavailableError
from core.utils import parse_address
from .client import BenchClient

logger = logging.getLogger(__name__)


def free_port(host: str = '127.0.0.1') -> int:
    with socket.socket() as sock:
        sock.bind((host, 0))
        return sock.getsockname()[1]


def _concrete(address: Optional[str]) -> str:
    """Keep an address with a fixed port; pick a free loopback port otherwise."""
    if address:
        host, port = parse_address(address)
        if port:
            return address
        return f"{host}:{free_port(host)}"
    return f"127.0.0.1:{free_port()}"


def await_port(address: str, timeout: float) -> bool:
    host, port = parse_address(address)
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        try:
            with socket.create_connection((host, port), timeout=1.0):
                return True
        except OSError:
            time.sleep(0.1)
    return False


def assign_addresses(topology: Topology) -> Topology:
    """Copy of the topology in which every daemon has a concrete RPC and HTTP address."""
    data = topology.to_dict()
    for node in data['nodes']:
        if node['role'] == 'client':
            continue
        node['addr'] = _concrete(node['addr'])
        node['http'] = _concrete(node.get('http'))
    data['naming'] = _concrete(data.get('naming'))
    return Topology.from_dict(data)


class LocalCluster:
    """
    Naming daemon plus node daemons as child processes of the harness.

    Every process runs this project's management commands with the current
    interpreter and writes its output to a log file in ``workdir``.
    """

    def __init__(self, topology: Topology, workdir: Path, startup_timeout: float = None):
        self.topology = assign_addresses(topology)
        self.workdir = Path(workdir)
        self.startup_timeout = startup_timeout or settings.ENOKI_BENCH_STARTUP_TIMEOUT_S
        self.processes: Dict[str, subprocess.Popen] = {}
        self._logs: List = []

    @property
    def daemon_ids(self) -> List[str]:
        return [node.id for node in self.topology.nodes if node.role != 'client']

    def _spawn(self, name: str, *arguments: str, env: Dict[str, str] = None) -> subprocess.Popen:
        log = open(self.workdir / f'{name}.log', 'wb')
        self._logs.append(log)
        command = [sys.executable, str(settings.BASE_DIR / 'manage.py'), *arguments]
        process = subprocess.Popen(
            command, stdout=log, stderr=subprocess.STDOUT, cwd=settings.BASE_DIR,
            env={**os.environ, **(env or {})},
        )
        self.processes[name] = process
        logger.debug(f"Started {name} (pid {process.pid}): {' '.join(command)}")
        return process

    def _log_tail(self, name: str, lines: int = 20) -> str:
        try:
            text = (self.workdir / f'{name}.log').read_text(errors='replace')
        except OSError:
            return ''
        return '\n'.join(text.splitlines()[-lines:])

    def _unreachable(self, name: str) -> UnavailableError:
        return UnavailableError(f"{name} is unreachable; last log lines:\n{self._log_tail(name)}")

    def start(self) -> 'LocalCluster':
        self.workdir.mkdir(parents=True, exist_ok=True)
        topology_path = self.workdir / 'topology.json'
        self.topology.save(topology_path)
        try:
            self._spawn(
                'naming', 'naming', '--listen', self.topology.naming, '--topology', str(topology_path), '--reset',
                env={'ENOKI_NAMING_DB': str(self.workdir / 'naming.sqlite3')},
            )
            if not await_port(self.topology.naming, self.startup_timeout):
                raise self._unreachable('naming')

            for node_id in self.daemon_ids:
                node = self.topology.node(node_id)
                config_path = self.workdir / f'{node_id}.json'
                config_path.write_text(json.dumps({
                    'id': node.id,
                    'listen_http': node.http,
                    'listen_rpc': node.addr,
                    'naming_addr': self.topology.naming,
                    'topology_path': str(topology_path),
                    'role': node.role,
                }, indent=2))
                self._spawn(node_id, 'node', '--config', str(config_path))

            self._wait_for_nodes()
        except Exception:
            self.stop()
            raise
        logger.info(f"Local cluster up: naming={self.topology.naming} nodes={','.join(self.daemon_ids)}")
        return self

    def _wait_for_nodes(self):
        # a node answers /health only after its RPC listener is up and it has registered
        client = BenchClient(self.topology)
        deadline = time.monotonic() + self.startup_timeout
        try:
            for node_id in self.daemon_ids:
                while not client.http(node_id).health():
                    if self.processes[node_id].poll() is not None or time.monotonic() >= deadline:
                        raise self._unreachable(node_id)
                    time.sleep(0.2)
        finally:
            client.close()

    def stop(self):
        for name, process in reversed(list(self.processes.items())):
            if process.poll() is None:
                process.terminate()
        for name, process in self.processes.items():
            try:
                process.wait(timeout=settings.ENOKI_DRAIN_SECONDS + 5)
            except subprocess.TimeoutExpired:
                logger.warning(f"{name} did not exit after SIGTERM, killing it")
                process.kill()
                process.wait()
        self.processes.clear()
        for log in self._logs:
            log.close()
        self._logs.clear()

    def __enter__(self) -> 'LocalCluster':
        return self.start()

    def __exit__(self, *exc_info):
        self.stop()

"""
HTTP client for a node's public API, used by the CLI and the bench harness.
"""

import logging
from typing import Dict, Optional

import requests

from core.exceptions import EnokiError, InternalError, UnavailableError

logger = logging.getLogger(__name__)


class NodeHttpClient:

    def __init__(self, address: str, timeout: float = 120.0):
        self.base_url = address if address.startswith('http') else f"http://{address}"
        self.timeout = timeout
        self.session = requests.Session()

    def _request(self, method: str, path: str, **kwargs) -> requests.Response:
        try:
            response = self.session.request(method, f"{self.base_url}{path}", timeout=self.timeout, **kwargs)
        except requests.RequestException as e:
            raise UnavailableError(f"{self.base_url} unreachable: {e}")
        if response.status_code >= 400:
            try:
                raise EnokiError.from_wire(response.json())
            except ValueError:
                raise InternalError(f"HTTP {response.status_code}: {response.text[:200]}")
        return response

    def health(self) -> bool:
        try:
            return self._request('GET', '/health').text == 'ok'
        except EnokiError:
            return False

    def deploy(self, name: str, handler: str, threads: int = 1, keygroup: Optional[str] = None,
               replicate_from_existing: bool = True, env: Dict[str, str] = None) -> dict:
        body = {
            'handler': handler,
            'threads': threads,
            'replicate_from_existing': replicate_from_existing,
            'env': env or {},
        }
        if keygroup:
            body['keygroup'] = keygroup
        return self._request('PUT', f'/functions/{name}', json=body).json()

    def invoke(self, name: str, data: bytes = b'', asynchronous: bool = False) -> bytes:
        path = f'/functions/{name}/async' if asynchronous else f'/functions/{name}'
        return self._request('POST', path, data=data).content

    def functions(self) -> list:
        return self._request('GET', '/functions').json()

    def close(self):
        self.session.close()

"""Small JSON-over-HTTP helper with retries, backoff and an in-flight cap."""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any

import httpx

from clh.errors import BackendTimeout, BackendUnavailable

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


@dataclass
class RetryPolicy:
    retries: int = 3
    backoff: float = 0.5  # seconds; doubles after each failed attempt
    max_backoff: float = 8.0


class JsonClient:
    """POSTs JSON bodies; thread-safe.

    ``transport`` is handed straight to :class:`httpx.Client`, which is how
    tests plug in :class:`httpx.MockTransport`.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 60.0,
        api_key_env: str | None = None,
        max_in_flight: int = 8,
        retry: RetryPolicy | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ) -> None:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env) if api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.base_url = base_url.rstrip("/")
        self.retry = retry or RetryPolicy()
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._sleep = sleep
        self.attempts = 0

    def post(self, path: str, payload: dict[str, Any]) -> Any:
        url = f"{self.base_url}/{path.lstrip('/')}"
        delay = self.retry.backoff
        last: Exception | None = None
        for attempt in range(self.retry.retries + 1):
            if attempt:
                self._sleep(delay)
                delay = min(delay * 2, self.retry.max_backoff)
            self.attempts += 1
            try:
                with self._gate:
                    resp = self._client.post(url, json=payload)
            except httpx.TimeoutException as exc:
                last = BackendTimeout(f"{url}: request timed out")
                last.__cause__ = exc
                logger.warning("attempt %d to %s timed out", attempt + 1, url)
                continue
            except httpx.TransportError as exc:
                last = BackendUnavailable(f"{url}: {exc}")
                logger.warning("attempt %d to %s failed: %s", attempt + 1, url, exc)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last = BackendUnavailable(f"{url}: HTTP {resp.status_code}")
                logger.warning("attempt %d to %s returned %d", attempt + 1, url, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise BackendUnavailable(f"{url}: response is not JSON") from exc
        if isinstance(last, BackendTimeout):
            raise last
        raise BackendUnavailable(f"gave up after {self.retry.retries + 1} attempts: {last}")

    def close(self) -> None:
        self._client.close()

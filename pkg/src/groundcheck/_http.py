"""Small JSON-over-HTTP client with bounded retries, shared by remote backends."""

from __future__ import annotations

import logging
import time

import requests

from groundcheck.errors import BackendError

log = logging.getLogger(__name__)

ATTEMPTS = 3
BACKOFF_START = 0.25


def post_json(
    url: str,
    payload: dict,
    token: str | None = None,
    timeout: float = 30.0,
    attempts: int = ATTEMPTS,
    backoff: float = BACKOFF_START,
    session: requests.Session | None = None,
) -> dict:
    """POST ``payload`` and return the decoded JSON object.

    Transport failures and 5xx replies are retried with exponential backoff;
    after the last attempt a ``BackendError`` is raised.
    """
    headers = {"Content-Type": "application/json"}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    poster = session or requests
    last_exc: Exception | None = None
    for attempt in range(attempts):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = poster.post(url, json=payload, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            last_exc = exc
            log.debug("POST %s failed (attempt %d): %s", url, attempt + 1, exc)
            continue
        if resp.status_code >= 500:
            last_exc = BackendError(f"{url} returned HTTP {resp.status_code}")
            continue
        if resp.status_code >= 400:
            raise BackendError(f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
        except ValueError:
            raise BackendError(f"{url} returned a non-JSON body") from None
        if not isinstance(body, dict):
            raise BackendError(f"{url} returned JSON that is not an object")
        return body
    raise BackendError(f"{url} unreachable after {attempts} attempts: {last_exc}")

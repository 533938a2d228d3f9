"""JSON-over-HTTP POST shared by the text-generation and embedder clients."""
from __future__ import annotations

import httpx

from .errors import BadResponse, TransportError


def make_client(timeout: float, max_connections: int, transport=None) -> httpx.Client:
    limits = httpx.Limits(max_connections=max_connections, max_keepalive_connections=max_connections)
    return httpx.Client(timeout=timeout, limits=limits, transport=transport)


def post_json(client: httpx.Client, url: str, payload: dict) -> dict:
    try:
        resp = client.post(url, json=payload)
    except httpx.HTTPError as exc:
        raise TransportError(f"POST {url} failed: {exc}") from exc
    if resp.status_code != 200:
        raise BadResponse(f"POST {url} returned HTTP {resp.status_code}")
    try:
        body = resp.json()
    except ValueError as exc:
        raise BadResponse(f"POST {url} returned non-JSON body") from exc
    if not isinstance(body, dict):
        raise BadResponse(f"POST {url} returned {type(body).__name__}, expected an object")
    return body

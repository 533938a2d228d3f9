"""Embedding providers: synthetic world, precomputed files, HTTP service."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from ._http import make_client, post_json
from .errors import (
    BadResponse,
    DimMismatch,
    NormError,
    ProviderUnavailable,
    UnknownFacet,
    UnknownId,
    UnknownImage,
    Unsupported,
)
from .prompts import PromptSpec
from .store import EmbeddingStore, default_store_name, normalize, normalize_rows, store_load
from .world import SyntheticWorld

IMAGE_GENERAL = "image_general"
IMAGE_PROMPTED = "image_prompted"
TEXT_QUERY = "text_query"
ALL_CAPABILITIES = frozenset({IMAGE_GENERAL, IMAGE_PROMPTED, TEXT_QUERY})


class EmbedderProvider:
    """Base provider. Subclasses override the single-item methods they support.

    All returned vectors are unit-norm float32 arrays of length ``dim``.
    """

    provider_id = "abstract"
    dim: int
    capabilities: frozenset = frozenset()

    def require(self, capability: str) -> None:
        if capability not in self.capabilities:
            raise Unsupported(f"provider {self.provider_id!r} lacks {capability}")

    def embed_image_general(self, image_id: str) -> np.ndarray:
        raise Unsupported(f"provider {self.provider_id!r} lacks {IMAGE_GENERAL}")

    def embed_image_prompted(self, image_id: str, prompt: PromptSpec) -> np.ndarray:
        raise Unsupported(f"provider {self.provider_id!r} lacks {IMAGE_PROMPTED}")

    def embed_query(self, query_text: str, *, facet=None, value=None, query_id=None) -> np.ndarray:
        raise Unsupported(f"provider {self.provider_id!r} lacks {TEXT_QUERY}")

    def embed_images_general(self, image_ids: Sequence[str]) -> np.ndarray:
        self.require(IMAGE_GENERAL)
        return self._stack([self.embed_image_general(i) for i in image_ids])

    def embed_images_prompted(self, image_ids: Sequence[str], prompt: PromptSpec) -> np.ndarray:
        self.require(IMAGE_PROMPTED)
        return self._stack([self.embed_image_prompted(i, prompt) for i in image_ids])

    def _stack(self, vecs) -> np.ndarray:
        if not vecs:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack(vecs).astype(np.float32, copy=False)


class SyntheticProvider(EmbedderProvider):
    """Realizes a promptable embedder over a synthetic world.

    general(i)      = normalize(sum_f s_f(i) e(f, v_f(i)) + eps * eta(i))
    prompted(i, f*) = same, with facet f* weighted by prompt_boost
    query(f, v)     = normalize(e(f, v) + query_blend / V * ones(block f))
    """

    capabilities = ALL_CAPABILITIES

    def __init__(self, world: SyntheticWorld):
        self.world = world
        self.dim = world.dim
        self.provider_id = f"synthetic(seed={world.config.seed})"

    def _raw(self, image_ids: Sequence[str], boost_facet: int | None) -> np.ndarray:
        cfg = self.world.config
        V = cfg.values_per_facet
        vals, sal = self.world.arrays(image_ids)
        n = len(image_ids)
        weights = sal.copy()
        if boost_facet is not None:
            weights[:, boost_facet] *= cfg.prompt_boost
        raw = np.zeros((n, self.dim), dtype=np.float64)
        rows = np.arange(n)
        for f in range(cfg.n_facets):
            raw[rows, f * V + vals[:, f]] += weights[:, f]
        if cfg.noise_scale > 0 and n:
            raw += cfg.noise_scale * np.stack([self.world.noise(i) for i in image_ids])
        return raw

    def _facet_of(self, prompt: PromptSpec) -> int:
        return self.world.facet_index(prompt.facet)

    def embed_images_general(self, image_ids):
        return normalize_rows(self._raw(list(image_ids), None)).reshape(len(image_ids), self.dim)

    def embed_images_prompted(self, image_ids, prompt):
        f = self._facet_of(prompt)
        return normalize_rows(self._raw(list(image_ids), f)).reshape(len(image_ids), self.dim)

    def embed_image_general(self, image_id):
        return self.embed_images_general([image_id])[0]

    def embed_image_prompted(self, image_id, prompt):
        return self.embed_images_prompted([image_id], prompt)[0]

    def embed_query(self, query_text, *, facet=None, value=None, query_id=None):
        if facet is None or value is None:
            facet, value = self.world.parse_query(query_text)
        f = self.world.facet_index(facet)
        v = self.world.value_index(facet, value)
        V = self.world.config.values_per_facet
        raw = np.zeros(self.dim)
        raw[f * V : (f + 1) * V] = self.world.config.query_blend / V
        raw[f * V + v] += 1.0
        return normalize(raw)


QUERIES_TAG = "queries"
GENERAL_TAG = "general"


def prompt_tag(prompt_id: str) -> str:
    return f"prompt_{prompt_id}"


class FileProvider(EmbedderProvider):
    """Serves precomputed vectors from a directory of store files.

    Layout: ``general.fcte``, ``queries.fcte`` (keyed by case id, or by query
    text when no id is given) and ``prompt_<prompt_id>.fcte`` per prompt.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.provider_id = f"file({self.directory})"
        self._stores: dict[str, EmbeddingStore] = {}
        caps = set()
        if (self.directory / default_store_name(GENERAL_TAG)).exists():
            caps.add(IMAGE_GENERAL)
        if (self.directory / default_store_name(QUERIES_TAG)).exists():
            caps.add(TEXT_QUERY)
        if any(self.directory.glob("prompt_*.fcte")):
            caps.add(IMAGE_PROMPTED)
        if not caps:
            raise ProviderUnavailable(f"no store files under {self.directory}")
        self.capabilities = frozenset(caps)
        any_tag = GENERAL_TAG if IMAGE_GENERAL in caps else QUERIES_TAG if TEXT_QUERY in caps else None
        if any_tag is None:
            first = next(self.directory.glob("prompt_*.fcte"))
            self.dim = store_load(first).dim
        else:
            self.dim = self._store(any_tag).dim

    def _store(self, tag: str) -> EmbeddingStore:
        if tag not in self._stores:
            path = self.directory / default_store_name(tag)
            if not path.exists():
                raise Unsupported(f"no store {path.name} in {self.directory}")
            st = store_load(path)
            if hasattr(self, "dim") and st.dim != self.dim:
                raise DimMismatch(f"{path.name} has dim {st.dim}, expected {self.dim}")
            self._stores[tag] = st
        return self._stores[tag]

    def _lookup(self, tag: str, item_id: str) -> np.ndarray:
        try:
            return self._store(tag).get(item_id)
        except UnknownId:
            raise UnknownImage(f"{item_id!r} not in {tag} store") from None

    def embed_image_general(self, image_id):
        self.require(IMAGE_GENERAL)
        return self._lookup(GENERAL_TAG, image_id)

    def embed_image_prompted(self, image_id, prompt):
        self.require(IMAGE_PROMPTED)
        try:
            st = self._store(prompt_tag(prompt.prompt_id))
        except Unsupported:
            raise UnknownFacet(f"no precomputed store for prompt {prompt.prompt_id!r}") from None
        try:
            return st.get(image_id)
        except UnknownId:
            raise UnknownImage(f"{image_id!r} not in prompt store {prompt.prompt_id!r}") from None

    def embed_query(self, query_text, *, facet=None, value=None, query_id=None):
        self.require(TEXT_QUERY)
        st = self._store(QUERIES_TAG)
        key = query_id if query_id is not None and query_id in st else query_text
        try:
            return st.get(key)
        except UnknownId:
            raise UnknownImage(f"no precomputed query embedding for {key!r}") from None


def validated_embedding(values, dim: int, norm_tol: float) -> np.ndarray:
    """Check an embedding received over the wire and renormalize it."""
    if not isinstance(values, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in values):
        raise BadResponse("'embedding' must be an array of numbers")
    if len(values) != dim:
        raise DimMismatch(f"embedding has dim {len(values)}, expected {dim}")
    x = np.asarray(values, dtype=np.float64)
    n = float(np.sqrt(x @ x))
    if not np.isfinite(n) or abs(n - 1.0) > norm_tol:
        raise NormError(f"embedding norm {n!r} is not within {norm_tol} of 1")
    return normalize(x)


class HttpEmbedderProvider(EmbedderProvider):
    """Client for a remote embedder.

    Request ``{"item_id": ..., "prompt": ..., "text": ...}`` (unused keys
    omitted); response ``{"embedding": [floats]}``.
    """

    capabilities = ALL_CAPABILITIES

    def __init__(
        self,
        dim: int,
        url: str | None = None,
        *,
        timeout: float | None = None,
        max_in_flight: int = 8,
        norm_tol: float = 0.05,
        transport=None,
    ):
        self.url = url or os.environ.get("FACET_EMBEDDER_URL")
        if not self.url:
            raise ProviderUnavailable("no embedder endpoint configured (FACET_EMBEDDER_URL)")
        if timeout is None:
            timeout = float(os.environ.get("FACET_EMBEDDER_TIMEOUT_SECS", "30"))
        self.dim = int(dim)
        self.norm_tol = norm_tol
        self.max_in_flight = max_in_flight
        self.provider_id = f"http({self.url})"
        self._client = make_client(timeout, max_in_flight, transport)

    def _request(self, item_id=None, prompt=None, text=None) -> np.ndarray:
        payload = {"item_id": item_id}
        if prompt is not None:
            payload["prompt"] = prompt
        if text is not None:
            payload["text"] = text
        body = post_json(self._client, self.url, payload)
        if "embedding" not in body:
            raise BadResponse("response lacks 'embedding'")
        return validated_embedding(body["embedding"], self.dim, self.norm_tol)

    def embed_image_general(self, image_id):
        return self._request(item_id=image_id)

    def embed_image_prompted(self, image_id, prompt):
        return self._request(item_id=image_id, prompt=prompt.full_prompt)

    def embed_query(self, query_text, *, facet=None, value=None, query_id=None):
        return self._request(item_id=query_id, text=query_text)

    def _map(self, fn, items) -> np.ndarray:
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return self._stack(list(pool.map(fn, items)))

    def embed_images_general(self, image_ids):
        return self._map(self.embed_image_general, image_ids)

    def embed_images_prompted(self, image_ids, prompt):
        return self._map(lambda i: self.embed_image_prompted(i, prompt), image_ids)

    def close(self):
        self._client.close()


def build_store(provider: EmbedderProvider, image_ids: Sequence[str], prompt: PromptSpec | None = None) -> EmbeddingStore:
    ids = list(image_ids)
    if prompt is None:
        return EmbeddingStore(ids, provider.embed_images_general(ids), GENERAL_TAG, dim=provider.dim)
    return EmbeddingStore(ids, provider.embed_images_prompted(ids, prompt), prompt_tag(prompt.prompt_id), dim=provider.dim)


def embed_case_queries(provider: EmbedderProvider, cases) -> np.ndarray:
    """One query embedding per test case, as a (len(cases), dim) float32 matrix."""
    provider.require(TEXT_QUERY)
    vecs = [provider.embed_query(c.query_text, query_id=c.case_id) for c in cases]
    return provider._stack(vecs)

import importlib

import numpy as np
import pytest

from facetret import _kernels_py, search
from facetret.store import EmbeddingStore
from facetret.synth import GeneratorConfig, generate_benchmark
from facetret.world import SyntheticWorldConfig, generate_world


def _backends():
    out = [_kernels_py]
    try:
        out.append(importlib.import_module("facetret._kernels"))
    except ImportError:
        pass
    return out


BACKENDS = _backends()


@pytest.fixture(params=BACKENDS, ids=lambda m: m.BACKEND)
def backend(request, monkeypatch):
    """Route facetret.search through one kernel implementation."""
    monkeypatch.setattr(search, "kernels", request.param)
    return request.param


def random_store(rng, n, dim, prefix="id", tag="general"):
    rows = rng.standard_normal((n, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    ids = [f"{prefix}{i:05d}" for i in rng.permutation(n)]
    return EmbeddingStore(ids, rows, tag)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(SyntheticWorldConfig(n_images=400, seed=3))


@pytest.fixture(scope="session")
def small_bench(small_world):
    return generate_benchmark(small_world, GeneratorConfig(world=small_world.config, cases_per_facet=12, seed=5))


def separation_triples(config):
    """Every (query, low-salience positive, dominant-wrong negative) triple.

    The positive carries value v on the queried facet at low salience and is
    dominant on some other facet; the negative carries a different value u on
    the queried facet and is dominant there. Values on unqueried facets are
    cycled through all V options to vary the rest of each vector.
    """
    from facetret.world import SyntheticImage, SyntheticWorld

    F, V = config.n_facets, config.values_per_facet
    lo, hi = config.salience_low, config.salience_high
    images, triples = [], []
    n = 0
    for f in range(F):
        for v in range(V):
            for u in range(V):
                if u == v:
                    continue
                for g in range(F):
                    if g == f:
                        continue
                    for shift in range(V):
                        pv = [(shift + k) % V for k in range(F)]
                        nv = [(shift + 2 * k + 1) % V for k in range(F)]
                        pv[f], nv[f] = v, u
                        ps = [lo] * F
                        ps[g] = hi
                        ns = [lo] * F
                        ns[f] = hi
                        pid, nid = f"p{n:06d}", f"n{n:06d}"
                        n += 1
                        images += [SyntheticImage(pid, tuple(pv), tuple(ps)), SyntheticImage(nid, tuple(nv), tuple(ns))]
                        triples.append((f, v, pid, nid))
    return SyntheticWorld(config, tuple(images)), triples

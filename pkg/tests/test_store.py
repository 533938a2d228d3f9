import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from facetret.errors import (
    DimMismatch,
    DuplicateId,
    FormatError,
    NormError,
    StoreIOError,
    UnknownId,
    ValidationError,
    ZeroVector,
)
from facetret.store import (
    HEADER,
    MAGIC,
    EmbeddingStore,
    normalize,
    normalize_rows,
    store_get,
    store_load,
    store_loads,
    store_save,
)

from conftest import random_store


def test_normalize_basis_and_345():
    assert normalize([1, 0, 0]).tolist() == [1.0, 0.0, 0.0]
    np.testing.assert_allclose(normalize([3, 4]), [0.6, 0.8], rtol=0, atol=1e-7)


def test_normalize_norm_recomputed_in_float64(rng):
    for _ in range(20):
        v = normalize(rng.standard_normal(64))
        x = v.astype(np.float64)
        assert abs(float(np.sum(x * x)) - 1.0) <= 1e-6


def test_normalize_rejects_zero():
    with pytest.raises(ZeroVector):
        normalize(np.zeros(5))
    with pytest.raises(ZeroVector):
        normalize([1e-13, 0.0])
    with pytest.raises(ZeroVector):
        normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_normalize_rejects_empty_and_nonfinite():
    with pytest.raises(ValidationError):
        normalize([])
    with pytest.raises(ValidationError):
        normalize([np.inf, 1.0])


vectors = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=32).filter(
    lambda v: float(np.linalg.norm(v)) > 1e-3
)


@given(vectors)
def test_normalize_idempotent(v):
    a = normalize(v)
    np.testing.assert_allclose(normalize(a), a, atol=1e-6)


@given(vectors, st.floats(1e-3, 1e3))
def test_normalize_scale_invariant(v, c):
    np.testing.assert_allclose(normalize(np.asarray(v) * c), normalize(v), atol=1e-6)


def test_store_rejects_bad_input():
    with pytest.raises(DuplicateId):
        EmbeddingStore(["a", "a"], np.eye(2))
    with pytest.raises(NormError):
        EmbeddingStore(["a"], [[0.5, 0.0]])
    with pytest.raises(DimMismatch):
        EmbeddingStore(["a"], [[1.0, 0.0]], dim=3)
    for bad in ("", "a\nb", 7):
        with pytest.raises(ValidationError):
            EmbeddingStore([bad], [[1.0]])
    with pytest.raises(ValidationError):
        EmbeddingStore(["a", "b"], [[1.0]])


def test_store_is_read_only():
    s = EmbeddingStore(["a"], [[1.0, 0.0]])
    with pytest.raises(ValueError):
        s.rows[0, 0] = 0.0


def test_get_and_unknown():
    s = EmbeddingStore(["x", "y"], np.eye(2))
    assert store_get(s, "y").tolist() == [0.0, 1.0]
    with pytest.raises(UnknownId):
        store_get(s, "z")
    with pytest.raises(KeyError):
        s.get("z")


def test_id_order_is_lexicographic_rank():
    s = EmbeddingStore(["b", "a10", "a2", "c"], np.eye(4))
    assert s.id_order.tolist() == [2, 0, 1, 3]


def test_empty_store_round_trip(tmp_path):
    s = EmbeddingStore([], np.zeros((0, 4)), tag="")
    p = tmp_path / "empty.fcte"
    store_save(s, p)
    data = p.read_bytes()
    assert len(data) == HEADER.size + 4 == 24
    assert HEADER.unpack_from(data) == (MAGIC, 1, 4, 0)
    back = store_load(p)
    assert len(back) == 0 and back.dim == 4


def test_three_item_round_trip_is_bitwise(tmp_path, rng):
    s = random_store(rng, 3, 7, tag="prompt_x")
    store_save(s, tmp_path / "s.fcte")
    back = store_load(tmp_path / "s.fcte")
    assert back == s
    assert back.ids == s.ids and back.tag == "prompt_x"
    for i in s.ids:
        assert back.get(i).tobytes() == s.get(i).tobytes()


def test_save_is_byte_identical(tmp_path, rng):
    s = random_store(rng, 10, 5)
    store_save(s, tmp_path / "a")
    store_save(EmbeddingStore(list(s.ids), s.rows.copy(), s.tag), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_layout_by_hand():
    s = EmbeddingStore(["é"], [[0.0, 1.0]], tag="t")
    expected = (
        b"FCTE" + struct.pack("<IIQ", 1, 2, 1)
        + struct.pack("<I", 1) + b"t"
        + struct.pack("<I", 2) + "é".encode()
        + struct.pack("<2f", 0.0, 1.0)
    )
    from facetret.store import _encode

    assert _encode(s) == expected
    assert store_loads(expected) == s


def _valid_bytes():
    from facetret.store import _encode

    return bytearray(_encode(EmbeddingStore(["a", "b"], np.eye(3)[:2], "g")))


def test_corrupted_magic():
    data = _valid_bytes()
    data[0:4] = b"XXXX"
    with pytest.raises(FormatError):
        store_loads(bytes(data))


def test_bad_version_truncation_and_trailing():
    data = _valid_bytes()
    v = bytearray(data)
    v[4] = 2
    with pytest.raises(FormatError):
        store_loads(bytes(v))
    for cut in (3, 19, 25, len(data) - 1):
        with pytest.raises(FormatError):
            store_loads(bytes(data[:cut]))
    with pytest.raises(FormatError):
        store_loads(bytes(data) + b"\0")


def test_zero_row_rejected():
    data = _valid_bytes()
    data[-12:] = b"\0" * 12
    with pytest.raises(NormError):
        store_loads(bytes(data))


def test_duplicate_ids_in_file():
    data = bytes(_valid_bytes()).replace(b"\x01\x00\x00\x00b", b"\x01\x00\x00\x00a")
    with pytest.raises(DuplicateId):
        store_loads(data)


def test_load_tolerance_is_looser_than_construction():
    row = np.array([[1.0 + 5e-5, 0.0]], dtype=np.float32)
    with pytest.raises(NormError):
        EmbeddingStore(["a"], row)
    from facetret.store import _encode

    raw = bytearray(_encode(EmbeddingStore(["a"], [[1.0, 0.0]])))
    raw[-8:-4] = struct.pack("<f", float(row[0, 0]))
    assert store_loads(bytes(raw)).get("a")[0] == row[0, 0]


def test_io_errors(tmp_path):
    with pytest.raises(StoreIOError):
        store_load(tmp_path / "missing.fcte")
    with pytest.raises(StoreIOError):
        store_save(EmbeddingStore(["a"], [[1.0]]), tmp_path / "no" / "dir" / "x.fcte")
    assert StoreIOError("x").exit_code == 2


ids_st = st.lists(
    st.text(st.characters(blacklist_characters="\n\r", blacklist_categories=("Cs",)), min_size=1, max_size=12),
    unique=True,
    max_size=20,
)


@settings(max_examples=60, deadline=None)
@given(ids_st, st.integers(1, 16), st.integers(0, 2**32 - 1), st.text(max_size=10))
def test_round_trip_property(ids, dim, seed, tag):
    rows = np.random.default_rng(seed).standard_normal((len(ids), dim))
    if len(ids):
        rows = normalize_rows(rows)
    s = EmbeddingStore(ids, rows.reshape(len(ids), dim), tag, dim=dim)
    from facetret.store import _encode

    back = store_loads(_encode(s))
    assert back == s
    assert _encode(back) == _encode(s)

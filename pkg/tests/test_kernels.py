import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrelm import _pykernels as py
from ctrelm import kernels
from ctrelm.data import field_key

try:
    from ctrelm import _kernels as cy
except ImportError:  # extension not built
    cy = None

needs_cython = pytest.mark.skipif(cy is None, reason="compiled kernels not built")

# published FNV-1a 64-bit vectors
FNV_VECTORS = {
    b"": 0xCBF29CE484222325,
    b"a": 0xAF63DC4C8601EC8C,
    b"foobar": 0x85944171F73967E8,
}

# frozen outputs of the seeded hash; any change breaks model/table portability
HASH_VECTORS = [
    (b"", 0, 0xF52A15E9A9B5E89B),
    (b"", 42, 0x4E43D7F82E037C16),
    (b"a", 0, 0x02C0BDBF481420F8),
    (field_key("C1", "abc"), 0, 0xEBD1E02D0E1F6ED2),
    (field_key("C1", "abc"), 42, 0x4978252D02B03EB9),
    (field_key("I1"), 0, 0x29188E2786FE8480),
    (field_key("site_id", "85f751fd"), 2**64 - 1, 0x6D52550D57FC1F66),
]


@pytest.mark.parametrize("data,expected", FNV_VECTORS.items())
def test_fnv1a_reference_vectors(data, expected):
    assert py.fnv1a64(data) == expected


@pytest.mark.parametrize("key,seed,expected", HASH_VECTORS)
def test_frozen_hash_vectors(key, seed, expected):
    assert py.hash_key(key, seed) == expected
    assert int(kernels.hash_keys([key], seed)[0]) == expected


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


@needs_cython
@settings(max_examples=50, deadline=None)
@given(st.lists(st.binary(max_size=40), max_size=30), st.integers(0, 2**64 - 1))
def test_hash_backends_agree(keys, seed):
    assert cy.hash_keys(keys, seed).tolist() == py.hash_keys(keys, seed).tolist()


def _random_rows(rng, n_rows, dims):
    lengths = rng.integers(0, 8, size=n_rows)
    indptr = np.r_[0, np.cumsum(lengths)].astype(np.int64)
    idx = rng.integers(0, dims, size=indptr[-1]).astype(np.int64)
    vals = rng.normal(size=indptr[-1])
    return indptr, idx, vals


def _dense(indptr, idx, vals, dims):
    out = np.zeros((len(indptr) - 1, dims))
    for r in range(len(indptr) - 1):
        for k in range(indptr[r], indptr[r + 1]):
            out[r, idx[k]] += vals[k]
    return out


@pytest.mark.parametrize("impl", [py, pytest.param(cy, marks=needs_cython)], ids=["python", "cython"])
def test_coalesce_matches_dense_scatter(impl):
    rng = np.random.default_rng(3)
    indptr, idx, vals = _random_rows(rng, 60, 5)
    ptr, oi, ov = impl.coalesce_rows(indptr, idx, vals)
    for r in range(60):
        row = oi[ptr[r]:ptr[r + 1]]
        assert np.all(np.diff(row) > 0)
    np.testing.assert_allclose(_dense(ptr, oi, ov, 5), _dense(indptr, idx, vals, 5), atol=1e-12)


def test_coalesce_empty():
    ptr, oi, ov = kernels.coalesce_rows(np.zeros(3, np.int64), np.zeros(0, np.int64), np.zeros(0))
    assert ptr.tolist() == [0, 0, 0] and oi.size == 0 and ov.size == 0


def _sgd_problem(seed):
    rng = np.random.default_rng(seed)
    n, F, d, buckets = 300, 4, 3, 7
    rows = rng.integers(0, buckets, size=(n, F)) + buckets * np.arange(F)
    rows[rng.random((n, F)) < 0.2] = -1
    labels = (rng.random(n) < 0.3).astype(float)
    emb = rng.uniform(-0.05, 0.05, size=(F * buckets, d))
    proj = rng.uniform(-0.05, 0.05, size=(F, d))
    return rows.astype(np.int64), labels, emb, proj, np.zeros(1)


@needs_cython
def test_sgd_backends_agree():
    a = _sgd_problem(0)
    b = tuple(x.copy() for x in a)
    la, bad_a = cy.sgd_epoch(*a, 0.1)
    lb, bad_b = py.sgd_epoch(*b, 0.1)
    assert bad_a == bad_b == -1
    np.testing.assert_allclose(la, lb, rtol=1e-10, atol=1e-12)
    for x, y in zip(a[2:], b[2:]):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


def test_sgd_single_step_matches_hand_gradient():
    rows = np.array([[0, 2]], dtype=np.int64)
    emb = np.array([[0.1, -0.2], [9.0, 9.0], [0.3, 0.4]])
    proj = np.array([[0.5, 0.5], [-1.0, 2.0]])
    bias = np.array([0.25])
    z = 0.25 + (0.5 * 0.1 + 0.5 * -0.2) + (-1.0 * 0.3 + 2.0 * 0.4)
    p = 1 / (1 + np.exp(-z))
    g = 0.5 * (p - 1.0)
    want_emb = emb.copy()
    want_emb[0] -= g * proj[0]
    want_emb[2] -= g * proj[1]
    want_proj = proj.copy()
    want_proj[0] -= g * emb[0]
    want_proj[1] -= g * emb[2]
    losses, bad = kernels.sgd_epoch(rows, np.array([1.0]), emb, proj, bias, 0.5)
    assert bad == -1
    assert losses[0] == pytest.approx(-np.log(p), rel=1e-12)
    np.testing.assert_allclose(emb, want_emb, rtol=1e-14)
    np.testing.assert_allclose(proj, want_proj, rtol=1e-14)
    assert bias[0] == pytest.approx(0.25 - g, rel=1e-14)


def test_sgd_reports_divergence_step():
    rows, labels, emb, proj, bias = _sgd_problem(1)
    emb[:] = 1e200
    proj[:] = 1e200
    _, bad = kernels.sgd_epoch(rows, labels, emb, proj, bias, 1.0)
    assert bad >= 0

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepida.errors import InvalidInput, InvalidLabels, ShapeMismatch, SingularMatrix
from deepida.linalg import (
    between_class_cov,
    center,
    centering_weights,
    cross_cov,
    inv_sqrt,
    sym_eig,
    total_cov,
    whiten_views,
    whitened_pair,
)

from instances import random_views


def brute_between(h, labels):
    n = h.shape[0]
    mu = h.mean(axis=0)
    s = np.zeros((h.shape[1], h.shape[1]))
    for c in np.unique(labels):
        rows = h[labels == c]
        diff = rows.mean(axis=0) - mu
        s += rows.shape[0] * np.outer(diff, diff)
    return s / (n - 1)


def brute_cross(a, b):
    n = a.shape[0]
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    out = np.zeros((a.shape[1], b.shape[1]))
    for i in range(n):
        for j in range(b.shape[1]):
            out[:, j] += (a[i] - ma) * (b[i, j] - mb[j])
    return out / (n - 1)


def symmetric(rng, n):
    a = rng.standard_normal((n, n))
    return a + a.T


# -- sym_eig ----------------------------------------------------------------------

def test_sym_eig_diagonal():
    pairs = sym_eig(np.diag([2.0, 1.0]))
    np.testing.assert_allclose(pairs.values, [2.0, 1.0])
    np.testing.assert_allclose(pairs.vectors, np.eye(2))


def test_sym_eig_swap():
    pairs = sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(pairs.values, [1.0, -1.0], atol=1e-15)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(pairs.vectors, [[s, s], [s, -s]], atol=1e-15)


def test_sym_eig_reconstructs_5x5():
    a = symmetric(np.random.default_rng(0), 5)
    vals, vecs = sym_eig(a)
    assert np.linalg.norm(vecs @ np.diag(vals) @ vecs.T - a) < 1e-10


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 64), seed=st.integers(0, 2**32 - 1))
def test_sym_eig_reconstruction_property(n, seed):
    a = symmetric(np.random.default_rng(seed), n)
    vals, vecs = sym_eig(a)
    assert np.linalg.norm(a - (vecs * vals) @ vecs.T) / np.linalg.norm(a) < 1e-10
    assert np.all(np.diff(vals) <= 0)


def test_sym_eig_signs_deterministic():
    a = symmetric(np.random.default_rng(3), 6)
    v1 = sym_eig(a).vectors
    v2 = sym_eig(a.copy()).vectors
    np.testing.assert_array_equal(v1, v2)
    first = v1[np.argmax(np.abs(v1) > 1e-10, axis=0), np.arange(6)]
    assert np.all(first > 0)


def test_sym_eig_rejects_nonfinite():
    with pytest.raises(InvalidInput):
        sym_eig(np.array([[1.0, np.nan], [np.nan, 1.0]]))
    with pytest.raises(ShapeMismatch):
        sym_eig(np.ones((2, 3)))


# -- inv_sqrt -----------------------------------------------------------------------

def test_inv_sqrt_identity():
    np.testing.assert_allclose(inv_sqrt(np.eye(3)), np.eye(3), atol=1e-15)


def test_inv_sqrt_diagonal():
    np.testing.assert_allclose(inv_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]), atol=1e-15)


def test_inv_sqrt_ridge_shift():
    np.testing.assert_allclose(inv_sqrt(np.diag([3.0, 8.0]), ridge=1.0), np.diag([0.5, 1 / 3]), atol=1e-15)


def test_inv_sqrt_singular():
    with pytest.raises(SingularMatrix):
        inv_sqrt(np.diag([1.0, 0.0]))
    with pytest.raises(InvalidInput):
        inv_sqrt(np.eye(2), ridge=-1.0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_inv_sqrt_squares_to_inverse(n, seed):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((n, n))
    a = b @ b.T + 0.1 * np.eye(n)
    r = inv_sqrt(a)
    assert np.linalg.norm(r @ r @ a - np.eye(n)) < 1e-8


# -- covariances --------------------------------------------------------------------

def test_between_class_two_points():
    h = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
    s = between_class_cov(h, np.array([1, 1, 2, 2]))
    np.testing.assert_allclose(s, np.array([[4 / 3, 0], [0, 0]]), atol=1e-15)


def test_between_class_identical_rows():
    h = np.tile([[2.0, -1.0, 0.5]], (6, 1))
    np.testing.assert_array_equal(between_class_cov(h, np.array([1, 1, 2, 2, 3, 3])), np.zeros((3, 3)))


def test_between_class_triangle_matches_brute_force():
    rng = np.random.default_rng(1)
    verts = np.array([[0.0, 1.0], [np.sqrt(3) / 2, -0.5], [-np.sqrt(3) / 2, -0.5]])
    labels = np.repeat([0, 1, 2], 5)
    h = verts[labels] + 0.1 * rng.standard_normal((15, 2))
    np.testing.assert_allclose(between_class_cov(h, labels), brute_between(h, labels), atol=1e-12)


def test_between_class_unbalanced_matches_brute_force():
    rng = np.random.default_rng(2)
    labels = np.array([0] * 3 + [1] * 7 + [2] * 12)
    h = rng.standard_normal((22, 4)) + labels[:, None]
    np.testing.assert_allclose(between_class_cov(h, labels), brute_between(h, labels), atol=1e-12)


def test_between_class_bad_labels():
    with pytest.raises((InvalidLabels, ShapeMismatch)):
        between_class_cov(np.zeros((4, 2)), np.array([1, 2, 3]))


def test_total_cov_two_rows():
    np.testing.assert_allclose(total_cov(np.array([[1.0, 0.0], [-1.0, 0.0]])), [[2.0, 0.0], [0.0, 0.0]])


def test_total_cov_constant_and_small():
    np.testing.assert_array_equal(total_cov(np.ones((5, 3))), np.zeros((3, 3)))
    with pytest.raises(InvalidInput):
        total_cov(np.ones((1, 3)))


def test_total_cov_matches_numpy():
    h = np.random.default_rng(4).standard_normal((30, 5))
    np.testing.assert_allclose(total_cov(h), np.cov(h, rowvar=False), atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 4), o=st.integers(1, 6))
def test_total_is_between_plus_within(seed, k, o):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.full(rng.integers(2, 8), c) for c in range(k)])
    h = rng.standard_normal((labels.size, o)) + rng.standard_normal(k)[labels, None]
    within = np.zeros((o, o))
    for c in range(k):
        d = h[labels == c] - h[labels == c].mean(axis=0)
        within += d.T @ d
    within /= labels.size - 1
    sb = between_class_cov(h, labels)
    st_ = total_cov(h)
    np.testing.assert_allclose(st_, sb + within, atol=1e-10)
    assert np.linalg.eigvalsh(st_ - sb).min() > -1e-10


def test_cross_cov_cases():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((12, 3))
    b = rng.standard_normal((12, 4))
    np.testing.assert_allclose(cross_cov(a, a), total_cov(a), atol=1e-14)
    np.testing.assert_array_equal(cross_cov(a, np.full((12, 2), 7.0)), np.zeros((3, 2)))
    np.testing.assert_allclose(cross_cov(a, b), brute_cross(a, b), atol=1e-12)
    with pytest.raises(ShapeMismatch):
        cross_cov(a, b[:10])


def test_class_mean_centering_weights():
    labels = np.array([1, 1, 1, 2])
    w = centering_weights(labels, "class_mean")
    np.testing.assert_allclose(w, [1 / 6, 1 / 6, 1 / 6, 1 / 2])
    h = np.array([[0.0], [0.0], [0.0], [4.0]])
    np.testing.assert_allclose(center(h, w)[:, 0], [-2, -2, -2, 2])


# -- whitening ----------------------------------------------------------------------

def test_single_class_gives_zero_m():
    rng = np.random.default_rng(6)
    views = [rng.standard_normal((10, 3)), rng.standard_normal((10, 2))]
    M, _ = whitened_pair(views, np.ones(10, dtype=int))
    for m in M:
        np.testing.assert_allclose(m, 0.0, atol=1e-14)


def test_duplicated_view_is_fully_correlated():
    rng = np.random.default_rng(7)
    h = rng.standard_normal((50, 4))
    _, N = whitened_pair([h, h.copy()], np.repeat([0, 1], 25), ridge=0.0)
    np.testing.assert_allclose(np.linalg.svd(N[(0, 1)], compute_uv=False), 1.0, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_m_spectrum_in_unit_interval(seed):
    views, y = random_views(np.random.default_rng(seed), n=20, dims=(3, 5))
    M, N = whitened_pair(views, y)
    for m in M:
        ev = np.linalg.eigvalsh(m)
        assert ev.min() >= -1e-10 and ev.max() <= 1 + 1e-8
    np.testing.assert_array_equal(N[(1, 0)], N[(0, 1)].T)


def test_whitened_ridge_recorded():
    views, y = random_views(np.random.default_rng(8), n=20, dims=(3, 3))
    wh = whiten_views(views, y, ridge=1e-2)
    for h, r in zip(views, wh.ridges):
        np.testing.assert_allclose(r, 1e-2 * np.trace(np.cov(h, rowvar=False)) / 3)

"""Dense symmetric linear algebra and the covariance operators of the objective.

All covariances use the ``1/(n-1)`` divisor. Centering is controlled by a
row-weight vector ``w`` (``sum(w) == 1``): the centered matrix is
``(I - 1 w^T) H``. ``"weighted"`` centering uses ``w = 1/n`` (sample grand
mean); ``"class_mean"`` uses the unweighted mean of the class means.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidInput, InvalidLabels, NumericalFailure, ShapeMismatch, SingularMatrix

DEFAULT_RIDGE = 1e-4
SIGN_TOL = 1e-10
SINGULAR_TOL = 1e-12
CENTERINGS = ("weighted", "class_mean")


class EigenPairs(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray


def _as_square(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} has non-finite entries")
    return a


def fix_signs(vectors):
    """Flip columns so the first component larger than ``SIGN_TOL`` is positive."""
    vectors = np.array(vectors, dtype=np.float64, copy=True)
    big = np.abs(vectors) > SIGN_TOL
    first = np.argmax(big, axis=0)
    pivots = vectors[first, np.arange(vectors.shape[1])]
    vectors[:, pivots < 0] *= -1.0
    return vectors


def sym_eig(a) -> EigenPairs:
    """Full eigendecomposition of a symmetric matrix, eigenvalues descending.

    Only the lower triangle is referenced. Eigenvector signs follow
    :func:`fix_signs`, so results are reproducible across calls.
    """
    a = _as_square(a)
    try:
        values, vectors = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolver did not converge: {exc}") from exc
    order = np.argsort(-values, kind="stable")
    return EigenPairs(values[order], fix_signs(vectors[:, order]))


def inv_sqrt(a, ridge=0.0):
    """Return ``(a + ridge*I)^(-1/2)`` via the spectral decomposition."""
    if ridge < 0:
        raise InvalidInput("ridge must be nonnegative")
    a = _as_square(a)
    shifted = a + ridge * np.eye(a.shape[0])
    values, vectors = sym_eig(shifted)
    if values[-1] < SINGULAR_TOL:
        raise SingularMatrix(f"smallest eigenvalue {values[-1]:.3e} is below {SINGULAR_TOL:g}")
    out = (vectors / np.sqrt(values)) @ vectors.T
    return 0.5 * (out + out.T)


def relative_ridge(s, scale=DEFAULT_RIDGE):
    """Ridge amount ``scale * trace(s) / dim`` used before whitening."""
    return scale * np.trace(s) / s.shape[0]


# -- centering ----------------------------------------------------------------

def class_indicator(labels, classes=None):
    """One-hot matrix ``Z`` (n x K) and the class ids it encodes."""
    labels = np.asarray(labels)
    if classes is None:
        classes = np.unique(labels)
    z = (labels[:, None] == np.asarray(classes)[None, :]).astype(np.float64)
    counts = z.sum(axis=0)
    if np.any(counts == 0):
        missing = np.asarray(classes)[counts == 0]
        raise InvalidLabels(f"classes absent from labels: {missing.tolist()}")
    if np.any(z.sum(axis=1) == 0):
        raise InvalidLabels("labels contain ids outside the declared classes")
    return z, np.asarray(classes)


def centering_weights(labels, centering="weighted"):
    """Row weights ``w`` defining the center ``mu = H^T w``."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if centering == "weighted":
        return np.full(n, 1.0 / n)
    if centering == "class_mean":
        z, _ = class_indicator(labels)
        counts = z.sum(axis=0)
        return (z / counts).sum(axis=1) / z.shape[1]
    raise InvalidInput(f"unknown centering {centering!r}; expected one of {CENTERINGS}")


def center(h, w=None):
    h = np.asarray(h, dtype=np.float64)
    if w is None:
        return h - h.mean(axis=0)
    return h - w @ h


def class_projector(labels):
    """``P = Z (Z^T Z)^{-1} Z^T``; replaces each row by its class mean."""
    z, _ = class_indicator(labels)
    return (z / z.sum(axis=0)) @ z.T


# -- covariances --------------------------------------------------------------

def _check_matrix(h, name="h"):
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2:
        raise ShapeMismatch(f"{name} must be a 2-D matrix")
    if not np.all(np.isfinite(h)):
        raise InvalidInput(f"{name} has non-finite entries")
    return h


def total_cov(h, w=None):
    """``(1/(n-1)) Hc^T Hc`` for the centered rows ``Hc``."""
    h = _check_matrix(h)
    n = h.shape[0]
    if n < 2:
        raise InvalidInput("total covariance needs at least 2 rows")
    hc = center(h, w)
    s = hc.T @ hc / (n - 1)
    return 0.5 * (s + s.T)


def between_class_cov(h, labels, w=None):
    """``(1/(n-1)) sum_k n_k (mu_k - mu)(mu_k - mu)^T``, class-size weighted."""
    h = _check_matrix(h)
    labels = np.asarray(labels)
    n = h.shape[0]
    if labels.shape != (n,):
        raise ShapeMismatch("labels must have one entry per row")
    if n < 2:
        raise InvalidInput("between-class covariance needs at least 2 rows")
    z, _ = class_indicator(labels)
    hc = center(h, w)
    sums = z.T @ hc
    s = (sums.T / z.sum(axis=0)) @ sums / (n - 1)
    return 0.5 * (s + s.T)


def cross_cov(h_d, h_j, w=None):
    """``(1/(n-1)) centered(h_d)^T centered(h_j)``."""
    h_d = _check_matrix(h_d, "h_d")
    h_j = _check_matrix(h_j, "h_j")
    if h_d.shape[0] != h_j.shape[0]:
        raise ShapeMismatch(f"row counts differ: {h_d.shape[0]} vs {h_j.shape[0]}")
    n = h_d.shape[0]
    if n < 2:
        raise InvalidInput("cross covariance needs at least 2 rows")
    return center(h_d, w).T @ center(h_j, w) / (n - 1)


class Whitened(NamedTuple):
    M: list
    N: dict
    whiteners: list
    ridges: list


def whiten_views(h_list, labels, ridge=DEFAULT_RIDGE, centering="weighted") -> Whitened:
    """Whitened between-class matrices ``M^d`` and cross matrices ``N_dj``.

    ``ridge`` is relative: view d adds ``ridge * trace(S_t^d) / o_d`` to the
    diagonal of its total covariance before inversion. ``N`` maps every
    ordered pair ``(d, j)``, ``d != j``, to ``N_dj``.
    """
    h_list = [_check_matrix(h, f"view {d + 1} output") for d, h in enumerate(h_list)]
    labels = np.asarray(labels)
    n = h_list[0].shape[0]
    for d, h in enumerate(h_list):
        if h.shape[0] != n:
            raise ShapeMismatch(f"view {d + 1} has {h.shape[0]} rows, expected {n}")
    w = centering_weights(labels, centering)
    whiteners, ridges, M = [], [], []
    for h in h_list:
        st = total_cov(h, w)
        r = relative_ridge(st, ridge)
        wd = inv_sqrt(st, r)
        sb = between_class_cov(h, labels, w)
        m = wd @ sb @ wd
        M.append(0.5 * (m + m.T))
        whiteners.append(wd)
        ridges.append(r)
    N = {}
    D = len(h_list)
    for d in range(D):
        for j in range(d + 1, D):
            ndj = whiteners[d] @ cross_cov(h_list[d], h_list[j], w) @ whiteners[j]
            N[(d, j)] = ndj
            N[(j, d)] = ndj.T.copy()
    return Whitened(M, N, whiteners, ridges)


def whitened_pair(h_list, labels, ridge=DEFAULT_RIDGE, centering="weighted"):
    """Return ``(M_list, N_table)`` for the coupled eigensystem."""
    out = whiten_views(h_list, labels, ridge=ridge, centering=centering)
    return out.M, out.N

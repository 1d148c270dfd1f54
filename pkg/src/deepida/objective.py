"""Eigenvalue-sum objective: coupled eigensystem solver, loss, and gradient.

For view outputs ``H^1..H^D`` the whitened matrices are

    M^d  = S_t^d^{-1/2} S_b^d S_t^d^{-1/2}
    N_dj = S_t^d^{-1/2} S_dj  S_t^j^{-1/2}

and view d's coupled matrix, given the other views' bases, is

    C_d = c1 M^d + c2 sum_{j != d} N_dj G_j G_j^T N_dj^T,   c1 = rho/D,
                                                           c2 = 2(1-rho)/(D(D-1)).

The solver updates ``G_d`` <- top-l eigenvectors of ``C_d`` cyclically. That
update is exact block-coordinate ascent on

    phi = c1 sum_d tr(G_d^T M^d G_d) + c2 sum_{d<j} ||G_d^T N_dj G_j||_F^2,

so ``phi`` is the quantity recorded per sweep (it never decreases). The loss
is ``-sum_d sum_{r<=l} eta_{d,r}`` with ``eta_d`` the top-l eigenvalues of
``C_d`` at the final bases.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, NumericalFailure, ShapeMismatch
from .linalg import (
    CENTERINGS,
    DEFAULT_RIDGE,
    center,
    centering_weights,
    class_indicator,
    fix_signs,
    relative_ridge,
    sym_eig,
    whiten_views,
)

TIE_TOL = 1e-12


class DegenerateSpectrumWarning(RuntimeWarning):
    """The l-th and (l+1)-th eigenvalues coincide; the top-l subspace is not unique."""


@dataclass(frozen=True)
class IdaConfig:
    """Objective hyperparameters.

    ``l=None`` resolves to ``min(K - 1, o_1, ..., o_D)`` at use sites.
    ``ridge`` is relative to ``trace(S_t)/o``.
    """

    rho: float = 0.5
    l: int | None = None
    ridge: float = DEFAULT_RIDGE
    eps_gamma: float = 1e-18
    max_gamma_iters: int = 1000
    centering: str = "weighted"

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidConfig(f"rho must lie in [0, 1], got {self.rho}")
        if self.l is not None and (int(self.l) != self.l or self.l < 1):
            raise InvalidConfig(f"l must be a positive integer, got {self.l}")
        if self.ridge < 0:
            raise InvalidConfig("ridge must be nonnegative")
        if self.eps_gamma <= 0:
            raise InvalidConfig("eps_gamma must be positive")
        if int(self.max_gamma_iters) != self.max_gamma_iters or self.max_gamma_iters < 1:
            raise InvalidConfig("max_gamma_iters must be a positive integer")
        if self.centering not in CENTERINGS:
            raise InvalidConfig(f"centering must be one of {CENTERINGS}")

    def constants(self, n_views):
        if n_views < 2:
            raise InvalidConfig("at least two views are required")
        c1 = self.rho / n_views
        c2 = 2.0 * (1.0 - self.rho) / (n_views * (n_views - 1))
        return c1, c2

    def resolve_l(self, n_classes, out_dims):
        cap = min(n_classes - 1, *out_dims)
        if cap < 1:
            raise InvalidConfig(f"no valid projection dimension (K={n_classes}, o={list(out_dims)})")
        if self.l is None:
            return cap
        if self.l > cap:
            raise InvalidConfig(f"l={self.l} exceeds min(K-1, o_1..o_D)={cap}")
        return int(self.l)


@dataclass
class IdaProjection:
    """Converged bases ``gammas`` (o_d x l) and eigenvalues ``lambdas`` per view.

    ``whiteners`` holds ``S_t^{-1/2}`` per view when the projection was built
    from view outputs; :meth:`loadings` then returns ``A_d = S_t^{-1/2} G_d``.
    ``history`` records the block-ascent objective after every sweep.
    """

    gammas: list
    lambdas: list
    converged: bool
    iterations: int
    whiteners: list | None = None
    history: list = field(default_factory=list)
    degenerate: bool = False

    def loadings(self):
        if self.whiteners is None:
            raise InvalidConfig("projection has no whiteners; build it with loss_value")
        return [w @ g for w, g in zip(self.whiteners, self.gammas)]


def _n_views(M_list, N_table):
    D = len(M_list)
    for d in range(D):
        m = np.asarray(M_list[d])
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeMismatch(f"M[{d}] must be square")
        for j in range(D):
            if j == d:
                continue
            if (d, j) not in N_table:
                raise ShapeMismatch(f"N table lacks pair {(d, j)}")
            if N_table[(d, j)].shape != (m.shape[0], M_list[j].shape[0]):
                raise ShapeMismatch(f"N[{(d, j)}] has shape {N_table[(d, j)].shape}")
    return D


def coupled_matrix(d, M_list, N_table, gammas, c1, c2):
    """``C_d`` for the current bases of the other views."""
    c = c1 * M_list[d]
    for j, g in enumerate(gammas):
        if j == d:
            continue
        t = N_table[(d, j)] @ g
        c = c + c2 * (t @ t.T)
    return 0.5 * (c + c.T)


def block_objective(M_list, N_table, gammas, c1, c2):
    """The quantity the cyclic updates ascend (each unordered pair once)."""
    D = len(M_list)
    total = c1 * sum(np.trace(g.T @ m @ g) for g, m in zip(gammas, M_list))
    for d in range(D):
        for j in range(d + 1, D):
            total += c2 * np.sum((gammas[d].T @ N_table[(d, j)] @ gammas[j]) ** 2)
    return float(total)


def random_gammas(dims, l, seed):
    """Orthonormalized standard-normal starting bases."""
    rng = np.random.default_rng(seed)
    out = []
    for o in dims:
        q, _ = np.linalg.qr(rng.standard_normal((o, l)))
        out.append(fix_signs(q))
    return out


def _top(c, l):
    pairs = sym_eig(c)
    vals = pairs.values
    if not np.all(np.isfinite(vals)):
        raise NumericalFailure("non-finite eigenvalues in coupled matrix")
    tie = l < len(vals) and abs(vals[l - 1] - vals[l]) <= TIE_TOL * max(1.0, abs(vals[0]))
    return vals[:l], pairs.vectors[:, :l], tie


def solve_gamma_system(M_list, N_table, config: IdaConfig, seed=0, l=None, init=None) -> IdaProjection:
    """Cyclic eigen-updates d = 1..D until the largest relative squared change
    ``||G_new - G_old||_F^2 / ||G_old||_F^2`` drops below ``config.eps_gamma``.

    Parameters
    ----------
    M_list, N_table
        Output of :func:`deepida.linalg.whitened_pair`.
    config : IdaConfig
    seed : int
        Seeds the random orthonormal start (ignored when ``init`` is given).
    l : int, optional
        Number of eigenpairs; defaults to ``config.l`` or ``min(o_d)``.
    init : list of ndarray, optional
        Warm-start bases.
    """
    D = _n_views(M_list, N_table)
    c1, c2 = config.constants(D)
    dims = [m.shape[0] for m in M_list]
    if l is None:
        l = config.l if config.l is not None else min(dims)
    if l > min(dims):
        raise InvalidConfig(f"l={l} exceeds the smallest view dimension {min(dims)}")
    for name, arr in [("M", M_list), ("N", list(N_table.values()))]:
        if not all(np.all(np.isfinite(a)) for a in arr):
            raise NumericalFailure(f"non-finite entries in {name}")

    if init is not None:
        gammas = [fix_signs(np.asarray(g, dtype=np.float64)) for g in init]
        if [g.shape for g in gammas] != [(o, l) for o in dims]:
            raise ShapeMismatch("warm-start bases have the wrong shape")
    else:
        gammas = random_gammas(dims, l, seed)

    history = []
    converged = False
    degenerate = False
    lambdas = [None] * D
    sweeps = 1 if c2 == 0.0 else int(config.max_gamma_iters)
    it = 0
    for it in range(1, sweeps + 1):
        change = 0.0
        degenerate = False
        for d in range(D):
            vals, vecs, tie = _top(coupled_matrix(d, M_list, N_table, gammas, c1, c2), l)
            old = gammas[d]
            change = max(change, np.sum((vecs - old) ** 2) / np.sum(old**2))
            gammas[d] = vecs
            lambdas[d] = vals
            degenerate |= tie
        history.append(block_objective(M_list, N_table, gammas, c1, c2))
        if not np.isfinite(history[-1]):
            raise NumericalFailure(f"objective became non-finite at sweep {it}")
        if c2 == 0.0 or change < config.eps_gamma:
            converged = True
            break

    # eigenvalues at the final bases (earlier views were updated against stale ones)
    for d in range(D):
        lambdas[d], _, tie = _top(coupled_matrix(d, M_list, N_table, gammas, c1, c2), l)
        degenerate |= tie
    if degenerate:
        warnings.warn(
            "eigenvalue tie at position l: the top-l subspace is not unique",
            DegenerateSpectrumWarning,
            stacklevel=2,
        )
    return IdaProjection(
        gammas=gammas,
        lambdas=lambdas,
        converged=converged,
        iterations=it,
        history=history,
        degenerate=degenerate,
    )


def _check_views(h_list, labels):
    if len(h_list) < 2:
        raise InvalidConfig("at least two views are required")
    h_list = [np.asarray(h, dtype=np.float64) for h in h_list]
    labels = np.asarray(labels)
    n = labels.shape[0]
    for d, h in enumerate(h_list):
        if h.ndim != 2 or h.shape[0] != n:
            raise ShapeMismatch(f"view {d + 1} output has shape {h.shape}, expected ({n}, o)")
    return h_list, labels


def loss_value(h_list, labels, config: IdaConfig, seed=0, init=None):
    """Loss ``-sum_d sum_r eta_{d,r}`` and the projection it was computed at."""
    h_list, labels = _check_views(h_list, labels)
    n_classes = len(np.unique(labels))
    if labels.shape[0] < n_classes + 1:
        raise InvalidConfig(f"need at least K+1={n_classes + 1} samples, got {labels.shape[0]}")
    l = config.resolve_l(n_classes, [h.shape[1] for h in h_list])
    wh = whiten_views(h_list, labels, ridge=config.ridge, centering=config.centering)
    proj = solve_gamma_system(wh.M, wh.N, config, seed=seed, l=l, init=init)
    proj.whiteners = wh.whiteners
    loss = -float(sum(np.sum(v) for v in proj.lambdas))
    if not np.isfinite(loss):
        raise NumericalFailure("loss is not finite")
    return loss, proj


def frozen_loss(h_list, labels, config: IdaConfig, gammas):
    """Loss with every view's basis held fixed at ``gammas``.

    Used as the finite-difference target for :func:`loss_gradient`.
    """
    h_list, labels = _check_views(h_list, labels)
    wh = whiten_views(h_list, labels, ridge=config.ridge, centering=config.centering)
    c1, c2 = config.constants(len(h_list))
    l = gammas[0].shape[1]
    return -float(
        sum(_top(coupled_matrix(d, wh.M, wh.N, gammas, c1, c2), l)[0].sum() for d in range(len(h_list)))
    )


def loss_gradient(h_list, labels, config: IdaConfig, projection: IdaProjection):
    """``dL/dH^d`` for every view, bases of the other views held at ``projection``.

    Reverse-mode pass through centering, covariances, the inverse square
    root (Daleckii-Krein divided differences), and the eigenvalue sum
    (``d eta = u^T dC u``).
    """
    h_list, labels = _check_views(h_list, labels)
    D = len(h_list)
    n = labels.shape[0]
    gammas = projection.gammas
    if len(gammas) != D or any(g.shape[0] != h.shape[1] for g, h in zip(gammas, h_list)):
        raise ShapeMismatch("projection does not match the view outputs")
    c1, c2 = config.constants(D)
    l = gammas[0].shape[1]
    k = n - 1.0

    w = centering_weights(labels, config.centering)
    z, _ = class_indicator(labels)
    counts = z.sum(axis=0)
    member = np.argmax(z, axis=1)

    def class_smooth(a):
        # P a, with P the class-mean projector
        return ((z.T @ a) / counts[:, None])[member]

    hc = [center(h, w) for h in h_list]
    s_raw, rel, evals, evecs, W, s_b, pb = [], [], [], [], [], [], []
    for d in range(D):
        s = hc[d].T @ hc[d] / k
        s = 0.5 * (s + s.T)
        r = relative_ridge(s, config.ridge)
        pairs = sym_eig(s + r * np.eye(s.shape[0]))
        if pairs.values[-1] < 1e-12:
            raise NumericalFailure(f"view {d + 1}: total covariance is singular")
        s_raw.append(s)
        rel.append(config.ridge / s.shape[0])
        evals.append(pairs.values)
        evecs.append(pairs.vectors)
        W.append((pairs.vectors / np.sqrt(pairs.values)) @ pairs.vectors.T)
        p = class_smooth(hc[d])
        pb.append(p)
        s_b.append(hc[d].T @ p / k)
    S = {(d, j): hc[d].T @ hc[j] / k for d in range(D) for j in range(D) if d != j}
    M = [W[d] @ s_b[d] @ W[d] for d in range(D)]
    N = {(d, j): W[d] @ S[(d, j)] @ W[j] for (d, j) in S}
    G = [g @ g.T for g in gammas]

    W_bar = [np.zeros_like(x) for x in W]
    hc_bar = [np.zeros_like(x) for x in hc]
    for d in range(D):
        c = c1 * M[d]
        for j in range(D):
            if j != d:
                c = c + c2 * N[(d, j)] @ G[j] @ N[(d, j)].T
        _, u, _ = _top(0.5 * (c + c.T), l)
        c_bar = -(u @ u.T)

        m_bar = c1 * c_bar
        W_bar[d] += m_bar @ W[d] @ s_b[d] + s_b[d] @ W[d] @ m_bar
        sb_bar = W[d] @ m_bar @ W[d]
        hc_bar[d] += pb[d] @ (sb_bar + sb_bar.T) / k

        for j in range(D):
            if j == d:
                continue
            n_bar = 2.0 * c2 * c_bar @ N[(d, j)] @ G[j]
            sdj = S[(d, j)]
            W_bar[d] += n_bar @ W[j] @ sdj.T
            W_bar[j] += sdj.T @ W[d] @ n_bar
            s_bar = W[d] @ n_bar @ W[j]
            hc_bar[d] += hc[j] @ s_bar.T / k
            hc_bar[j] += hc[d] @ s_bar / k

    grads = []
    for d in range(D):
        v, root = evecs[d], np.sqrt(evals[d])
        divided = -1.0 / (np.outer(root, root) * (root[:, None] + root[None, :]))
        st_bar = v @ (divided * (v.T @ W_bar[d] @ v)) @ v.T
        sraw_bar = st_bar + rel[d] * np.trace(st_bar) * np.eye(st_bar.shape[0])
        hc_bar[d] += hc[d] @ (sraw_bar + sraw_bar.T) / k
        g = hc_bar[d] - np.outer(w, hc_bar[d].sum(axis=0))
        grads.append(g)
    return grads

"""Synthetic multi-view data with known signal features.

``gen_linear`` draws K = 3 Gaussian classes whose views share a rank-2
cross-covariance; ``gen_nonlinear`` builds two views from a noisy spiral,
with all signal in view 1.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .data import MultiViewDataset
from .errors import InvalidSpec, StratificationFailure

log = logging.getLogger(__name__)

PSD_TOL = 1e-8


@dataclass(frozen=True)
class LinearSimSpec:
    """Linear design with 20 signal features per view.

    ``mean_scale=None`` picks (0.2, 0.1) for two views and (0.2, 0.1, 0.05)
    for three.
    """

    n_views: int = 2
    p: tuple = (1000, 1000)
    n_per_class: int = 180
    block_size: int = 10
    n_blocks: int = 2
    within_corr: float = 0.8
    assoc: tuple = (0.4, 0.2)
    mean_scale: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_views not in (2, 3):
            raise InvalidSpec("n_views must be 2 or 3")
        p = tuple(int(v) for v in self.p)
        if len(p) != self.n_views:
            raise InvalidSpec(f"need {self.n_views} feature counts, got {len(p)}")
        if min(p) < self.n_signal:
            raise InvalidSpec(f"every view needs at least {self.n_signal} features")
        if self.n_per_class < 2:
            raise InvalidSpec("n_per_class must be at least 2")
        if self.n_blocks != len(self.assoc) or self.n_blocks != 2:
            raise InvalidSpec("the design uses two signal blocks and two association strengths")
        if not 0.0 <= self.within_corr < 1.0:
            raise InvalidSpec("within_corr must lie in [0, 1)")
        scale = self.mean_scale
        if scale is None:
            scale = (0.2, 0.1, 0.05)[: self.n_views]
        scale = tuple(float(c) for c in scale)
        if len(scale) != self.n_views:
            raise InvalidSpec("one mean scale per view is required")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "assoc", tuple(float(a) for a in self.assoc))
        object.__setattr__(self, "mean_scale", scale)

    @property
    def n_signal(self):
        return self.block_size * self.n_blocks


@dataclass(frozen=True)
class NonlinearSimSpec:
    """Two-view spiral design; signal lives in the first 10% of view 1."""

    p: tuple = (500, 500)
    n: tuple = (200, 150)
    signal_fraction: float = 0.1
    noise: float = 0.2
    theta_max: float = 3 * np.pi
    jitter: float = 0.5
    seed: int = 0

    def __post_init__(self):
        p = tuple(int(v) for v in self.p)
        n = tuple(int(v) for v in self.n)
        if len(p) != 2 or len(n) != 2:
            raise InvalidSpec("the nonlinear design has two views and two classes")
        if min(n) < 2:
            raise InvalidSpec("each class needs at least 2 samples")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "n", n)
        if self.n_signal < 5:
            raise InvalidSpec("signal_fraction * p_1 must be at least 5")

    @property
    def n_signal(self):
        return int(round(self.signal_fraction * self.p[0]))


def _compound_symmetric(size, corr):
    return np.full((size, size), corr) + (1.0 - corr) * np.eye(size)


def view_covariance(p, block_size=10, n_blocks=2, corr=0.8):
    sigma = np.eye(p)
    for b in range(n_blocks):
        sl = slice(b * block_size, (b + 1) * block_size)
        sigma[sl, sl] = _compound_symmetric(block_size, corr)
    return sigma


def sigma_orthonormalize(v, sigma):
    """Gram-Schmidt in the inner product ``<a, b> = a^T sigma b``."""
    out = np.array(v, dtype=np.float64, copy=True)
    for c in range(out.shape[1]):
        for prev in range(c):
            out[:, c] -= (out[:, prev] @ sigma @ out[:, c]) * out[:, prev]
        out[:, c] /= np.sqrt(out[:, c] @ sigma @ out[:, c])
    return out


def linear_design(spec: LinearSimSpec):
    """Joint covariance, class means (columns), and per-view blocks of the design.

    Returns ``(sigma, means, offsets)`` where ``means`` is
    ``(sum p) x 3`` and ``offsets[d]`` is the first column of view d.
    """
    rng = np.random.default_rng(spec.seed)
    ns = spec.n_signal
    sigmas = [view_covariance(p, spec.block_size, spec.n_blocks, spec.within_corr) for p in spec.p]
    vs = []
    for p, s in zip(spec.p, sigmas):
        v = np.zeros((p, 2))
        v[:ns] = rng.uniform(0.5, 1.0, size=(ns, 2))
        vs.append(sigma_orthonormalize(v, s))
    offsets = np.concatenate([[0], np.cumsum(spec.p)])
    total = int(offsets[-1])
    sigma = np.zeros((total, total))
    assoc = np.diag(spec.assoc)
    for d in range(spec.n_views):
        rd = slice(offsets[d], offsets[d + 1])
        sigma[rd, rd] = sigmas[d]
        for j in range(d + 1, spec.n_views):
            rj = slice(offsets[j], offsets[j + 1])
            block = sigmas[d] @ vs[d] @ assoc @ vs[j].T @ sigmas[j]
            sigma[rd, rj] = block
            sigma[rj, rd] = block.T
    sigma = 0.5 * (sigma + sigma.T)

    a = np.zeros((total, 2))
    half = spec.block_size
    for d, c in enumerate(spec.mean_scale):
        a[offsets[d] : offsets[d] + half, 0] = c
        a[offsets[d] + half : offsets[d] + 2 * half, 1] = -c
    means = np.column_stack([sigma @ a, np.zeros(total)])
    return sigma, means, offsets


def _gaussian_factor(sigma):
    """Cholesky factor, or a clipped spectral factor when round-off breaks PSD."""
    evals = np.linalg.eigvalsh(sigma)
    scale = max(1.0, float(np.abs(evals).max()))
    if evals[0] < -PSD_TOL * scale:
        raise InvalidSpec(f"joint covariance is not PSD: smallest eigenvalue {evals[0]:.3e}")
    if evals[0] > PSD_TOL * scale:
        return np.linalg.cholesky(sigma)
    log.warning("clipping joint covariance eigenvalues at 0 (min was %.3e)", evals[0])
    w, v = np.linalg.eigh(sigma)
    return v * np.sqrt(np.clip(w, 0.0, None))


def gen_linear(spec: LinearSimSpec) -> MultiViewDataset:
    """Sample ``spec.n_per_class`` rows for each of the three classes (ids 1..3)."""
    sigma, means, offsets = linear_design(spec)
    factor = _gaussian_factor(sigma)
    rng = np.random.default_rng([spec.seed, 1])
    rows, labels = [], []
    for k in range(3):
        z = rng.standard_normal((spec.n_per_class, sigma.shape[0]))
        rows.append(means[:, k] + z @ factor.T)
        labels.append(np.full(spec.n_per_class, k + 1))
    joint = np.vstack(rows)
    views = [joint[:, offsets[d] : offsets[d + 1]] for d in range(spec.n_views)]
    masks = [np.arange(p) < spec.n_signal for p in spec.p]
    return MultiViewDataset(
        views=views,
        labels=np.concatenate(labels),
        signal_mask=masks,
        provenance={"generator": "linear", "spec": _spec_dict(spec)},
    )


def spiral_signals(theta, n_signal, n_sin=5):
    """Noise-free signal block: ``n_sin`` sine-spiral columns, then cosine-spiral columns."""
    radius = np.exp(0.15 * theta)
    sin_col = radius * np.sin(1.5 * theta)
    cos_col = radius * np.cos(1.5 * theta)
    return np.column_stack([sin_col] * n_sin + [cos_col] * (n_signal - n_sin))


def gen_nonlinear(spec: NonlinearSimSpec) -> MultiViewDataset:
    """Spiral view 1 plus a clamped, normalized, uniformly-perturbed copy as view 2.

    Samples are ordered by ``theta``; the ``n[0]`` smallest-angle samples
    form class 1 and the rest class 2.
    """
    rng = np.random.default_rng(spec.seed)
    n1, n2 = spec.n
    n = n1 + n2
    p1, p2 = spec.p
    ns = spec.n_signal

    theta = np.linspace(0.0, spec.theta_max, n) + spec.jitter * rng.uniform(size=n)
    base = np.empty((n, p1))
    base[:, :ns] = spiral_signals(theta, ns)
    base[:, ns:] = rng.standard_normal((n, p1 - ns))
    weight = np.zeros(p1)
    weight[:ns] = 1.0
    x1 = base * weight + spec.noise * rng.standard_normal((n, p1))

    clamped = np.clip(x1, 0.0, None)
    norms = np.linalg.norm(clamped, axis=0)
    normed = np.divide(clamped, norms, out=np.zeros_like(clamped), where=norms > 0)
    if p2 <= p1:
        normed = normed[:, :p2]
    else:
        normed = np.hstack([normed, np.zeros((n, p2 - p1))])
    x2 = normed + rng.uniform(size=(n, p2))

    order = np.argsort(theta, kind="stable")
    labels = np.empty(n, dtype=np.int64)
    labels[order[:n1]] = 1
    labels[order[n1:]] = 2
    return MultiViewDataset(
        views=[x1, x2],
        labels=labels,
        signal_mask=[np.arange(p1) < ns, np.zeros(p2, dtype=bool)],
        provenance={"generator": "nonlinear", "spec": _spec_dict(spec)},
    )


def _spec_dict(spec):
    out = asdict(spec)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def split_counts(n_class, fractions):
    """Per-split counts for one class: floors, then largest remainders while budget allows."""
    fractions = np.asarray(fractions, dtype=np.float64)
    raw = fractions * n_class
    counts = np.floor(raw + 1e-9).astype(int)
    budget = int(np.floor(fractions.sum() * n_class + 1e-9)) - counts.sum()
    for idx in np.argsort(-(raw - counts), kind="stable")[: max(budget, 0)]:
        if fractions[idx] > 0:
            counts[idx] += 1
    return counts


def train_valid_test_split(data: MultiViewDataset, fractions=(0.5, 0.25, 0.25), seed=0):
    """Stratified, disjoint split into (train, valid, test)."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or sum(fractions) > 1 + 1e-12 or fractions[0] <= 0:
        raise InvalidSpec("fractions must be three nonnegative numbers, train > 0, summing to at most 1")
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for c in data.classes:
        idx = np.flatnonzero(data.labels == c)
        idx = idx[rng.permutation(idx.size)]
        counts = split_counts(idx.size, fractions)
        if counts[0] == 0:
            raise StratificationFailure(f"class {c} has no training samples after the split")
        start = 0
        for s, cnt in enumerate(counts):
            parts[s].extend(idx[start : start + cnt].tolist())
            start += cnt
    return tuple(data.subset(np.sort(np.asarray(p, dtype=np.int64))) for p in parts)


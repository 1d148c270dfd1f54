"""Bootstrap permutation ranking of input features.

For each of M jobs: draw a stratified bootstrap of the samples plus a random
80% subset of each view's features, train on the in-bag rows, score the
out-of-bag (OOB) rows, then permute each drawn feature of the OOB data in
turn and record whether OOB accuracy strictly dropped. A feature's score is
the fraction of draws in which permuting it hurt accuracy.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import classifier, net, trainer
from .data import MultiViewDataset
from .errors import (
    DeepIdaError,
    InvalidSelection,
    NoResults,
    PairFailed,
    ShapeMismatch,
    StratificationFailure,
)
from .io import dumps_json

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 100
PERMUTATIONS = 5
DEFAULT_M = 50


@dataclass
class BootstrapPair:
    index: int
    sample_in: np.ndarray
    sample_oob: np.ndarray
    feature_sets: list
    seed: int


@dataclass
class PairResult:
    index: int
    n_features: list
    feature_sets: list
    baseline: float = float("nan")
    flags: list = field(default_factory=list)
    permuted_accuracy: list = field(default_factory=list)
    error: str | None = None

    @property
    def failed(self):
        return self.error is not None


@dataclass
class RankingReport:
    """Per-view counts: ``hits[d][k]`` = n_k, ``draws[d][k]`` = N_k.

    ``order[d]`` lists feature indices (0-based) by descending proportion,
    ties by index; features never drawn are left out of ``order`` and have
    ``rank`` 0.
    """

    hits: list
    draws: list
    proportion: list
    order: list
    rank: list
    baselines: dict
    failed: list
    feature_names: list

    @property
    def n_views(self):
        return len(self.hits)

    def top(self, d, r):
        return np.asarray(self.order[d][:r], dtype=np.int64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["view", "feature_index", "feature_name", "n_k", "N_k", "proportion", "rank"])
        for d in range(self.n_views):
            for k in range(len(self.hits[d])):
                prop = self.proportion[d][k]
                writer.writerow(
                    [
                        d + 1,
                        k + 1,
                        self.feature_names[d][k],
                        int(self.hits[d][k]),
                        int(self.draws[d][k]),
                        "" if np.isnan(prop) else repr(float(prop)),
                        int(self.rank[d][k]),
                    ]
                )
        return buf.getvalue()

    def summary(self, top_r=None) -> dict:
        out = {
            "n_views": self.n_views,
            "pairs_succeeded": len(self.baselines),
            "pairs_failed": list(self.failed),
            "baseline_oob_accuracy": {str(k): v for k, v in sorted(self.baselines.items())},
            "unranked": [int(np.sum(np.asarray(dr) == 0)) for dr in self.draws],
        }
        if top_r is not None:
            out["top"] = {
                f"view{d + 1}": [self.feature_names[d][k] for k in self.top(d, resolve_r(top_r, len(self.order[d])))]
                for d in range(self.n_views)
            }
        return out

    def to_json(self, top_r=None) -> str:
        return dumps_json(self.summary(top_r))


def pair_seed(master_seed, index):
    """Per-pair seed derived from the master seed and pair index only."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def draw_pair(data: MultiViewDataset, index, feature_fraction=0.8, seed=0) -> BootstrapPair:
    if not 0.0 < feature_fraction <= 1.0:
        raise ValueError("feature_fraction must lie in (0, 1]")
    classes, counts = np.unique(data.labels, return_counts=True)
    if counts.min() < 2:
        raise StratificationFailure(f"class {classes[np.argmin(counts)]} has fewer than 2 samples")
    members = [np.flatnonzero(data.labels == c) for c in classes]
    base = pair_seed(seed, index)
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([base, attempt])
        sample_in = np.sort(np.concatenate([rng.choice(idx, size=idx.size, replace=True) for idx in members]))
        oob = np.setdiff1d(np.arange(data.n_samples), sample_in)
        if oob.size == 0:
            continue
        sets = []
        for p in data.n_features:
            size = max(1, int(round(feature_fraction * p)))
            sets.append(np.sort(rng.choice(p, size=size, replace=False)))
        return BootstrapPair(index, sample_in, oob, sets, base)
    raise StratificationFailure(f"pair {index}: no valid bootstrap draw in {MAX_ATTEMPTS} attempts")


def draw_pairs(data: MultiViewDataset, M, feature_fraction=0.8, seed=0):
    """M reproducible stratified (sample, feature) draws."""
    if int(M) != M or M < 1:
        raise ValueError("M must be a positive integer")
    return [draw_pair(data, m, feature_fraction, seed) for m in range(M)]


def build_specs(n_features, widths=None, slope=0.1, batch_norm=True):
    """Layer stacks per view; ``widths=None`` uses the default architecture."""
    if widths is None:
        return [trainer.default_layer_specs(p, slope=slope, batch_norm=batch_norm) for p in n_features]
    if len(widths) != len(n_features):
        raise ShapeMismatch("one width list per view is required")
    return [net.layer_stack(p, w, slope=slope, batch_norm=batch_norm) for p, w in zip(n_features, widths)]


def run_pair(
    pair: BootstrapPair,
    data: MultiViewDataset,
    widths=None,
    cfg: trainer.TrainConfig = trainer.TrainConfig(),
    permutations_per_feature=PERMUTATIONS,
) -> PairResult:
    """Train on the in-bag rows, then permutation-test every drawn feature on the OOB rows.

    A feature is flagged when, in a strict majority of its permutations,
    pooled OOB accuracy falls below the unpermuted baseline.
    """
    result = PairResult(pair.index, list(data.n_features), [np.asarray(s) for s in pair.feature_sets])
    train = data.subset(pair.sample_in).select_features(pair.feature_sets)
    oob = data.subset(pair.sample_oob).select_features(pair.feature_sets)
    try:
        model = trainer.fit(train, build_specs(train.n_features, widths), replace(cfg, seed=pair.seed % 2**31))
    except DeepIdaError as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        return result

    loadings = model.loadings()
    views = oob.views

    def view_scores(d, x):
        return net.forward(model.models[d], x)[0] @ loadings[d]

    scores = [view_scores(d, x) for d, x in enumerate(views)]
    centroids = model.centroids["pooled"]
    baseline = classifier.accuracy(classifier.predict(centroids, scores), oob.labels)
    result.baseline = baseline
    n_oob = oob.n_samples
    for d, x in enumerate(views):
        flags = np.zeros(x.shape[1], dtype=bool)
        accs = np.zeros((x.shape[1], permutations_per_feature))
        for col in range(x.shape[1]):
            feature = int(pair.feature_sets[d][col])
            drops = 0
            for rep in range(permutations_per_feature):
                rng = np.random.default_rng([pair.seed, d, feature, rep])
                permuted = x.copy()
                permuted[:, col] = x[rng.permutation(n_oob), col]
                trial = list(scores)
                trial[d] = view_scores(d, permuted)
                acc = classifier.accuracy(classifier.predict(centroids, trial), oob.labels)
                accs[col, rep] = acc
                drops += acc < baseline
            flags[col] = drops * 2 > permutations_per_feature
        result.flags.append(flags)
        result.permuted_accuracy.append(accs)
    return result


def aggregate(results, feature_names=None) -> RankingReport:
    """Tally hits and draws per feature and rank by hit proportion."""
    ok = [r for r in results if not r.failed]
    if not ok:
        raise NoResults("every bootstrap pair failed")
    n_features = ok[0].n_features
    D = len(n_features)
    hits = [np.zeros(p, dtype=np.int64) for p in n_features]
    draws = [np.zeros(p, dtype=np.int64) for p in n_features]
    for r in sorted(ok, key=lambda r: r.index):
        for d in range(D):
            idx = np.asarray(r.feature_sets[d], dtype=np.int64)
            draws[d][idx] += 1
            hits[d][idx] += np.asarray(r.flags[d], dtype=np.int64)
    proportion, order, rank = [], [], []
    for d in range(D):
        with np.errstate(invalid="ignore", divide="ignore"):
            prop = np.where(draws[d] > 0, hits[d] / np.maximum(draws[d], 1), np.nan)
        ranked = np.flatnonzero(draws[d] > 0)
        ranked = ranked[np.lexsort((ranked, -prop[ranked]))]
        rk = np.zeros(n_features[d], dtype=np.int64)
        rk[ranked] = np.arange(1, ranked.size + 1)
        proportion.append(prop)
        order.append(ranked)
        rank.append(rk)
    if feature_names is None:
        feature_names = [[f"v{d + 1}_f{k + 1}" for k in range(p)] for d, p in enumerate(n_features)]
    return RankingReport(
        hits=hits,
        draws=draws,
        proportion=proportion,
        order=order,
        rank=rank,
        baselines={r.index: r.baseline for r in sorted(ok, key=lambda r: r.index)},
        failed=sorted(r.index for r in results if r.failed),
        feature_names=[list(n) for n in feature_names],
    )


def rank_features(
    data: MultiViewDataset,
    M=DEFAULT_M,
    widths=None,
    cfg: trainer.TrainConfig = trainer.TrainConfig(),
    feature_fraction=0.8,
    permutations_per_feature=PERMUTATIONS,
    seed=0,
    workers=1,
) -> RankingReport:
    """Draw, run and aggregate M pairs on a bounded thread pool.

    Results depend only on ``seed`` and the pair index, never on ``workers``.
    """
    if int(permutations_per_feature) != permutations_per_feature or permutations_per_feature < 1:
        raise ValueError("permutations_per_feature must be a positive integer")
    pairs = draw_pairs(data, M, feature_fraction, seed)

    def job(pair):
        res = run_pair(pair, data, widths, cfg, permutations_per_feature)
        if res.failed:
            log.warning("%s", PairFailed(pair.index, res.error))
        return res

    if workers <= 1:
        results = [job(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, pairs))
    return aggregate(results, data.feature_names)


def resolve_r(r, n_available):
    """Count of features to keep: an int, or a ``"p%"`` string rounded up."""
    if isinstance(r, str) and r.strip().endswith("%"):
        pct = float(r.strip()[:-1])
        if pct <= 0:
            raise InvalidSelection("percentage must be positive")
        count = math.ceil(pct / 100.0 * n_available - 1e-9)
    else:
        count = int(r)
        if count != float(r):
            raise InvalidSelection(f"r must be an integer count or a percentage, got {r!r}")
    if count <= 0:
        raise InvalidSelection("r must select at least one feature")
    if count > n_available:
        raise InvalidSelection(f"r={count} exceeds the {n_available} ranked features")
    return count


def select_and_retrain(
    data: MultiViewDataset,
    report: RankingReport,
    r,
    widths=None,
    cfg: trainer.TrainConfig = trainer.TrainConfig(),
    validation=None,
) -> trainer.TrainedDeepIda:
    """Retrain on each view's top-r features (``r`` as count or ``"10%"``).

    Percentages are taken of the view's full feature count. Kept indices are
    stored on the model in ascending order so the model accepts full-width
    inputs.
    """
    if report.n_views != data.n_views:
        raise ShapeMismatch("report and data have different view counts")
    kept = []
    for d, p in enumerate(data.n_features):
        count = resolve_r(r, p)
        if count > len(report.order[d]):
            raise InvalidSelection(f"view {d + 1}: r={count} exceeds {len(report.order[d])} ranked features")
        kept.append(np.sort(report.top(d, count)))
    restricted = data.select_features(kept)
    if validation is not None:
        validation = validation.select_features(kept)
    model = trainer.fit(restricted, build_specs(restricted.n_features, widths), cfg, validation)
    model.kept_features = kept
    model.input_dims = list(data.n_features)
    return model

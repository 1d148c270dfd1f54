"""Training loop: per-view networks fitted to the eigenvalue-sum loss.

Each step feeds every view forward, solves the coupled eigensystem on the
outputs, back-propagates ``dL/dH^d`` through each network and applies one
Adam update per view.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import classifier, net
from .data import MultiViewDataset
from .errors import InvalidBatch, InvalidConfig, NumericalFailure, ShapeMismatch
from .io import archive_bytes, read_archive_bytes
from .objective import IdaConfig, IdaProjection, loss_gradient, loss_value

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = (512, 256, 64)
DEFAULT_OUT = 20
# Relative ridge used while training. Network outputs are batch-normalized,
# so tr(S_t)/o is about 1 and this shrinks S_t strongly toward a multiple of I
# (regularized discriminant analysis); the bare solver keeps the tiny
# numerical ridge of IdaConfig.
TRAIN_RIDGE = 10.0


def training_ida(**overrides) -> IdaConfig:
    """IdaConfig with the training ridge unless ``ridge`` is given."""
    return IdaConfig(**{"ridge": TRAIN_RIDGE, **overrides})


def default_layer_specs(p, hidden=DEFAULT_HIDDEN, out_dim=DEFAULT_OUT, slope=0.1, batch_norm=True):
    """Input-512-256-64-20 with LeakyReLU(0.1) and batch norm.

    Hidden layers wider than ``max(p, min(hidden))`` are dropped, so narrow
    inputs get a proportionally smaller network (p=100 gives 100-64-20).
    """
    keep = [w for w in hidden if w <= max(p, min(hidden))]
    return net.layer_stack(p, [*keep, out_dim], slope=slope, batch_norm=batch_norm)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: object = "full"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ida: IdaConfig = field(default_factory=training_ida)
    seed: int = 0
    validation: str = "none"
    warm_start: bool = True

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise InvalidConfig(f"epochs must be a positive integer, got {self.epochs}")
        if self.batch_size != "full" and (int(self.batch_size) != self.batch_size or self.batch_size < 1):
            raise InvalidConfig(f"batch_size must be 'full' or a positive integer, got {self.batch_size!r}")
        if self.lr <= 0:
            raise InvalidConfig("learning rate must be positive")
        if self.validation not in ("none", "best_epoch"):
            raise InvalidConfig("validation must be 'none' or 'best_epoch'")
        if isinstance(self.ida, dict):
            object.__setattr__(self, "ida", training_ida(**self.ida))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["ida"] = training_ida(**d.get("ida", {}))
        return cls(**d)


@dataclass
class TrainedDeepIda:
    """Eval-mode networks plus everything needed to score new samples."""

    models: list
    projection: IdaProjection
    centroids: dict
    loss_history: list
    config: TrainConfig
    input_dims: list
    feature_names: list
    val_loss_history: list = field(default_factory=list)
    best_epoch: int | None = None
    kept_features: list | None = None
    train_scores: list | None = None
    steps: int = 0

    @property
    def n_views(self):
        return len(self.models)

    def loadings(self):
        return self.projection.loadings()


def _stratified_batches(labels, batch_size, rng):
    n = labels.shape[0]
    if batch_size == "full" or batch_size >= n:
        return [np.arange(n)]
    n_batches = max(1, n // int(batch_size))
    chunks = [[] for _ in range(n_batches)]
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        if idx.size // n_batches < 2:
            raise InvalidBatch(
                f"class {c} has {idx.size} samples; cannot place 2 in each of {n_batches} batches"
            )
        for b, part in enumerate(np.array_split(idx, n_batches)):
            chunks[b].extend(part.tolist())
    return [np.sort(np.asarray(ch, dtype=np.int64)) for ch in chunks]


def _check_inputs(data: MultiViewDataset, specs, cfg: TrainConfig):
    if data.n_views < 2:
        raise InvalidConfig("Deep IDA needs at least two views")
    if len(specs) != data.n_views:
        raise ShapeMismatch(f"{len(specs)} layer stacks for {data.n_views} views")
    for d, (spec, p) in enumerate(zip(specs, data.n_features)):
        net.check_chain(spec)
        if spec[0].in_dim != p:
            raise ShapeMismatch(f"view {d + 1}: network expects {spec[0].in_dim} features, data has {p}")
    classes, counts = np.unique(data.labels, return_counts=True)
    if classes.size < 2:
        raise InvalidConfig("at least two classes are required")
    if counts.min() < 2:
        raise InvalidBatch(f"class {classes[np.argmin(counts)]} has fewer than 2 samples")
    return cfg.ida.resolve_l(classes.size, [s[-1].out_dim for s in specs])


def _forward_all(models, views):
    outs, tapes = [], []
    for m, x in zip(models, views):
        h, tape = net.forward(m, x)
        outs.append(h)
        tapes.append(tape)
    return outs, tapes


def fit(data: MultiViewDataset, specs, cfg: TrainConfig = TrainConfig(), validation=None) -> TrainedDeepIda:
    """Train one network per view; inputs are never modified.

    With ``cfg.validation == "best_epoch"`` and a validation set, the
    networks from the epoch with the lowest validation loss are returned.
    """
    specs = [list(s) for s in specs]
    l = _check_inputs(data, specs, cfg)
    ida = replace(cfg.ida, l=l)
    D = data.n_views
    models = [net.init_model(s, seed=[cfg.seed, d]) for d, s in enumerate(specs)]
    states = [net.init_adam(m, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps) for m in models]
    rng = np.random.default_rng([cfg.seed, 1000])
    labels = data.labels

    history, val_history = [], []
    best = (np.inf, None, None)
    gammas = None
    steps = 0
    for epoch in range(cfg.epochs):
        batch_losses = []
        for b, rows in enumerate(_stratified_batches(labels, cfg.batch_size, rng)):
            outs, tapes = _forward_all(models, [v[rows] for v in data.views])
            init = gammas if cfg.warm_start else None
            try:
                loss, proj = loss_value(outs, labels[rows], ida, seed=cfg.seed, init=init)
                grads_h = loss_gradient(outs, labels[rows], ida, proj)
            except NumericalFailure as exc:
                raise NumericalFailure(f"epoch {epoch + 1}, batch {b + 1}: {exc}") from exc
            if not np.isfinite(loss):
                raise NumericalFailure(f"epoch {epoch + 1}, batch {b + 1}: loss is not finite")
            gammas = proj.gammas
            new_models, new_states = [], []
            for d in range(D):
                g = net.backward(models[d], tapes[d], grads_h[d])
                updated = net.update_running_stats(models[d], tapes[d])
                updated, st = net.adam_step(updated, g, states[d])
                new_models.append(updated)
                new_states.append(st)
            models, states = new_models, new_states
            batch_losses.append(loss)
            steps += 1
        history.append(float(np.mean(batch_losses)))
        if validation is not None:
            evals = [m.with_mode("eval") for m in models]
            outs = [net.forward(m, x)[0] for m, x in zip(evals, validation.views)]
            vloss, _ = loss_value(outs, validation.labels, ida, seed=cfg.seed, init=gammas)
            val_history.append(vloss)
            if cfg.validation == "best_epoch" and vloss < best[0]:
                best = (vloss, epoch, evals)
        log.debug("epoch %d loss %.6f", epoch + 1, history[-1])

    final = [m.with_mode("eval") for m in models]
    best_epoch = None
    if cfg.validation == "best_epoch" and best[2] is not None:
        final, best_epoch = best[2], best[1] + 1
    trained = TrainedDeepIda(
        models=final,
        projection=None,
        centroids={},
        loss_history=history,
        config=replace(cfg, ida=ida),
        input_dims=list(data.n_features),
        feature_names=[list(n) for n in data.feature_names],
        val_loss_history=val_history,
        best_epoch=best_epoch,
        steps=steps,
    )
    return finalize(trained, data, init=gammas)


def finalize(trained: TrainedDeepIda, data: MultiViewDataset, init=None) -> TrainedDeepIda:
    """Solve the projection on eval-mode training outputs and fit centroids."""
    outs = [net.forward(m, x)[0] for m, x in zip(trained.models, data.views)]
    _, proj = loss_value(outs, data.labels, trained.config.ida, seed=trained.config.seed, init=init)
    trained.projection = proj
    scores = [h @ a for h, a in zip(outs, proj.loadings())]
    trained.train_scores = scores
    trained.centroids = {"pooled": classifier.fit_centroids(scores, data.labels, "pooled")}
    for d in range(len(scores)):
        trained.centroids[d] = classifier.fit_centroids(scores, data.labels, d)
    return trained


def _align_views(trained: TrainedDeepIda, data: MultiViewDataset):
    if data.n_views != trained.n_views:
        raise ShapeMismatch(f"model has {trained.n_views} views, data has {data.n_views}")
    views = []
    for d, (x, m) in enumerate(zip(data.views, trained.models)):
        if x.shape[1] == m.in_dim:
            views.append(x)
        elif trained.kept_features is not None and x.shape[1] == trained.input_dims[d]:
            views.append(x[:, trained.kept_features[d]])
        else:
            raise ShapeMismatch(f"view {d + 1}: model expects {m.in_dim} features, data has {x.shape[1]}")
    return views


def project(trained: TrainedDeepIda, data: MultiViewDataset):
    """Per-view n x l discriminant scores ``f^d(X^d) A_d``."""
    views = _align_views(trained, data)
    loadings = trained.loadings()
    return [net.forward(m, x)[0] @ a for m, x, a in zip(trained.models, views, loadings)]


def predict(trained: TrainedDeepIda, data: MultiViewDataset, space="pooled"):
    scores = project(trained, data)
    return classifier.predict(trained.centroids[space], scores)


def evaluate(trained: TrainedDeepIda, data: MultiViewDataset):
    """Accuracy in the pooled space and in each single-view space."""
    scores = project(trained, data)
    out = {"pooled": classifier.accuracy(classifier.predict(trained.centroids["pooled"], scores), data.labels)}
    for d in range(trained.n_views):
        pred = classifier.predict(trained.centroids[d], scores)
        out[f"view{d + 1}"] = classifier.accuracy(pred, data.labels)
    return out


# -- model artifact -----------------------------------------------------------

def to_bytes(trained: TrainedDeepIda) -> bytes:
    """Single archive with every network, the projection, centroids and config."""
    arrays = {}
    headers = []
    for d, m in enumerate(trained.models):
        header, arr = net.model_to_record(m, prefix=f"view{d + 1}/")
        headers.append(header)
        arrays.update(arr)
    proj = trained.projection
    for d in range(trained.n_views):
        arrays[f"projection/gamma{d + 1}"] = proj.gammas[d]
        arrays[f"projection/lambda{d + 1}"] = proj.lambdas[d]
        arrays[f"projection/whitener{d + 1}"] = proj.whiteners[d]
        if trained.kept_features is not None:
            arrays[f"kept/view{d + 1}"] = np.asarray(trained.kept_features[d], dtype=np.int64)
    spaces = []
    for key, cs in trained.centroids.items():
        arrays[f"centroids/{cs.name}"] = cs.centroids
        arrays[f"centroid_classes/{cs.name}"] = cs.classes
        spaces.append(cs.name)
    manifest = {
        "kind": "trained_deep_ida",
        "networks": headers,
        "config": trained.config.to_dict(),
        "input_dims": list(trained.input_dims),
        "feature_names": trained.feature_names,
        "loss_history": list(trained.loss_history),
        "val_loss_history": list(trained.val_loss_history),
        "best_epoch": trained.best_epoch,
        "steps": trained.steps,
        "projection": {
            "converged": bool(proj.converged),
            "iterations": int(proj.iterations),
            "degenerate": bool(proj.degenerate),
        },
        "centroid_spaces": sorted(spaces),
        "has_kept_features": trained.kept_features is not None,
    }
    return archive_bytes(manifest, arrays)


def from_bytes(blob: bytes) -> TrainedDeepIda:
    manifest, arrays = read_archive_bytes(blob, kind="trained_deep_ida")
    D = len(manifest["networks"])
    models = [
        net.model_from_record(h, {k: v for k, v in arrays.items() if k.startswith(f"view{d + 1}/")}, f"view{d + 1}/")
        for d, h in enumerate(manifest["networks"])
    ]
    info = manifest["projection"]
    proj = IdaProjection(
        gammas=[arrays[f"projection/gamma{d + 1}"] for d in range(D)],
        lambdas=[arrays[f"projection/lambda{d + 1}"] for d in range(D)],
        converged=info["converged"],
        iterations=info["iterations"],
        whiteners=[arrays[f"projection/whitener{d + 1}"] for d in range(D)],
        degenerate=info["degenerate"],
    )
    centroids = {}
    for name in manifest["centroid_spaces"]:
        space = "pooled" if name == "pooled" else int(name[4:]) - 1
        centroids[space] = classifier.CentroidSet(space, arrays[f"centroids/{name}"], arrays[f"centroid_classes/{name}"])
    kept = [arrays[f"kept/view{d + 1}"] for d in range(D)] if manifest["has_kept_features"] else None
    return TrainedDeepIda(
        models=models,
        projection=proj,
        centroids=centroids,
        loss_history=manifest["loss_history"],
        config=TrainConfig.from_dict(manifest["config"]),
        input_dims=manifest["input_dims"],
        feature_names=manifest["feature_names"],
        val_loss_history=manifest["val_loss_history"],
        best_epoch=manifest["best_epoch"],
        kept_features=kept,
        steps=manifest["steps"],
    )

"""Per-view multilayer perceptron: forward, reverse-mode gradients, Adam.

Each layer computes ``a = act(x W^T + b)`` and, when enabled, a batch
normalization of ``a`` (normalization follows the activation). Models are
treated as values: training helpers return new models instead of mutating.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidBatch, InvalidSpec, InvalidTape, ShapeMismatch

_tokens = itertools.count()

ACTIVATIONS = ("leaky_relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "leaky_relu"
    slope: float = 0.1
    batch_norm: bool = True

    def __post_init__(self):
        if int(self.in_dim) != self.in_dim or self.in_dim < 1:
            raise InvalidSpec(f"in_dim must be a positive integer, got {self.in_dim}")
        if int(self.out_dim) != self.out_dim or self.out_dim < 1:
            raise InvalidSpec(f"out_dim must be a positive integer, got {self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpec(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise InvalidSpec(f"leaky_relu slope must lie in (0, 1), got {self.slope}")


def layer_stack(in_dim, widths, activation="leaky_relu", slope=0.1, batch_norm=True):
    """LayerSpecs for ``in_dim -> widths[0] -> ... -> widths[-1]``."""
    dims = [in_dim, *widths]
    return [LayerSpec(a, b, activation, slope, batch_norm) for a, b in zip(dims[:-1], dims[1:])]


@dataclass
class MlpModel:
    """Network parameters and batch-norm running statistics.

    ``params`` keys are ``"{m}.weight"`` (out x in), ``"{m}.bias"`` and, for
    normalized layers, ``"{m}.bn_scale"`` / ``"{m}.bn_shift"``. ``buffers``
    holds ``"{m}.running_mean"`` / ``"{m}.running_var"``.
    """

    layers: list
    params: dict
    buffers: dict
    mode: str = "train"
    momentum: float = 0.1
    bn_eps: float = 1e-8
    token: int = field(default_factory=lambda: next(_tokens), compare=False, repr=False)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def copy(self, **changes):
        params = {k: v.copy() for k, v in self.params.items()}
        buffers = {k: v.copy() for k, v in self.buffers.items()}
        fields = dict(params=params, buffers=buffers, token=next(_tokens))
        fields.update(changes)
        return replace(self, **fields)

    def with_mode(self, mode):
        if mode not in ("train", "eval"):
            raise InvalidSpec(f"mode must be 'train' or 'eval', got {mode!r}")
        return self.copy(mode=mode)

    def equals(self, other) -> bool:
        """Bit-exact comparison of architecture, parameters and statistics."""
        if (self.layers, self.mode, self.momentum, self.bn_eps) != (
            other.layers,
            other.mode,
            other.momentum,
            other.bn_eps,
        ):
            return False
        for mine, theirs in ((self.params, other.params), (self.buffers, other.buffers)):
            if mine.keys() != theirs.keys():
                return False
            if not all(mine[k].dtype == theirs[k].dtype and np.array_equal(mine[k], theirs[k]) for k in mine):
                return False
        return True


def check_chain(spec):
    if not spec:
        raise InvalidSpec("at least one layer is required")
    for m, (a, b) in enumerate(zip(spec[:-1], spec[1:])):
        if a.out_dim != b.in_dim:
            raise InvalidSpec(f"layer {m} outputs {a.out_dim} but layer {m + 1} expects {b.in_dim}")


def init_model(spec, seed, momentum=0.1, bn_eps=1e-8) -> MlpModel:
    """Fan-in scaled uniform weights (std ``sqrt(2/fan_in)``), zero biases."""
    spec = list(spec)
    check_chain(spec)
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for m, layer in enumerate(spec):
        bound = np.sqrt(6.0 / layer.in_dim)
        params[f"{m}.weight"] = rng.uniform(-bound, bound, size=(layer.out_dim, layer.in_dim))
        params[f"{m}.bias"] = np.zeros(layer.out_dim)
        if layer.batch_norm:
            params[f"{m}.bn_scale"] = np.ones(layer.out_dim)
            params[f"{m}.bn_shift"] = np.zeros(layer.out_dim)
            buffers[f"{m}.running_mean"] = np.zeros(layer.out_dim)
            buffers[f"{m}.running_var"] = np.ones(layer.out_dim)
    return MlpModel(layers=spec, params=params, buffers=buffers, momentum=momentum, bn_eps=bn_eps)


@dataclass
class ForwardTape:
    token: int
    mode: str
    inputs: list
    pre: list
    post: list
    normed: list
    means: list
    variances: list
    n: int


def _activate(layer, z):
    if layer.activation == "identity":
        return z
    return np.where(z > 0, z, layer.slope * z)


def _activate_grad(layer, z):
    if layer.activation == "identity":
        return np.ones_like(z)
    return np.where(z > 0, 1.0, layer.slope)


def forward(model: MlpModel, x):
    """Return the top-level representation ``h`` (n x o) and a tape for :func:`backward`.

    In train mode batch norm uses the batch statistics; these are stored on
    the tape and folded into the running statistics only by
    :func:`update_running_stats`, so forward never modifies the model.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ShapeMismatch(f"expected input with {model.in_dim} columns, got shape {x.shape}")
    n = x.shape[0]
    train = model.mode == "train"
    if train and n < 2 and any(layer.batch_norm for layer in model.layers):
        raise InvalidBatch("train-mode batch normalization needs at least 2 rows")
    inputs, pre, post, normed, means, variances = [], [], [], [], [], []
    h = x
    for m, layer in enumerate(model.layers):
        inputs.append(h)
        z = h @ model.params[f"{m}.weight"].T + model.params[f"{m}.bias"]
        a = _activate(layer, z)
        pre.append(z)
        post.append(a)
        if layer.batch_norm:
            if train:
                mu = a.mean(axis=0)
                var = a.var(axis=0)
            else:
                mu = model.buffers[f"{m}.running_mean"]
                var = model.buffers[f"{m}.running_var"]
            xhat = (a - mu) / np.sqrt(var + model.bn_eps)
            h = xhat * model.params[f"{m}.bn_scale"] + model.params[f"{m}.bn_shift"]
            normed.append(xhat)
            means.append(mu)
            variances.append(var)
        else:
            h = a
            normed.append(None)
            means.append(None)
            variances.append(None)
    tape = ForwardTape(model.token, model.mode, inputs, pre, post, normed, means, variances, n)
    return h, tape


def backward(model: MlpModel, tape: ForwardTape, grad_h) -> dict:
    """Gradients of ``sum(grad_h * h)`` with respect to every parameter."""
    if tape.token != model.token or tape.mode != model.mode:
        raise InvalidTape("tape was produced by a different model state")
    g = np.asarray(grad_h, dtype=np.float64)
    if g.shape != (tape.n, model.out_dim):
        raise ShapeMismatch(f"grad_h has shape {g.shape}, expected {(tape.n, model.out_dim)}")
    grads = {}
    for m in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[m]
        if layer.batch_norm:
            xhat = tape.normed[m]
            inv_std = 1.0 / np.sqrt(tape.variances[m] + model.bn_eps)
            grads[f"{m}.bn_shift"] = g.sum(axis=0)
            grads[f"{m}.bn_scale"] = (g * xhat).sum(axis=0)
            gx = g * model.params[f"{m}.bn_scale"]
            if tape.mode == "train":
                n = tape.n
                g = inv_std / n * (n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
            else:
                g = gx * inv_std
        g = g * _activate_grad(layer, tape.pre[m])
        grads[f"{m}.weight"] = g.T @ tape.inputs[m]
        grads[f"{m}.bias"] = g.sum(axis=0)
        g = g @ model.params[f"{m}.weight"]
    return {k: grads[k] for k in model.params}


def update_running_stats(model: MlpModel, tape: ForwardTape) -> MlpModel:
    """Fold a train-mode tape's batch statistics into the running averages."""
    if tape.token != model.token or tape.mode != "train":
        raise InvalidTape("running statistics need a train-mode tape from this model")
    out = model.copy()
    mom = model.momentum
    n = tape.n
    for m, layer in enumerate(model.layers):
        if not layer.batch_norm:
            continue
        unbiased = tape.variances[m] * n / (n - 1)
        out.buffers[f"{m}.running_mean"] = (1 - mom) * model.buffers[f"{m}.running_mean"] + mom * tape.means[m]
        out.buffers[f"{m}.running_var"] = (1 - mom) * model.buffers[f"{m}.running_var"] + mom * unbiased
    return out


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(model: MlpModel, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    zeros = {k: np.zeros_like(p) for k, p in model.params.items()}
    return AdamState(lr, beta1, beta2, eps, 0, zeros, {k: z.copy() for k, z in zeros.items()})


def adam_step(model: MlpModel, grads: dict, state: AdamState):
    """One bias-corrected Adam update; returns ``(new_model, new_state)``."""
    if grads.keys() != model.params.keys():
        raise ShapeMismatch("gradient keys do not match model parameters")
    step = state.step + 1
    new = model.copy()
    m_new, v_new = {}, {}
    corr1 = 1.0 - state.beta1**step
    corr2 = 1.0 - state.beta2**step
    for k, p in model.params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeMismatch(f"{k}: gradient shape {g.shape} vs parameter {p.shape}")
        m_new[k] = state.beta1 * state.m[k] + (1 - state.beta1) * g
        v_new[k] = state.beta2 * state.v[k] + (1 - state.beta2) * g * g
        new.params[k] = p - state.lr * (m_new[k] / corr1) / (np.sqrt(v_new[k] / corr2) + state.eps)
    return new, replace(state, step=step, m=m_new, v=v_new)


# -- serialization ------------------------------------------------------------

def model_to_record(model: MlpModel, prefix=""):
    """Split a model into a JSON-able header and a dict of arrays."""
    header = {
        "layers": [
            {
                "in_dim": s.in_dim,
                "out_dim": s.out_dim,
                "activation": s.activation,
                "slope": s.slope,
                "batch_norm": s.batch_norm,
            }
            for s in model.layers
        ],
        "mode": model.mode,
        "momentum": model.momentum,
        "bn_eps": model.bn_eps,
    }
    arrays = {f"{prefix}params/{k}": v for k, v in model.params.items()}
    arrays.update({f"{prefix}buffers/{k}": v for k, v in model.buffers.items()})
    return header, arrays


def model_from_record(header, arrays, prefix="") -> MlpModel:
    layers = [LayerSpec(**s) for s in header["layers"]]
    check_chain(layers)
    params, buffers = {}, {}
    for key, value in arrays.items():
        if key.startswith(f"{prefix}params/"):
            params[key[len(prefix) + 7 :]] = value
        elif key.startswith(f"{prefix}buffers/"):
            buffers[key[len(prefix) + 8 :]] = value
    ordered = init_model(layers, 0)
    if ordered.params.keys() != params.keys() or ordered.buffers.keys() != buffers.keys():
        raise InvalidSpec("stored arrays do not match the layer description")
    return MlpModel(
        layers=layers,
        params={k: params[k] for k in ordered.params},
        buffers={k: buffers[k] for k in ordered.buffers},
        mode=header["mode"],
        momentum=header["momentum"],
        bn_eps=header["bn_eps"],
    )


def serialize(model: MlpModel) -> bytes:
    from .io import archive_bytes

    header, arrays = model_to_record(model)
    return archive_bytes({"kind": "mlp", "model": header}, arrays)


def deserialize(blob: bytes) -> MlpModel:
    from .io import read_archive_bytes

    manifest, arrays = read_archive_bytes(blob, kind="mlp")
    return model_from_record(manifest["model"], arrays)

"""Command-line interface: ``deepida simulate | train | rank | predict | evaluate``.

Every command takes an optional JSON run configuration (``--config``);
flags override file values and the merged, fully-defaulted configuration is
echoed into each JSON output. Errors exit with status 2 after printing one
line ``ErrorClass: message`` to stderr. Set ``DEEPIDA_LOG_LEVEL`` (e.g.
``DEBUG``) to change logging verbosity.
"""

from __future__ import annotations

import argparse
import copy
import glob
import json
import logging
import os
import re
import sys

import numpy as np

from . import __version__, io, ranking, simgen, trainer
from .data import MultiViewDataset
from .errors import DeepIdaError, InvalidConfig, IoError
from .objective import IdaConfig

log = logging.getLogger("deepida")

LOG_ENV = "DEEPIDA_LOG_LEVEL"

DEFAULTS = {
    "seed": 0,
    "workers": None,
    "train": {
        "epochs": 50,
        "batch_size": "full",
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "validation": "none",
        "warm_start": True,
    },
    "ida": {
        "rho": 0.5,
        "l": None,
        "ridge": trainer.TRAIN_RIDGE,
        "eps_gamma": IdaConfig.eps_gamma,
        "max_gamma_iters": IdaConfig.max_gamma_iters,
        "centering": "weighted",
    },
    "network": {"widths": None, "slope": 0.1, "batch_norm": True},
    "ranking": {
        "M": ranking.DEFAULT_M,
        "feature_fraction": 0.8,
        "permutations_per_feature": ranking.PERMUTATIONS,
        "top_r": "10%",
        "retrain_top": None,
    },
    "paths": {"data": None, "valid": None, "test": None, "model": None, "out": None},
}


# -- configuration --------------------------------------------------------------

def merge_config(base, override, where="config"):
    """Recursive merge; keys absent from ``base`` are rejected."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise InvalidConfig(f"unknown key {where}.{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise InvalidConfig(f"{where}.{key} must be a table")
            out[key] = merge_config(base[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def load_config(path):
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        doc = json.loads(io.read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidConfig(f"{path}: top level must be an object")
    return merge_config(DEFAULTS, doc)


def train_config(cfg) -> trainer.TrainConfig:
    return trainer.TrainConfig(**cfg["train"], seed=int(cfg["seed"]), ida=IdaConfig(**cfg["ida"]))


def apply_flags(cfg, args):
    """Overlay command-line flags that were actually given."""
    flag_map = {
        "seed": ("seed",),
        "workers": ("workers",),
        "epochs": ("train", "epochs"),
        "lr": ("train", "lr"),
        "batch_size": ("train", "batch_size"),
        "rho": ("ida", "rho"),
        "l": ("ida", "l"),
        "ridge": ("ida", "ridge"),
        "m": ("ranking", "M"),
        "top": ("ranking", "top_r"),
        "retrain_top": ("ranking", "retrain_top"),
        "permutations": ("ranking", "permutations_per_feature"),
        "feature_fraction": ("ranking", "feature_fraction"),
        "data": ("paths", "data"),
        "valid": ("paths", "valid"),
        "test": ("paths", "test"),
        "model": ("paths", "model"),
        "out": ("paths", "out"),
    }
    for attr, path in flag_map.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        node = cfg
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
    if cfg["train"]["batch_size"] != "full":
        cfg["train"]["batch_size"] = _int_or_full(cfg["train"]["batch_size"])
    if cfg["ranking"]["top_r"] is not None:
        cfg["ranking"]["top_r"] = _count_or_percent(cfg["ranking"]["top_r"])
    if cfg["ranking"]["retrain_top"] is not None:
        cfg["ranking"]["retrain_top"] = _count_or_percent(cfg["ranking"]["retrain_top"])
    if cfg["workers"] is None:
        cfg["workers"] = os.cpu_count() or 1
    return cfg


def _int_or_full(v):
    if v == "full":
        return v
    try:
        return int(v)
    except (TypeError, ValueError):
        raise InvalidConfig(f"batch_size must be 'full' or an integer, got {v!r}") from None


def _count_or_percent(v):
    if isinstance(v, str) and v.strip().endswith("%"):
        return v.strip()
    try:
        return int(v)
    except (TypeError, ValueError):
        raise InvalidConfig(f"expected a feature count or a percentage like '10%', got {v!r}") from None


def widths_for(cfg, n_views):
    widths = cfg["network"]["widths"]
    if widths is None:
        return None
    if widths and not isinstance(widths[0], list):
        widths = [widths] * n_views
    return widths


def specs_for(cfg, n_features):
    net_cfg = cfg["network"]
    return ranking.build_specs(
        n_features, widths_for(cfg, len(n_features)), slope=net_cfg["slope"], batch_norm=net_cfg["batch_norm"]
    )


# -- data ------------------------------------------------------------------------

def _view_index(path):
    m = re.search(r"view(\d+)\.csv$", os.path.basename(path))
    return int(m.group(1))


def load_data(source, views=None, labels=None) -> MultiViewDataset:
    """Load a dataset from a directory written by ``simulate`` or explicit paths."""
    if views:
        if labels is None:
            raise InvalidConfig("--labels is required with --views")
        return io.load_dataset(views, labels)
    if source is None:
        raise InvalidConfig("no input data: pass --data DIR or --views/--labels")
    if not os.path.isdir(source):
        raise IoError(f"data directory not found: {source}")
    found = sorted(glob.glob(os.path.join(source, "view*.csv")), key=_view_index)
    indices = [_view_index(p) for p in found]
    if not found:
        raise IoError(f"{source}: no view files (view1.csv, view2.csv, ...)")
    for expected, got in enumerate(indices, start=1):
        if got != expected:
            raise IoError(f"view {expected}: file not found: {os.path.join(source, f'view{expected}.csv')}")
    mask = os.path.join(source, "mask.csv")
    return io.load_dataset(found, os.path.join(source, "labels.csv"), mask if os.path.exists(mask) else None)


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc}") from exc


def _write_json(path, doc):
    doc = dict(doc, package_version=__version__)
    io.write_text(path, io.dumps_json(doc))


def _error_pct(acc):
    return {k: 100.0 * (1.0 - v) for k, v in acc.items()}


# -- commands ----------------------------------------------------------------------

def cmd_simulate(args):
    out = args.out
    if args.kind == "linear":
        spec = simgen.LinearSimSpec(
            n_views=args.d,
            p=tuple(args.p) if args.p else (1000,) * args.d,
            n_per_class=args.nk,
            seed=args.seed,
        )
        data = simgen.gen_linear(spec)
    else:
        spec = simgen.NonlinearSimSpec(
            p=tuple(args.p) if args.p else (500, 500),
            n=tuple(args.n) if args.n else (200, 150),
            seed=args.seed,
        )
        data = simgen.gen_nonlinear(spec)
    data = MultiViewDataset(
        views=data.views,
        labels=data.labels,
        signal_mask=data.signal_mask,
        feature_names=data.feature_names,
        provenance=dict(data.provenance, package_version=__version__),
    )
    io.save_dataset(data, out)
    if args.split:
        fractions = [float(f) for f in args.split]
        parts = simgen.train_valid_test_split(data, fractions, seed=args.seed)
        for name, part in zip(("train", "valid", "test"), parts):
            if part.n_samples:
                io.save_dataset(part, os.path.join(out, name))
    print(f"wrote {data.n_samples} samples x {list(data.n_features)} features to {out}")
    return 0


def _fit_and_report(cfg, data, valid=None, test=None):
    tcfg = train_config(cfg)
    model = trainer.fit(data, specs_for(cfg, data.n_features), tcfg, valid)
    metrics = {
        "final_loss": model.loss_history[-1],
        "loss_history": list(model.loss_history),
        "train_accuracy": trainer.evaluate(model, data),
    }
    if valid is not None:
        metrics["validation_loss_history"] = list(model.val_loss_history)
        metrics["validation_accuracy"] = trainer.evaluate(model, valid)
        metrics["best_epoch"] = model.best_epoch
    if test is not None:
        metrics["test_accuracy"] = trainer.evaluate(model, test)
        metrics["test_error_pct"] = _error_pct(metrics["test_accuracy"])
    return model, metrics


def _optional(path):
    return None if path is None else load_data(path)


def cmd_train(args, cfg):
    paths = cfg["paths"]
    data = load_data(paths["data"], args.views, args.labels)
    valid, test = _optional(paths["valid"]), _optional(paths["test"])
    model, metrics = _fit_and_report(cfg, data, valid, test)
    model_path = paths["model"] or "model.zip"
    io.write_bytes(model_path, trainer.to_bytes(model))
    report = {"command": "train", "config": _echo(cfg), "metrics": metrics, "model": model_path}
    _write_json(args.metrics or os.path.splitext(model_path)[0] + ".metrics.json", report)
    print(f"pooled train accuracy {metrics['train_accuracy']['pooled']:.4f}; model written to {model_path}")
    return 0


def cmd_rank(args, cfg):
    paths = cfg["paths"]
    data = load_data(paths["data"], args.views, args.labels)
    rk = cfg["ranking"]
    tcfg = train_config(cfg)
    widths = widths_for(cfg, data.n_views)
    report = ranking.rank_features(
        data,
        M=rk["M"],
        widths=widths,
        cfg=tcfg,
        feature_fraction=rk["feature_fraction"],
        permutations_per_feature=rk["permutations_per_feature"],
        seed=int(cfg["seed"]),
        workers=int(cfg["workers"]),
    )
    out = paths["out"] or "ranking"
    _ensure_dir(out)
    io.write_text(os.path.join(out, "ranking.csv"), report.to_csv())
    summary = {"command": "rank", "config": _echo(cfg), "ranking": report.summary(rk["top_r"])}
    if rk["retrain_top"] is not None:
        test = _optional(paths["test"])
        valid = _optional(paths["valid"])
        _, base_metrics = _fit_and_report(cfg, data, valid, test)
        selected = ranking.select_and_retrain(data, report, rk["retrain_top"], widths, tcfg, valid)
        sel_metrics = {"train_accuracy": trainer.evaluate(selected, data)}
        if test is not None:
            sel_metrics["test_accuracy"] = trainer.evaluate(selected, test)
            sel_metrics["test_error_pct"] = _error_pct(sel_metrics["test_accuracy"])
        summary["baseline"] = base_metrics
        summary["selected"] = dict(
            sel_metrics,
            kept_features=[[data.feature_names[d][k] for k in kept] for d, kept in enumerate(selected.kept_features)],
        )
        io.write_bytes(os.path.join(out, "selected_model.zip"), trainer.to_bytes(selected))
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"ranked {sum(data.n_features)} features over {len(report.baselines)} pairs; results in {out}")
    return 0


def _echo(cfg):
    """Config as echoed in outputs; the worker count never affects results, so it is left out."""
    out = copy.deepcopy(cfg)
    out.pop("workers", None)
    return out


def _load_model(path):
    if path is None:
        raise InvalidConfig("--model is required")
    return trainer.from_bytes(io.read_bytes(path))


def cmd_predict(args, cfg):
    model = _load_model(cfg["paths"]["model"])
    if args.views and not args.labels:
        # unlabeled input: placeholder labels, never reported
        views = []
        for d, path in enumerate(args.views):
            if not os.path.exists(path):
                raise IoError(f"view {d + 1}: file not found: {path}")
            views.append(io.read_matrix_csv(path)[1])
        data = MultiViewDataset(views=views, labels=np.ones(views[0].shape[0], dtype=np.int64))
    else:
        data = load_data(cfg["paths"]["data"], args.views, args.labels)
    scores = trainer.project(model, data)
    pooled = trainer.classifier.predict(model.centroids["pooled"], scores)
    per_view = [trainer.classifier.predict(model.centroids[d], scores) for d in range(model.n_views)]
    header = ["sample", "predicted"] + [f"predicted_view{d + 1}" for d in range(model.n_views)]
    for d, s in enumerate(scores):
        header += [f"view{d + 1}_score{r + 1}" for r in range(s.shape[1])]
    lines = [",".join(header)]
    for i in range(data.n_samples):
        row = [str(i + 1), str(int(pooled[i]))] + [str(int(p[i])) for p in per_view]
        for s in scores:
            row += [repr(float(v)) for v in s[i]]
        lines.append(",".join(row))
    out = cfg["paths"]["out"] or "predictions.csv"
    io.write_text(out, "\n".join(lines) + "\n")
    print(f"wrote {data.n_samples} predictions to {out}")
    return 0


def cmd_evaluate(args, cfg):
    model = _load_model(cfg["paths"]["model"])
    data = load_data(cfg["paths"]["data"], args.views, args.labels)
    acc = trainer.evaluate(model, data)
    doc = {"command": "evaluate", "model": cfg["paths"]["model"], "accuracy": acc, "error_pct": _error_pct(acc)}
    out = cfg["paths"]["out"]
    if out:
        _write_json(out, doc)
    print(io.dumps_json(dict(doc, package_version=__version__)), end="")
    return 0


# -- parser ------------------------------------------------------------------------

def _int_list(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _paths(text):
    return [p for p in text.split(",") if p]


def build_parser():
    parser = argparse.ArgumentParser(prog="deepida", description="Deep integrative discriminant analysis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("kind", choices=["linear", "nonlinear"])
    sim.add_argument("--d", type=int, default=2, help="number of views (linear only)")
    sim.add_argument("--p", type=_int_list, help="features per view, e.g. 100,100")
    sim.add_argument("--nk", type=int, default=180, help="samples per class (linear)")
    sim.add_argument("--n", type=_int_list, help="class sizes n1,n2 (nonlinear)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--split", type=lambda s: s.split(","), help="also write train/valid/test splits, e.g. 0.5,0.25,0.25")
    sim.add_argument("--out", required=True, help="output directory")

    def data_args(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--data", help="directory with view1.csv, view2.csv, ... and labels.csv")
        p.add_argument("--views", type=_paths, help="comma-separated view CSV paths (instead of --data)")
        p.add_argument("--labels", help="labels CSV (with --views)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)

    def train_args(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size")
        p.add_argument("--rho", type=float)
        p.add_argument("--l", type=int)
        p.add_argument("--ridge", type=float)
        p.add_argument("--valid", help="validation data directory")
        p.add_argument("--test", help="test data directory")

    tr = sub.add_parser("train", help="train Deep IDA and save the model")
    data_args(tr)
    train_args(tr)
    tr.add_argument("--model", help="model output path (default model.zip)")
    tr.add_argument("--metrics", help="metrics JSON path (default <model>.metrics.json)")

    rk = sub.add_parser("rank", help="bootstrap permutation feature ranking")
    data_args(rk)
    train_args(rk)
    rk.add_argument("--m", type=int, help="number of bootstrap pairs")
    rk.add_argument("--top", help="features to list per view: count or percent, e.g. 20 or 10%%")
    rk.add_argument("--retrain-top", dest="retrain_top", help="retrain on the top R features per view")
    rk.add_argument("--permutations", type=int, help="permutations per feature")
    rk.add_argument("--feature-fraction", dest="feature_fraction", type=float)
    rk.add_argument("--out", help="output directory (default ./ranking)")

    pr = sub.add_parser("predict", help="predict classes with a saved model")
    data_args(pr)
    pr.add_argument("--model", required=True)
    pr.add_argument("--out", help="predictions CSV (default predictions.csv)")

    ev = sub.add_parser("evaluate", help="accuracy of a saved model on labeled data")
    data_args(ev)
    ev.add_argument("--model", required=True)
    ev.add_argument("--out", help="also write the metrics JSON here")
    return parser


def _configure_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        cfg = apply_flags(load_config(args.config), args)
        train_config(cfg)  # validate early
        handler = {"train": cmd_train, "rank": cmd_rank, "predict": cmd_predict, "evaluate": cmd_evaluate}
        return handler[args.command](args, cfg)
    except (DeepIdaError, OSError) as exc:
        message = " ".join(str(exc).split())
        print(f"{type(exc).__name__}: {message}", file=sys.stderr)
        return 2
    except TypeError as exc:
        # bad value types in a config file
        print(f"InvalidConfig: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

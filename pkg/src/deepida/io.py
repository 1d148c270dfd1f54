"""File formats: deterministic array archives, dataset CSVs, JSON documents.

Archive layout (format version 1): a ZIP file with stored (uncompressed)
members and fixed timestamps, so identical content gives identical bytes.

    manifest.json     UTF-8 JSON, sorted keys; always has "format": "deepida",
                      "version": 1 and "kind"; lists array names in "arrays"
    arrays/<name>.npy one NumPy .npy (v1.0, little-endian float64/int64) per array

Dataset CSV contract: one file per view with a header row of feature names
and one row per sample; a labels file with header ``label`` and one integer
class id per row; an optional mask file with header
``view,feature,name,signal`` (1-based view and feature indices, signal 0/1).
"""

from __future__ import annotations

import csv
import io
import json
import os
import zipfile

import numpy as np

from . import __version__
from .data import MultiViewDataset
from .errors import InvalidSpec, IoError, ParseError, ShapeMismatch

FORMAT = "deepida"
FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _member(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    info.create_system = 3
    return info


def archive_bytes(manifest: dict, arrays: dict) -> bytes:
    """Serialize ``manifest`` plus named arrays into deterministic archive bytes."""
    manifest = dict(manifest)
    manifest.update(format=FORMAT, version=FORMAT_VERSION, package_version=__version__)
    manifest["arrays"] = sorted(arrays)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr(_member("manifest.json"), dumps_json(manifest).encode())
        for name in sorted(arrays):
            arr = np.asarray(arrays[name])
            if arr.dtype.kind == "f":
                arr = arr.astype("<f8", copy=False)
            elif arr.dtype.kind in "iub":
                arr = arr.astype("<i8", copy=False)
            else:
                raise InvalidSpec(f"array {name!r} has unsupported dtype {arr.dtype}")
            member = io.BytesIO()
            np.lib.format.write_array(member, np.ascontiguousarray(arr), version=(1, 0), allow_pickle=False)
            zf.writestr(_member(f"arrays/{name}.npy"), member.getvalue())
    return buf.getvalue()


def read_archive_bytes(blob: bytes, kind=None):
    try:
        with zipfile.ZipFile(io.BytesIO(blob)) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format") != FORMAT or manifest.get("version") != FORMAT_VERSION:
                raise InvalidSpec(
                    f"unsupported archive format {manifest.get('format')!r} v{manifest.get('version')}"
                )
            if kind is not None and manifest.get("kind") != kind:
                raise InvalidSpec(f"expected a {kind!r} archive, found {manifest.get('kind')!r}")
            arrays = {}
            for name in manifest["arrays"]:
                with zf.open(f"arrays/{name}.npy") as fh:
                    arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise InvalidSpec(f"corrupt archive: {exc}") from exc
    return manifest, arrays


def _open_for_write(path, mode, **kw):
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    return open(path, mode, **kw)


def write_bytes(path, blob: bytes):
    try:
        with _open_for_write(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def write_text(path, text: str):
    try:
        with _open_for_write(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# -- CSV ----------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def write_matrix_csv(path, matrix, header):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in np.asarray(matrix):
        writer.writerow([_fmt(v) for v in row])
    write_text(path, buf.getvalue())


def read_matrix_csv(path):
    """Return ``(header, matrix)``; malformed rows raise ParseError with the line number."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: line 1: empty file")
    header = rows[0]
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise ParseError(f"{path}: line {i + 2}: expected {len(header)} fields, found {len(row)}")
        try:
            data[i] = [float(v) for v in row]
        except ValueError as exc:
            raise ParseError(f"{path}: line {i + 2}: {exc}") from exc
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.isfinite(data))[0, 0])
        raise ParseError(f"{path}: line {bad + 2}: non-finite value")
    return header, data


def write_labels_csv(path, labels):
    buf = io.StringIO()
    buf.write("label\n")
    for v in labels:
        buf.write(f"{int(v)}\n")
    write_text(path, buf.getvalue())


def read_labels_csv(path):
    header, data = read_matrix_csv(path)
    if data.shape[1] != 1:
        raise ParseError(f"{path}: line 1: labels file must have exactly one column")
    col = data[:, 0]
    frac = np.flatnonzero(col != np.round(col))
    if frac.size:
        raise ParseError(f"{path}: line {frac[0] + 2}: class id must be an integer")
    return col.astype(np.int64)


def write_mask_csv(path, dataset: MultiViewDataset):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["view", "feature", "name", "signal"])
    for d, (mask, names) in enumerate(zip(dataset.signal_mask, dataset.feature_names)):
        for k, (flag, name) in enumerate(zip(mask, names)):
            writer.writerow([d + 1, k + 1, name, int(flag)])
    write_text(path, buf.getvalue())


def read_mask_csv(path, n_features):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    masks = [np.zeros(p, dtype=bool) for p in n_features]
    for i, row in enumerate(rows):
        try:
            d, k, s = int(row["view"]) - 1, int(row["feature"]) - 1, int(row["signal"])
            masks[d][k] = bool(s)
        except (KeyError, ValueError, IndexError, TypeError) as exc:
            raise ParseError(f"{path}: line {i + 2}: {exc}") from exc
    return masks


def view_filenames(n_views):
    return [f"view{d + 1}.csv" for d in range(n_views)]


def save_dataset(dataset: MultiViewDataset, out_dir, prefix=""):
    """Write ``view{d}.csv``, ``labels.csv``, ``mask.csv`` (if known) and ``provenance.json``."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    paths = []
    for name, view, header in zip(view_filenames(dataset.n_views), dataset.views, dataset.feature_names):
        path = os.path.join(out_dir, prefix + name)
        write_matrix_csv(path, view, header)
        paths.append(path)
    write_labels_csv(os.path.join(out_dir, prefix + "labels.csv"), dataset.labels)
    if dataset.signal_mask is not None:
        write_mask_csv(os.path.join(out_dir, prefix + "mask.csv"), dataset)
    write_text(os.path.join(out_dir, prefix + "provenance.json"), dumps_json(dataset.provenance))
    return paths


def load_dataset(view_paths, labels_path, mask_path=None) -> MultiViewDataset:
    views, names = [], []
    for d, path in enumerate(view_paths):
        if not os.path.exists(path):
            raise IoError(f"view {d + 1}: file not found: {path}")
        header, matrix = read_matrix_csv(path)
        views.append(matrix)
        names.append(header)
    if not os.path.exists(labels_path):
        raise IoError(f"labels file not found: {labels_path}")
    labels = read_labels_csv(labels_path)
    for d, v in enumerate(views):
        if v.shape[0] != labels.shape[0]:
            raise ShapeMismatch(f"view {d + 1} has {v.shape[0]} rows but labels have {labels.shape[0]}")
    mask = None
    if mask_path is not None and os.path.exists(mask_path):
        mask = read_mask_csv(mask_path, [v.shape[1] for v in views])
    return MultiViewDataset(views=views, labels=labels, signal_mask=mask, feature_names=names)

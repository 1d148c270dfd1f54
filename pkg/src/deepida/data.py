"""Row-aligned multi-view dataset container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidLabels, ShapeMismatch


@dataclass(frozen=True)
class MultiViewDataset:
    """D sample matrices sharing one label vector.

    Parameters
    ----------
    views : list of ndarray, each shape (n, p_d)
    labels : ndarray of int, shape (n,)
    signal_mask : list of bool ndarray, optional
        Ground-truth signal features per view (simulated data only).
    feature_names : list of list of str, optional
        Defaults to ``v{d}_f{k}`` names.
    provenance : dict
        Free-form description of how the data was produced.
    """

    views: list
    labels: np.ndarray
    signal_mask: list | None = None
    feature_names: list | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        views = [np.ascontiguousarray(v, dtype=np.float64) for v in self.views]
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ShapeMismatch("labels must be a vector")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.mod(labels, 1) == 0):
                raise InvalidLabels("class labels must be integers")
            labels = labels.astype(np.int64)
        if len(views) == 0:
            raise ShapeMismatch("at least one view is required")
        for d, v in enumerate(views):
            if v.ndim != 2:
                raise ShapeMismatch(f"view {d + 1} must be a 2-D matrix")
            if v.shape[0] != labels.shape[0]:
                raise ShapeMismatch(
                    f"view {d + 1} has {v.shape[0]} rows, labels have {labels.shape[0]}"
                )
        names = self.feature_names
        if names is None:
            names = [[f"v{d + 1}_f{k + 1}" for k in range(v.shape[1])] for d, v in enumerate(views)]
        else:
            names = [list(n) for n in names]
            for d, (v, n) in enumerate(zip(views, names)):
                if len(n) != v.shape[1]:
                    raise ShapeMismatch(f"view {d + 1}: {len(n)} names for {v.shape[1]} columns")
        mask = self.signal_mask
        if mask is not None:
            mask = [np.asarray(m, dtype=bool) for m in mask]
            for d, (v, m) in enumerate(zip(views, mask)):
                if m.shape != (v.shape[1],):
                    raise ShapeMismatch(f"view {d + 1}: signal mask length mismatch")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "labels", labels.astype(np.int64, copy=False))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "signal_mask", mask)

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def n_features(self) -> list:
        return [v.shape[1] for v in self.views]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, rows) -> "MultiViewDataset":
        """Rows may repeat (bootstrap draws)."""
        rows = np.asarray(rows, dtype=np.int64)
        return MultiViewDataset(
            views=[v[rows] for v in self.views],
            labels=self.labels[rows],
            signal_mask=self.signal_mask,
            feature_names=self.feature_names,
            provenance=dict(self.provenance),
        )

    def select_features(self, columns) -> "MultiViewDataset":
        """Restrict view d to the column indices ``columns[d]``."""
        if len(columns) != self.n_views:
            raise ShapeMismatch("one column index set per view is required")
        cols = [np.asarray(c, dtype=np.int64) for c in columns]
        return MultiViewDataset(
            views=[v[:, c] for v, c in zip(self.views, cols)],
            labels=self.labels,
            signal_mask=None if self.signal_mask is None else [m[c] for m, c in zip(self.signal_mask, cols)],
            feature_names=[[n[i] for i in c] for n, c in zip(self.feature_names, cols)],
            provenance=dict(self.provenance),
        )

"""Nearest-centroid classification on projected scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidLabels, ShapeMismatch


@dataclass
class CentroidSet:
    """Per-class mean vectors in one score space.

    ``space`` is ``"pooled"`` (views concatenated) or a 0-based view index.
    Rows of ``centroids`` follow ``classes``, which is sorted ascending.
    """

    space: object
    centroids: np.ndarray
    classes: np.ndarray

    @property
    def name(self):
        return "pooled" if self.space == "pooled" else f"view{self.space + 1}"


def select_space(scores, space):
    """Concatenate per-view score matrices, or pick one view."""
    if isinstance(scores, np.ndarray):
        scores = [scores]
    if space == "pooled":
        return np.hstack([np.asarray(s, dtype=np.float64) for s in scores])
    if not isinstance(space, (int, np.integer)) or not 0 <= space < len(scores):
        raise ShapeMismatch(f"space must be 'pooled' or a view index below {len(scores)}, got {space!r}")
    return np.asarray(scores[space], dtype=np.float64)


def fit_centroids(scores, labels, space="pooled") -> CentroidSet:
    x = select_space(scores, space)
    labels = np.asarray(labels)
    if x.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"{x.shape[0]} score rows for {labels.shape[0]} labels")
    classes = np.unique(labels)
    if classes.size == 0:
        raise InvalidLabels("no samples to compute centroids from")
    cents = np.stack([x[labels == c].mean(axis=0) for c in classes])
    if not np.all(np.isfinite(cents)):
        raise InvalidLabels("centroids are not finite")
    return CentroidSet(space, cents, classes)


def distances(centroids: CentroidSet, x):
    """Squared Euclidean distance table (n x K)."""
    diff = x[:, None, :] - centroids.centroids[None, :, :]
    return np.einsum("nkj,nkj->nk", diff, diff)


def predict(centroids: CentroidSet, scores):
    """Class of the closest centroid; ties resolve to the lowest class id."""
    x = select_space(scores, centroids.space)
    if x.ndim != 2 or x.shape[1] != centroids.centroids.shape[1]:
        raise ShapeMismatch(f"scores have dimension {x.shape[-1]}, centroids {centroids.centroids.shape[1]}")
    return centroids.classes[np.argmin(distances(centroids, x), axis=1)]


def accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ShapeMismatch(f"{predicted.shape} predictions for {truth.shape} labels")
    if predicted.size == 0:
        return float("nan")
    return float(np.mean(predicted == truth))

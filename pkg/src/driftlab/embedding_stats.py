"""Distance statistics in the embedding space.

Each embedded sample is summarised by its Euclidean distances to the class
centroids. Detectors consume either the closest-centroid distance (a scalar)
or a four-number summary of the whole distance vector.
"""

from __future__ import annotations

import warnings
from collections import deque
from typing import Iterable, Optional

import numpy as np

SCALAR_MIN = "scalar_min"
SUMMARY4 = "summary4"
LAYOUTS = (SCALAR_MIN, SUMMARY4)


class StatsError(ValueError):
    pass


def distances(e: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Euclidean distance from each embedding to each centroid.

    Accepts a single embedding of shape (d,) or a batch (n, d); returns
    shape (k,) or (n, k) accordingly.
    """
    e = np.asarray(e, dtype=float)
    C = np.asarray(C, dtype=float)
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(C))):
        raise StatsError("non-finite embedding or centroid")
    diff = e[..., None, :] - C
    return np.sqrt(np.einsum("...kd,...kd->...k", diff, diff))


def feature_min(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape[-1] == 0:
        raise StatsError("empty distance vector")
    return d.min(axis=-1, keepdims=True)


def feature_summary(d: np.ndarray) -> np.ndarray:
    """(mean, population std, max, min) along the last axis."""
    d = np.asarray(d, dtype=float)
    if d.shape[-1] == 0:
        raise StatsError("empty distance vector")
    mean = d.mean(axis=-1)
    # clip guards min <= mean <= max against round-off
    lo, hi = d.min(axis=-1), d.max(axis=-1)
    mean = np.clip(mean, lo, hi)
    std = np.where(hi == lo, 0.0, d.std(axis=-1))
    return np.stack([mean, std, hi, lo], axis=-1)


def compute_features(d: np.ndarray, layout: str) -> np.ndarray:
    if layout == SCALAR_MIN:
        return feature_min(d)
    if layout == SUMMARY4:
        return feature_summary(d)
    raise StatsError(f"unknown feature layout {layout!r}")


def embedding_features(model, x: np.ndarray, layout: str = SCALAR_MIN) -> np.ndarray:
    """Feature rows (n, 1) or (n, 4) for a batch of raw inputs."""
    return compute_features(distances(model.embed(x), model.centroids), layout)


class ReferenceStatistics:
    """Bounded FIFO of feature vectors with running per-component moments.

    ``capacity=None`` keeps every inserted vector. Moments are maintained with
    Welford updates, including the reverse update on eviction.
    """

    def __init__(self, dim: int, capacity: Optional[int] = None):
        if dim < 1:
            raise StatsError("dim must be >= 1")
        if capacity is not None and capacity < 1:
            raise StatsError("capacity must be >= 1")
        self.dim = dim
        self.capacity = capacity
        self.samples: deque = deque()
        self._mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def mean(self) -> np.ndarray:
        return self._mean.copy()

    @property
    def var(self) -> np.ndarray:
        n = len(self.samples)
        if n == 0:
            return np.zeros(self.dim)
        return np.maximum(self._m2 / n, 0.0)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def add(self, v) -> Optional[np.ndarray]:
        """Insert one vector; returns the evicted vector, if any."""
        v = np.asarray(v, dtype=float).reshape(self.dim)
        evicted = None
        if self.capacity is not None and len(self.samples) == self.capacity:
            evicted = self._remove_oldest()
        self.samples.append(v)
        n = len(self.samples)
        delta = v - self._mean
        self._mean = self._mean + delta / n
        self._m2 = self._m2 + delta * (v - self._mean)
        return evicted

    def extend(self, rows: Iterable) -> None:
        for v in rows:
            self.add(v)

    def _remove_oldest(self) -> np.ndarray:
        v = self.samples.popleft()
        n = len(self.samples)
        if n == 0:
            self._mean = np.zeros(self.dim)
            self._m2 = np.zeros(self.dim)
            return v
        old_mean = self._mean
        self._mean = (old_mean * (n + 1) - v) / n
        self._m2 = self._m2 - (v - old_mean) * (v - self._mean)
        return v

    def as_array(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, self.dim))
        return np.vstack(self.samples)


def init_reference(
    model,
    C: Optional[np.ndarray],
    reference_x: np.ndarray,
    layout: str = SCALAR_MIN,
    capacity: Optional[int] = None,
) -> ReferenceStatistics:
    """Build reference statistics from the reference slice of the stream.

    ``C`` overrides the model's centroids when given.
    """
    reference_x = np.asarray(reference_x, dtype=float)
    if reference_x.ndim != 2 or len(reference_x) == 0:
        raise StatsError("empty reference slice")
    cents = model.centroids if C is None else C
    feats = compute_features(distances(model.embed(reference_x), cents), layout)
    return reference_from_features(feats, capacity)


def reference_from_features(feats: np.ndarray, capacity: Optional[int] = None) -> ReferenceStatistics:
    feats = np.asarray(feats, dtype=float)
    if feats.ndim == 1:
        feats = feats[:, None]
    if len(feats) == 0:
        raise StatsError("empty reference slice")
    ref = ReferenceStatistics(feats.shape[1], capacity)
    ref.extend(feats)
    return ref


def generalized_variance(embeddings: np.ndarray, labels: np.ndarray, k: Optional[int] = None):
    """Per-class determinant of the embedding covariance, and their mean.

    Covariance is the population covariance about the empirical class mean.
    Classes with fewer than two samples get GV 0 and trigger a warning.
    """
    embeddings = np.asarray(embeddings, dtype=float)
    labels = np.asarray(labels)
    if k is None:
        k = int(labels.max()) + 1 if len(labels) else 0
    per_class = np.zeros(k)
    for j in range(k):
        pts = embeddings[labels == j]
        if len(pts) < 2:
            warnings.warn(f"class {j} has {len(pts)} samples; GV set to 0", RuntimeWarning, stacklevel=2)
            continue
        cov = np.cov(pts, rowvar=False, bias=True)
        per_class[j] = max(float(np.linalg.det(np.atleast_2d(cov))), 0.0)
    mean_gv = float(per_class.mean()) if k else 0.0
    return per_class, mean_gv


def gv_reduction(gv_constrained: float, gv_unconstrained: float) -> float:
    """Fractional reduction 1 - on/off (multiply by 100 for percent)."""
    if gv_unconstrained <= 0:
        return float("nan")
    return 1.0 - gv_constrained / gv_unconstrained

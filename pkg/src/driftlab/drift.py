"""Task-dependent drift injection.

Features are ranked by information gain with the label; drift is then
injected into the most or least informative quarter of them, either as an
abrupt shuffle (step) or as multiplicative noise with a growing spread
(gradual).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

N_BINS = 10
SUBSET_FRACTION = 0.25
GRADUAL_MAX_SIGMA = 2.0
DRIFT_KINDS = ("step", "gradual")
FEATURE_MODES = ("most", "least")


class DriftError(ValueError):
    pass


@dataclass
class FeatureRanking:
    order: np.ndarray
    gains: np.ndarray


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def _equal_width_bins(col: np.ndarray, n_bins: int) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if not hi > lo:
        return np.zeros(len(col), dtype=np.int64)
    idx = np.floor((col - lo) / (hi - lo) * n_bins).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def information_gain(col: np.ndarray, labels: np.ndarray, k: int, n_bins: int = N_BINS) -> float:
    bins = _equal_width_bins(np.asarray(col, dtype=float), n_bins)
    joint = np.zeros((n_bins, k))
    np.add.at(joint, (bins, labels), 1)
    h_y = _entropy(joint.sum(axis=0))
    n = len(labels)
    h_cond = sum(row.sum() / n * _entropy(row) for row in joint if row.sum() > 0)
    # round-off can push a zero gain slightly negative
    return max(h_y - h_cond, 0.0)


def rank_information_gain(features: np.ndarray, labels: np.ndarray, n_bins: int = N_BINS) -> FeatureRanking:
    """Rank columns by information gain, highest first; ties keep column order."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DriftError("information gain needs at least two classes")
    k = int(labels.max()) + 1
    gains = np.array([information_gain(features[:, f], labels, k, n_bins) for f in range(features.shape[1])])
    order = np.argsort(-gains, kind="stable")
    return FeatureRanking(order=order, gains=gains)


def subset_size(q: int, fraction: float = SUBSET_FRACTION) -> int:
    # half-up rounding, never fewer than one feature
    return max(1, int(math.floor(fraction * q + 0.5)))


def select_subset(ranking: FeatureRanking, feature_mode: str, q: Optional[int] = None) -> np.ndarray:
    q = len(ranking.order) if q is None else q
    if q < 1:
        raise DriftError("q must be >= 1")
    count = subset_size(q)
    if feature_mode == "most":
        return ranking.order[:count].copy()
    if feature_mode == "least":
        return ranking.order[len(ranking.order) - count :].copy()
    raise DriftError(f"feature_mode must be one of {FEATURE_MODES}, got {feature_mode!r}")


@dataclass
class DriftPlan:
    kind: str
    feature_mode: str
    feature_indices: np.ndarray
    onset: int
    ramp_end: Optional[int] = None
    seed: int = 0

    def validate(self, stream_length: Optional[int] = None, q: Optional[int] = None) -> None:
        if self.kind not in DRIFT_KINDS:
            raise DriftError(f"drift kind must be one of {DRIFT_KINDS}, got {self.kind!r}")
        idx = np.asarray(self.feature_indices)
        if len(np.unique(idx)) != len(idx):
            raise DriftError("feature indices must be distinct")
        if q is not None and len(idx) and (idx.min() < 0 or idx.max() >= q):
            raise DriftError("feature index out of range")
        if self.onset < 0 or (stream_length is not None and self.onset >= stream_length):
            raise DriftError(f"onset {self.onset} out of range")
        if self.kind == "gradual":
            if self.ramp_end is None or self.ramp_end <= self.onset:
                raise DriftError("gradual drift needs ramp_end > onset")
            if stream_length is not None and self.ramp_end > stream_length:
                raise DriftError("ramp_end beyond the stream")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_indices"] = [int(i) for i in self.feature_indices]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DriftPlan":
        d = dict(d)
        d["feature_indices"] = np.asarray(d["feature_indices"], dtype=np.int64)
        return cls(**d)


def make_plan(ranking: FeatureRanking, kind: str, feature_mode: str, stream_length: int, seed: int = 0) -> DriftPlan:
    """Plan with onset at half the stream and the ramp ending at three quarters."""
    plan = DriftPlan(
        kind=kind,
        feature_mode=feature_mode,
        feature_indices=select_subset(ranking, feature_mode),
        onset=stream_length // 2,
        ramp_end=(3 * stream_length) // 4 if kind == "gradual" else None,
        seed=seed,
    )
    plan.validate(stream_length, len(ranking.order))
    return plan


def _plan_rng(plan: DriftPlan) -> np.random.Generator:
    return np.random.default_rng([plan.seed, 2])


def induce_step_drift(stream: np.ndarray, plan: DriftPlan) -> np.ndarray:
    """Shuffle each selected column independently over the post-onset rows."""
    if plan.kind != "step":
        raise DriftError("induce_step_drift needs a step plan")
    plan.validate(len(stream), stream.shape[1])
    out = np.array(stream, dtype=float, copy=True)
    rng = _plan_rng(plan)
    for f in plan.feature_indices:
        out[plan.onset :, f] = rng.permutation(out[plan.onset :, f])
    return out


def gradual_sigma(t: np.ndarray, onset: int, ramp_end: int) -> np.ndarray:
    frac = (np.asarray(t, dtype=float) - onset) / (ramp_end - onset)
    return GRADUAL_MAX_SIGMA * np.clip(frac, 0.0, 1.0)


def induce_gradual_drift(stream: np.ndarray, plan: DriftPlan) -> np.ndarray:
    """Multiply selected post-onset cells by noise ``eta ~ N(1, sigma(t)^2)``."""
    if plan.kind != "gradual":
        raise DriftError("induce_gradual_drift needs a gradual plan")
    plan.validate(len(stream), stream.shape[1])
    out = np.array(stream, dtype=float, copy=True)
    rng = _plan_rng(plan)
    t = np.arange(plan.onset, len(out))
    sigma = gradual_sigma(t, plan.onset, plan.ramp_end)
    for f in plan.feature_indices:
        eta = 1.0 + sigma * rng.standard_normal(len(t))
        out[plan.onset :, f] = out[plan.onset :, f] * eta
    return out


def induce_drift(stream: np.ndarray, plan: Optional[DriftPlan]) -> np.ndarray:
    if plan is None:
        return np.array(stream, dtype=float, copy=True)
    if plan.kind == "step":
        return induce_step_drift(stream, plan)
    return induce_gradual_drift(stream, plan)


def write_drifted_csv(path: str | os.PathLike, stream: np.ndarray, labels: np.ndarray,
                      feature_names: Sequence[str], onset: Optional[int]) -> None:
    """Write a stream with a ``drifted`` column set on rows from ``onset`` on.

    ``onset=None`` marks no rows.
    """
    stream = np.asarray(stream, dtype=float)
    marker = np.zeros(len(stream), dtype=np.int64)
    if onset is not None:
        marker[onset:] = 1
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*feature_names, "label", "drifted"])
        for row, y, m in zip(stream, labels, marker):
            writer.writerow([*(repr(float(v)) for v in row), int(y), int(m)])

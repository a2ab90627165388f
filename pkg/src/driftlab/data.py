"""Dataset ingestion, preprocessing, splitting and synthetic stream generation."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


@dataclass
class Dataset:
    """Feature matrix plus dense integer labels.

    ``categorical`` maps a column index to its level names for columns that
    still hold integer category codes (before one-hot expansion).
    """

    features: np.ndarray
    labels: np.ndarray
    k: int
    feature_names: list[str]
    class_names: list[str] = field(default_factory=list)
    categorical: dict[int, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n, q = self.features.shape
        if n < 1:
            raise DataError("empty dataset")
        if q < 1:
            raise DataError("dataset has no feature columns")
        if self.labels.shape != (n,):
            raise DataError("labels must have one entry per row")
        if self.labels.min() < 0 or self.labels.max() >= self.k:
            raise DataError("labels must lie in 0..k-1")
        if len(self.feature_names) != q:
            raise DataError("feature_names arity does not match features")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def q(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, features=self.features[idx], labels=self.labels[idx])


@dataclass(frozen=True)
class DataSplits:
    """Index ranges into a (shuffled) dataset.

    ``reference`` and ``drift_onset`` are relative to the start of ``test``.
    Validation is carved from the tail of the train range.
    """

    train: range
    test: range
    reference: range
    drift_onset: int

    @classmethod
    def for_size(cls, n: int) -> "DataSplits":
        if n < 8:
            raise DataError(f"dataset too small: need at least 8 rows, got {n}")
        n_train = n // 2
        n_test = n - n_train
        return cls(
            train=range(0, n_train),
            test=range(n_train, n),
            reference=range(0, n_test // 4),
            drift_onset=n_test // 2,
        )

    @property
    def fit(self) -> range:
        """Portion of the train range used for gradient steps."""
        n_fit = (len(self.train) * 4) // 5
        return range(self.train.start, self.train.start + n_fit)

    @property
    def validation(self) -> range:
        return range(self.fit.stop, self.train.stop)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    categorical: dict[int, list[str]] = field(default_factory=dict)
    input_arity: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "categorical": {str(k): v for k, v in self.categorical.items()},
            "input_arity": self.input_arity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            categorical={int(k): list(v) for k, v in d.get("categorical", {}).items()},
            input_arity=d.get("input_arity"),
        )


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    informative_dims: int
    redundant_dims: int
    noise_dims: int
    k: int
    cluster_std: float = 1.0
    drift_kind: str = "none"
    seed: int = 0

    @classmethod
    def rbf(cls, seed: int = 0) -> "SyntheticSpec":
        return cls(10000, 10, 5, 5, 4, 1.0, "none", seed)

    @classmethod
    def moving_rbf(cls, drift_kind: str = "step", seed: int = 0) -> "SyntheticSpec":
        return cls(10000, 10, 0, 0, 4, 1.0, drift_kind, seed)

    def validate(self) -> None:
        if self.n < 8 or self.informative_dims < 1 or self.k < 1:
            raise DataError("synthetic spec needs n >= 8, informative_dims >= 1, k >= 1")
        if self.redundant_dims < 0 or self.noise_dims < 0:
            raise DataError("redundant/noise dimension counts must be non-negative")
        if self.cluster_std <= 0:
            raise DataError("cluster_std must be positive")
        if self.drift_kind not in ("none", "step", "gradual"):
            raise DataError(f"unknown drift kind {self.drift_kind!r}")


# --------------------------------------------------------------------------- CSV


def _parse_float(cell: str) -> Optional[float]:
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(path: str | os.PathLike, label_column: str = "label") -> Dataset:
    """Read a comma-separated file with a mandatory header row.

    Columns in which no cell parses as a number are treated as categorical
    and stored as integer codes (first-appearance order); they are expanded
    by :func:`one_hot_encode`. A numeric column containing a non-numeric
    cell is an error. Labels are mapped to ``0..k-1`` in order of first
    appearance.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError("empty dataset")
    header, body = rows[0], rows[1:]
    if label_column not in header:
        raise DataError(f"label column {label_column!r} not found in header")
    if not body:
        raise DataError("empty dataset")
    width = len(header)
    for lineno, row in enumerate(body, start=2):
        if len(row) != width:
            raise DataError(f"ragged row at line {lineno}: {len(row)} cells, expected {width}")

    label_idx = header.index(label_column)
    class_names: list[str] = []
    codes: dict[str, int] = {}
    labels = np.empty(len(body), dtype=np.int64)
    for i, row in enumerate(body):
        cell = row[label_idx].strip()
        if cell not in codes:
            codes[cell] = len(class_names)
            class_names.append(cell)
        labels[i] = codes[cell]

    names = [h for j, h in enumerate(header) if j != label_idx]
    cols = [j for j in range(width) if j != label_idx]
    features = np.empty((len(body), len(cols)), dtype=np.float64)
    categorical: dict[int, list[str]] = {}
    for c, j in enumerate(cols):
        cells = [row[j].strip() for row in body]
        parsed = [_parse_float(s) for s in cells]
        n_numeric = sum(v is not None for v in parsed)
        if n_numeric == len(cells):
            features[:, c] = parsed
        elif n_numeric == 0:
            levels: list[str] = []
            lookup: dict[str, int] = {}
            for i, s in enumerate(cells):
                if s not in lookup:
                    lookup[s] = len(levels)
                    levels.append(s)
                features[i, c] = lookup[s]
            categorical[c] = levels
        else:
            bad = next(i for i, v in enumerate(parsed) if v is None)
            raise DataError(
                f"non-numeric feature cell {cells[bad]!r} in column {names[c]!r} (line {bad + 2})"
            )
    if not np.all(np.isfinite(features)):
        raise DataError("non-finite feature values in input")
    return Dataset(features, labels, len(class_names), names, class_names, categorical)


def write_csv(ds: Dataset, path: str | os.PathLike, extra: Optional[dict[str, Sequence]] = None) -> None:
    """Write ``ds`` with a trailing ``label`` column (plus optional extra columns)."""
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + ["label"] + list(extra))
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]]
            row.append(str(int(ds.labels[i])))
            row.extend(str(col[i]) for col in extra.values())
            w.writerow(row)


# ------------------------------------------------------------------ preprocessing


def one_hot_encode(ds: Dataset, categorical: Optional[dict[int, list[str]]] = None) -> Dataset:
    """Expand categorical code columns into binary indicator columns.

    ``categorical`` overrides the dataset's own level lists so that a test
    portion is encoded with the levels seen at training time.
    """
    cats = ds.categorical if categorical is None else categorical
    if not cats:
        return replace(ds, categorical={})
    blocks, names = [], []
    for c in range(ds.q):
        col = ds.features[:, c]
        if c in cats:
            levels = cats[c]
            codes = col.astype(np.int64)
            onehot = np.zeros((ds.n, len(levels)))
            valid = (codes >= 0) & (codes < len(levels))
            onehot[np.nonzero(valid)[0], codes[valid]] = 1.0
            blocks.append(onehot)
            names.extend(f"{ds.feature_names[c]}={lvl}" for lvl in levels)
        else:
            blocks.append(col[:, None])
            names.append(ds.feature_names[c])
    return replace(ds, features=np.hstack(blocks), feature_names=names, categorical={})


def encode_and_normalize(ds: Dataset, stats: Optional[NormStats] = None) -> tuple[Dataset, NormStats]:
    """One-hot expand categorical columns, then z-score every column.

    Uses population moments; zero-variance columns map to 0. When ``stats``
    is given (typically fitted on the training portion) it is applied as-is.
    """
    if stats is None:
        cats = dict(ds.categorical)
        enc = one_hot_encode(ds, cats)
        mean = enc.features.mean(axis=0)
        std = enc.features.std(axis=0)
        stats = NormStats(mean, std, cats, ds.q)
    else:
        if stats.input_arity is not None and stats.input_arity != ds.q:
            raise DataError(
                f"arity mismatch: stats expect {stats.input_arity} input columns, got {ds.q}"
            )
        enc = one_hot_encode(ds, stats.categorical)
        if enc.q != stats.mean.shape[0]:
            raise DataError(
                f"arity mismatch: stats cover {stats.mean.shape[0]} features, data has {enc.q}"
            )
    safe = np.where(stats.std > 0, stats.std, 1.0)
    x = np.where(stats.std > 0, (enc.features - stats.mean) / safe, 0.0)
    return replace(enc, features=x), stats


def shuffle_split(ds: Dataset, seed: int) -> tuple[Dataset, DataSplits]:
    """Permute rows with a seeded RNG and attach the fixed split layout."""
    splits = DataSplits.for_size(ds.n)
    perm = np.random.default_rng(seed).permutation(ds.n)
    return ds.subset(perm), splits


# ---------------------------------------------------------------- synthetic data

CENTROID_BOX = 3.0
_MAX_COVERAGE_ATTEMPTS = 10


def _sample_centroids(rng: np.random.Generator, k: int, dims: int) -> np.ndarray:
    return rng.uniform(-CENTROID_BOX, CENTROID_BOX, size=(k, dims))


def _check_coverage(labels: np.ndarray, k: int) -> bool:
    head = labels[: len(labels) // 2]
    return np.unique(head).size == k


def generate_rbf(spec: SyntheticSpec, seed: Optional[int] = None) -> Dataset:
    """Gaussian blobs with redundant copies and pure-noise columns.

    Column order is informative, redundant, noise. Every class appears in
    the first half of the rows; otherwise the draw is repeated with a
    derived seed (at most 10 attempts).
    """
    spec.validate()
    seed = spec.seed if seed is None else seed
    for attempt in range(_MAX_COVERAGE_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        centroids = _sample_centroids(rng, spec.k, spec.informative_dims)
        labels = rng.integers(0, spec.k, size=spec.n)
        if _check_coverage(labels, spec.k):
            break
    else:
        raise DataError(f"could not cover all {spec.k} classes in the train half")
    informative = centroids[labels] + spec.cluster_std * rng.standard_normal(
        (spec.n, spec.informative_dims)
    )
    sources = rng.integers(0, spec.informative_dims, size=spec.redundant_dims)
    redundant = informative[:, sources]
    noise = rng.standard_normal((spec.n, spec.noise_dims))
    x = np.hstack([informative, redundant, noise])
    names = (
        [f"inf{i}" for i in range(spec.informative_dims)]
        + [f"red{i}_of_inf{s}" for i, s in enumerate(sources)]
        + [f"noise{i}" for i in range(spec.noise_dims)]
    )
    return Dataset(x, labels, spec.k, names, [str(c) for c in range(spec.k)])


@dataclass
class DriftMeta:
    initial_centroids: np.ndarray
    final_centroids: np.ndarray
    onset_fraction: float
    ramp_end_fraction: float
    kind: str

    def to_dict(self) -> dict:
        return {
            "initial_centroids": self.initial_centroids.tolist(),
            "final_centroids": self.final_centroids.tolist(),
            "onset_fraction": self.onset_fraction,
            "ramp_end_fraction": self.ramp_end_fraction,
            "kind": self.kind,
            "ordered": True,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DriftMeta":
        return cls(
            np.asarray(d["initial_centroids"]),
            np.asarray(d["final_centroids"]),
            float(d["onset_fraction"]),
            float(d["ramp_end_fraction"]),
            d["kind"],
        )


def moving_rbf_centroids(meta: DriftMeta, n: int) -> np.ndarray:
    """Per-row interpolation weight toward the final centroids (0 = initial)."""
    splits = DataSplits.for_size(n)
    onset = splits.test.start + splits.drift_onset
    ramp_end = splits.test.start + (3 * len(splits.test)) // 4
    t = np.arange(n)
    if meta.kind == "none":
        return np.zeros(n)
    if meta.kind == "step":
        return (t >= onset).astype(np.float64)
    return np.clip((t - onset) / (ramp_end - onset), 0.0, 1.0)


def generate_moving_rbf(spec: SyntheticSpec, seed: Optional[int] = None) -> tuple[Dataset, DriftMeta]:
    """Gaussian blobs whose class centroids relocate during the test half.

    Rows are emitted in stream order and must not be shuffled: the first
    half is training data, and the drift starts halfway through the second
    half. ``drift_kind="none"`` keeps the centroids fixed.
    """
    spec.validate()
    seed = spec.seed if seed is None else seed
    for attempt in range(_MAX_COVERAGE_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        initial = _sample_centroids(rng, spec.k, spec.informative_dims)
        final = _sample_centroids(rng, spec.k, spec.informative_dims)
        labels = rng.integers(0, spec.k, size=spec.n)
        if _check_coverage(labels, spec.k):
            break
    else:
        raise DataError(f"could not cover all {spec.k} classes in the train half")
    if spec.drift_kind == "none":
        final = initial.copy()
    meta = DriftMeta(initial, final, 0.75, 0.875, spec.drift_kind)
    weight = moving_rbf_centroids(meta, spec.n)[:, None]
    centers = (1.0 - weight) * initial[labels] + weight * final[labels]
    x = centers + spec.cluster_std * rng.standard_normal((spec.n, spec.informative_dims))
    names = [f"x{i}" for i in range(spec.informative_dims)]
    return Dataset(x, labels, spec.k, names, [str(c) for c in range(spec.k)]), meta


def write_drift_meta(meta: DriftMeta, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta.to_dict(), fh, indent=2)


def sidecar_path(csv_path: str | os.PathLike) -> str:
    root, _ = os.path.splitext(os.fspath(csv_path))
    return root + ".drift_meta.json"


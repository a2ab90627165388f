"""Experiment orchestration: split, train, inject drift, detect, score, persist.

One *unit* of work is a seed. Within a unit every model (constrained or not)
is trained once and reused by all detectors, drift settings and, for the
ablation grid, all (w, r) cells. Units share nothing, so they can run in
separate processes.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .data import (
    DataSplits,
    Dataset,
    NormStats,
    SyntheticSpec,
    encode_and_normalize,
    generate_moving_rbf,
    generate_rbf,
    load_csv,
    shuffle_split,
)
from .detectors import KINDS, DetectorConfig, RunResult, needs_model, run_stream
from .drift import FEATURE_MODES, induce_drift, make_plan, rank_information_gain
from .embedding_stats import generalized_variance
from .evaluation import (
    ScoreRecord,
    aggregate,
    average_ranks,
    classify_drift_type,
    emit_cd_diagram,
    friedman_test,
    nemenyi_cd,
    score_run,
    write_penalty_curve,
)
from .neural import Model, TrainConfig, evaluate_accuracy, fit_model

log = logging.getLogger(__name__)

PRESETS = ("rbf", "moving_rbf")
DRIFT_SETTING_KINDS = ("step", "gradual", "none")
NA_MODE = "na"
GROUPINGS = ("all", "real", "virtual")
SUMMARY_COLUMNS = (
    "dataset", "detector", "constrained", "drift_kind", "feature_mode",
    "da_mean", "da_std", "tnr_mean", "tnr_std", "delay_mean", "delay_std",
    "h_mean", "h_std", "n_ok", "n_failed", "label_real_frac",
)


class ConfigError(ValueError):
    pass


def _constrained_values(spec) -> tuple[bool, ...]:
    if spec in (True, "true"):
        return (True,)
    if spec in (False, "false"):
        return (False,)
    if spec == "both":
        return (True, False)
    raise ConfigError(f"constrained must be true, false or both, got {spec!r}")


@dataclass
class ExperimentConfig:
    """A benchmark description. Serialises to a single JSON document."""

    dataset: str
    detectors: list = field(default_factory=lambda: ["zsd"])
    constrained: str = "both"
    drift: list = field(default_factory=lambda: [["step", "most"]])
    seeds: list = field(default_factory=lambda: list(range(10)))
    w: int = 50
    r: float = 0.25
    gamma: float = 2.0
    d_max: Optional[int] = None
    lam: float = 0.95
    alpha_zsd: float = 0.05
    alpha_iks: float = 0.01
    zsd_reference: str = "cumulative"
    label_column: str = "label"
    train: dict = field(default_factory=dict)
    output: str = "results"
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.constrained, bool):
            self.constrained = "true" if self.constrained else "false"
        self.drift = [list(s) for s in self.drift]
        self.detectors = list(self.detectors)
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self) -> None:
        if not self.detectors:
            raise ConfigError("detectors must not be empty")
        bad = [k for k in self.detectors if k not in KINDS]
        if bad:
            raise ConfigError(f"unknown detector kinds {bad}; expected {list(KINDS)}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        _constrained_values(self.constrained)
        if not self.drift:
            raise ConfigError("drift must list at least one [kind, feature_mode] pair")
        for s in self.drift:
            if len(s) != 2 or s[0] not in DRIFT_SETTING_KINDS or s[1] not in (*FEATURE_MODES, NA_MODE):
                raise ConfigError(f"bad drift setting {s!r}")
        if self.dataset not in PRESETS and not self.dataset.lower().endswith(".csv"):
            raise ConfigError(f"dataset must be one of {PRESETS} or a .csv path, got {self.dataset!r}")
        try:
            self.detector_config()
            self.train_config(0)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    # -- derived objects

    def detector_config(self, w: Optional[int] = None, r: Optional[float] = None) -> DetectorConfig:
        return DetectorConfig(
            w=self.w if w is None else w,
            r=self.r if r is None else r,
            d_max=self.d_max,
            lam=self.lam,
            alpha_zsd=self.alpha_zsd,
            alpha_iks=self.alpha_iks,
            zsd_reference=self.zsd_reference,
        )

    def train_config(self, seed: int) -> TrainConfig:
        known = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
        unknown = set(self.train) - known
        if unknown:
            raise ConfigError(f"unknown train keys {sorted(unknown)}")
        cfg = TrainConfig(seed=seed, **self.train)
        cfg.validate()
        return cfg

    def settings(self) -> list[tuple[str, str]]:
        """Drift settings; synthetic drift streams carry no feature mode."""
        out = []
        for kind, mode in self.drift:
            if self.dataset == "moving_rbf" or kind == "none":
                mode = NA_MODE
            elif mode == NA_MODE:
                raise ConfigError(f"drift kind {kind!r} on {self.dataset!r} needs most/least")
            if (kind, mode) not in out:
                out.append((kind, mode))
        return out

    # -- serialisation

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "dataset" not in d:
            raise ConfigError("config needs a dataset")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output")
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


# ------------------------------------------------------------------ preparation


@dataclass
class PreparedData:
    """Normalised data for one seed and drift setting, with the test part drifted."""

    name: str
    features: np.ndarray  # full normalised matrix; test rows already drifted
    labels: np.ndarray
    splits: DataSplits
    k: int
    feature_names: list
    drift_kind: str
    feature_mode: str
    plan: Optional[dict] = None
    norm: Optional[NormStats] = None

    @property
    def train_dataset(self) -> Dataset:
        return Dataset(self.features, self.labels, self.k, list(self.feature_names))

    def test_slice(self) -> tuple[np.ndarray, np.ndarray]:
        t = self.splits.test
        return self.features[t.start : t.stop], self.labels[t.start : t.stop]

    def reference_and_stream(self) -> tuple[np.ndarray, np.ndarray, int]:
        x, _ = self.test_slice()
        ref = self.splits.reference
        onset = self.splits.drift_onset - ref.stop
        return x[ref.start : ref.stop], x[ref.stop :], onset


def _normalise(ds: Dataset, splits: DataSplits) -> tuple[Dataset, NormStats]:
    train = ds.subset(np.arange(splits.train.start, splits.train.stop))
    _, stats = encode_and_normalize(train)
    out, _ = encode_and_normalize(ds, stats)
    return out, stats


def prepare_data(cfg: ExperimentConfig, seed: int, drift_kind: str, feature_mode: str) -> PreparedData:
    if cfg.dataset == "moving_rbf":
        ds, _meta = generate_moving_rbf(SyntheticSpec.moving_rbf(drift_kind, seed))
        splits = DataSplits.for_size(ds.n)
        ds, stats = _normalise(ds, splits)
        return PreparedData("moving_rbf", ds.features, ds.labels, splits, ds.k, ds.feature_names, drift_kind,
                            NA_MODE, norm=stats)

    if cfg.dataset == "rbf":
        raw = generate_rbf(SyntheticSpec.rbf(seed))
        name = "rbf"
    else:
        raw = load_csv(cfg.dataset, cfg.label_column)
        name = os.path.splitext(os.path.basename(cfg.dataset))[0]
    ds, splits = shuffle_split(raw, seed)
    ds, stats = _normalise(ds, splits)
    x = ds.features.copy()
    plan_dict = None
    if drift_kind != "none":
        tr = slice(splits.train.start, splits.train.stop)
        ranking = rank_information_gain(x[tr], ds.labels[tr])
        test = slice(splits.test.start, splits.test.stop)
        plan = make_plan(ranking, drift_kind, feature_mode, len(splits.test), seed)
        x[test] = induce_drift(x[test], plan)
        plan_dict = plan.to_dict()
    return PreparedData(name, x, ds.labels, splits, ds.k, ds.feature_names, drift_kind, feature_mode, plan_dict, stats)


def _train_key(data: PreparedData, constrained: bool) -> str:
    tr = slice(data.splits.train.start, data.splits.train.stop)
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.features[tr]).tobytes())
    h.update(np.ascontiguousarray(data.labels[tr]).tobytes())
    return f"{h.hexdigest()}-{constrained}"


def model_diagnostics(model: Model, data: PreparedData) -> dict:
    """Accuracies, drift label and validation-set GV for one trained model."""
    sp = data.splits
    fit, val = sp.fit, sp.validation
    x, y = data.features, data.labels
    acc_train = evaluate_accuracy(model.params, x[fit.start : fit.stop], y[fit.start : fit.stop])
    acc_valid = evaluate_accuracy(model.params, x[val.start : val.stop], y[val.start : val.stop])
    tx, ty = data.test_slice()
    acc_test = evaluate_accuracy(model.params, tx[sp.drift_onset :], ty[sp.drift_onset :])
    label = classify_drift_type(acc_train, acc_valid, acc_test)
    per_class, mean_gv = generalized_variance(
        model.embed(x[val.start : val.stop]), y[val.start : val.stop], data.k
    )
    return {
        "label": label.to_dict(),
        "gv_mean": mean_gv,
        "gv_per_class": per_class.tolist(),
    }


def _setting_name(detector: str, constrained: bool, drift_kind: str, feature_mode: str) -> str:
    return f"{detector}-{'c' if constrained else 'u'}-{drift_kind}-{feature_mode}"


def _run_record(cfg, det_cfg, seed, detector, constrained, data, model, diag) -> dict:
    ref_x, stream_x, onset = data.reference_and_stream()
    result: RunResult = run_stream(detector, ref_x, stream_x, onset, det_cfg, model if needs_model(detector) else None)
    real = diag["label"]["kind"] == "real" and data.drift_kind != "none"
    score = score_run(result.report_index, onset, result.raw_flags, result.warmup, real,
                      det_cfg.max_delay, cfg.gamma)
    return {
        "status": "ok",
        "dataset": data.name,
        "detector": detector,
        "constrained": constrained,
        "drift_kind": data.drift_kind,
        "feature_mode": data.feature_mode,
        "seed": seed,
        "w": det_cfg.w,
        "r": det_cfg.r,
        "real": real,
        **diag,
        "plan": data.plan,
        "score": score.to_dict(),
        "run": result.to_dict(),
    }


def _failure_record(seed, detector, constrained, drift_kind, feature_mode, det_cfg, exc) -> dict:
    return {
        "status": "failed",
        "detector": detector,
        "constrained": constrained,
        "drift_kind": drift_kind,
        "feature_mode": feature_mode,
        "seed": seed,
        "w": det_cfg.w,
        "r": det_cfg.r,
        "error": f"{type(exc).__name__}: {exc}",
        "traceback": traceback.format_exception_only(type(exc), exc)[-1].strip(),
    }


def run_seed(cfg: ExperimentConfig, seed: int, det_cfgs: Sequence[DetectorConfig],
             cache: Optional[dict] = None) -> list[dict]:
    """All runs of one seed, for every detector config in ``det_cfgs``.

    A training or detection failure produces failure records for the
    affected runs only.
    """
    cache = {} if cache is None else cache
    records = []
    for drift_kind, feature_mode in cfg.settings():
        try:
            data = prepare_data(cfg, seed, drift_kind, feature_mode)
        except Exception as exc:  # noqa: BLE001  isolate data failures per setting
            for det_cfg in det_cfgs:
                for c in _constrained_values(cfg.constrained):
                    for d in cfg.detectors:
                        records.append(_failure_record(seed, d, c, drift_kind, feature_mode, det_cfg, exc))
            continue
        for constrained in _constrained_values(cfg.constrained):
            key = _train_key(data, constrained)
            try:
                if key not in cache:
                    log.info("training seed=%s constrained=%s", seed, constrained)
                    model, _ = fit_model(data.train_dataset, data.splits, cfg.train_config(seed), constrained,
                                         norm=data.norm, data_seed=seed)
                    cache[key] = model
                model = cache[key]
                diag = model_diagnostics(model, data)
            except Exception as exc:  # noqa: BLE001
                for det_cfg in det_cfgs:
                    for d in cfg.detectors:
                        records.append(_failure_record(seed, d, constrained, drift_kind, feature_mode, det_cfg, exc))
                continue
            for det_cfg in det_cfgs:
                for detector in cfg.detectors:
                    try:
                        records.append(_run_record(cfg, det_cfg, seed, detector, constrained, data, model, diag))
                    except Exception as exc:  # noqa: BLE001
                        records.append(_failure_record(seed, detector, constrained, drift_kind, feature_mode,
                                                       det_cfg, exc))
    return records


def _run_all(cfg: ExperimentConfig, det_cfgs: Sequence[DetectorConfig]) -> list[dict]:
    if cfg.workers == 1 or len(cfg.seeds) == 1:
        cache: dict = {}
        out = []
        for seed in cfg.seeds:
            out.extend(run_seed(cfg, seed, det_cfgs, cache))
            cache.clear()  # models are per seed
        return out
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        parts = pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds, [det_cfgs] * len(cfg.seeds))
        return [rec for part in parts for rec in part]


# ------------------------------------------------------------------ persistence


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def summarise(records: Sequence[dict]) -> list[dict]:
    """One aggregate row per (dataset, detector, constrained, drift setting)."""
    groups: dict = {}
    for rec in records:
        key = (rec.get("dataset", ""), rec["detector"], rec["constrained"], rec["drift_kind"], rec["feature_mode"])
        groups.setdefault(key, []).append(rec)
    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        recs = groups[key]
        ok = [r for r in recs if r["status"] == "ok"]
        dataset = key[0] or next((r.get("dataset") for r in ok), "")
        row = dict(zip(SUMMARY_COLUMNS[:5], (dataset, *key[1:])))
        if ok:
            agg = aggregate([ScoreRecord(**r["score"]) for r in ok])
            for m in ("da", "tnr", "delay", "h"):
                row[f"{m}_mean"], row[f"{m}_std"] = agg[m]
            row["label_real_frac"] = float(np.mean([r["real"] for r in ok]))
        else:
            for m in ("da", "tnr", "delay", "h"):
                row[f"{m}_mean"] = row[f"{m}_std"] = float("nan")
            row["label_real_frac"] = float("nan")
        row["n_ok"] = len(ok)
        row["n_failed"] = len(recs) - len(ok)
        rows.append(row)
    return rows


def write_summary(rows: Sequence[dict], path: str | os.PathLike) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _write_json(obj, path: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


@dataclass
class RunManifest:
    config_hash: str
    root: str
    files: list
    summary: str
    started: str
    finished: str
    version: str = __version__
    n_ok: int = 0
    n_failed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def persist(cfg: ExperimentConfig, records: Sequence[dict], root: str, started: str) -> RunManifest:
    files = []
    for rec in records:
        setting = _setting_name(rec["detector"], rec["constrained"], rec["drift_kind"], rec["feature_mode"])
        rel = os.path.join(setting, f"{rec['seed']}.json")
        _write_json(rec, os.path.join(root, rel))
        files.append(rel)
    summary_path = os.path.join(root, "summary.csv")
    write_summary(summarise(records), summary_path)
    with open(os.path.join(root, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json() + "\n")
    n_ok = sum(r["status"] == "ok" for r in records)
    manifest = RunManifest(cfg.config_hash(), root, sorted(files), "summary.csv", started, _now(),
                           n_ok=n_ok, n_failed=len(records) - n_ok)
    _write_json(manifest.to_dict(), os.path.join(root, "manifest.json"))
    return manifest


def run_benchmark(cfg: ExperimentConfig) -> RunManifest:
    """Run every (seed, detector, constrained, drift setting) and persist results
    under ``<output>/runs/<config hash>/``."""
    started = _now()
    records = _run_all(cfg, [cfg.detector_config()])
    root = os.path.join(cfg.output, "runs", cfg.config_hash())
    return persist(cfg, records, root, started)


# ---------------------------------------------------------------------- ablation

ABLATION_W = (10, 25, 50, 100)
ABLATION_R = (0.0, 0.1, 0.25, 0.5)


def ablation_grid(cfg: ExperimentConfig, w_values: Sequence[int] = ABLATION_W,
                  r_values: Sequence[float] = ABLATION_R, out_dir: Optional[str] = None) -> dict:
    """Average H rank of each (w, r) cell across dataset x algorithm combinations.

    Within each combination the cells are ranked by mean H with the best cell
    receiving the highest rank. ``d_max`` and all other settings stay fixed.
    Writes ``ablation.csv`` (one row per cell) and ``ablation_surface.csv``
    (w rows by r columns).
    """
    cells = [(int(w), float(r)) for w in w_values for r in r_values]
    det_cfgs = [cfg.detector_config(w=w, r=r) for w, r in cells]
    records = _run_all(cfg, det_cfgs)
    by_cell: dict = {c: [] for c in cells}
    for rec in records:
        by_cell[(int(rec["w"]), float(rec["r"]))].append(rec)
    combos = None
    h_table = {}
    for cell, recs in by_cell.items():
        summary = {
            (row["dataset"], row["detector"], row["constrained"], row["drift_kind"], row["feature_mode"]): row["h_mean"]
            for row in summarise(recs)
        }
        h_table[cell] = summary
        keys = set(summary)
        combos = keys if combos is None else combos & keys
    combos = sorted(combos or [], key=lambda k: tuple(str(x) for x in k))
    if combos:
        mat = np.array([[h_table[c][combo] for c in cells] for combo in combos])
        mat = np.nan_to_num(mat, nan=0.0)
        # rank 1 = best elsewhere; here higher rank = better so flip
        avg = (len(cells) + 1) - average_ranks(mat)
    else:
        avg = np.full(len(cells), float("nan"))
    out_dir = out_dir or os.path.join(cfg.output, "ablation", cfg.config_hash())
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for (w, r), rank in zip(cells, avg):
        h_vals = [h_table[(w, r)][c] for c in combos]
        rows.append({"w": w, "r": r, "avg_rank": float(rank),
                     "h_mean": float(np.nanmean(h_vals)) if h_vals else float("nan")})
    with open(os.path.join(out_dir, "ablation.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["w", "r", "avg_rank", "h_mean"])
        for row in rows:
            writer.writerow([row["w"], _fmt(row["r"]), _fmt(row["avg_rank"]), _fmt(row["h_mean"])])
    ws = sorted({w for w, _ in cells})
    rs = sorted({r for _, r in cells})
    lookup = {(row["w"], row["r"]): row["avg_rank"] for row in rows}
    with open(os.path.join(out_dir, "ablation_surface.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["w\\r", *[_fmt(r) for r in rs]])
        for w in ws:
            writer.writerow([w, *[_fmt(lookup.get((w, r), float("nan"))) for r in rs]])
    return {"cells": rows, "combinations": len(combos), "out_dir": out_dir, "records": len(records)}


# ------------------------------------------------------------------------ report


def load_records(results_dir: str | os.PathLike) -> list[dict]:
    out = []
    for dirpath, _dirs, files in sorted(os.walk(results_dir)):
        for name in sorted(files):
            if not name.endswith(".json") or name in ("manifest.json", "config.json"):
                continue
            with open(os.path.join(dirpath, name), encoding="utf-8") as fh:
                try:
                    rec = json.load(fh)
                except json.JSONDecodeError:
                    continue
            if isinstance(rec, dict) and rec.get("status") == "ok" and "score" in rec:
                out.append(rec)
    return out


def report(results_dir: str | os.PathLike, grouping: str = "all", out_dir: Optional[str] = None) -> dict:
    """Rank table, Friedman test and CD diagram over H means.

    Algorithms are (detector, constrained) pairs; rows are (dataset, drift
    setting) combinations covered by every algorithm.
    """
    if grouping not in GROUPINGS:
        raise ConfigError(f"grouping must be one of {GROUPINGS}")
    records = load_records(results_dir)
    if not records:
        raise ConfigError(f"no run records found under {results_dir} (expected <setting>/<seed>.json files)")
    if grouping == "real":
        records = [r for r in records if r["real"]]
    elif grouping == "virtual":
        records = [r for r in records if not r["real"]]
    cells: dict = {}
    for rec in records:
        algo = f"{rec['detector']}{'+' if rec['constrained'] else '-'}"
        row = (rec["dataset"], rec["drift_kind"], rec["feature_mode"])
        cells.setdefault((row, algo), []).append(rec["score"]["h"])
    algos = sorted({a for _, a in cells})
    rows = sorted({r for r, _ in cells})
    rows = [r for r in rows if all((r, a) in cells for a in algos)]
    if len(algos) < 2 or len(rows) < 2:
        raise ConfigError(
            f"report needs >= 2 algorithms and >= 2 complete settings; got {len(algos)} and {len(rows)}"
        )
    table = np.array([[float(np.mean(cells[(r, a)])) for a in algos] for r in rows])
    chi2, reject = friedman_test(table)
    ranks = average_ranks(table)
    cd = nemenyi_cd(len(algos), len(rows))
    out_dir = out_dir or os.fspath(results_dir)
    os.makedirs(out_dir, exist_ok=True)
    table_path = os.path.join(out_dir, f"rank_table_{grouping}.csv")
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset", "drift_kind", "feature_mode", *algos])
        for r, vals in zip(rows, table):
            writer.writerow([*r, *[_fmt(float(v)) for v in vals]])
        writer.writerow(["average_rank", "", "", *[_fmt(float(v)) for v in ranks]])
    svg_path = os.path.join(out_dir, f"cd_{grouping}.svg")
    emit_cd_diagram(ranks, algos, cd, svg_path, title=f"H-score ranks ({grouping})")
    d_max = int(records[0]["score"].get("d_max", 300))
    write_penalty_curve(os.path.join(out_dir, "penalty_curve.csv"), d_max)
    return {
        "algorithms": algos,
        "rows": len(rows),
        "chi2": chi2,
        "reject": bool(reject),
        "cd": cd,
        "average_ranks": ranks.tolist(),
        "table": table_path,
        "svg": svg_path,
    }

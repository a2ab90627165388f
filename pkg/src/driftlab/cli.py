"""Command-line interface.

Exit codes: 0 on success, 1 for configuration or input errors, 2 for
failures while running.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from typing import Optional, Sequence

from .data import (
    DataError,
    SyntheticSpec,
    generate_moving_rbf,
    generate_rbf,
    sidecar_path,
    write_csv,
    write_drift_meta,
)
from .detectors import KINDS, DetectorError, needs_model, run_stream
from .drift import DriftError, write_drifted_csv
from .embedding_stats import distances
from .evaluation import EvaluationError, score_run
from .harness import (
    ABLATION_R,
    ABLATION_W,
    GROUPINGS,
    ConfigError,
    ExperimentConfig,
    ablation_grid,
    model_diagnostics,
    prepare_data,
    report,
    run_benchmark,
)
from .neural import fit_model, load_model, save_model

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
CONFIG_ERRORS = (ConfigError, DataError, DetectorError, DriftError, EvaluationError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _drift_setting(text: str) -> list:
    kind, _, mode = text.partition(":")
    return [kind, mode or "most"]


def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment JSON; flags given explicitly override it")
    p.add_argument("--dataset", help="'rbf', 'moving_rbf' or a CSV path")
    p.add_argument("--detectors", nargs="+", choices=KINDS)
    p.add_argument("--constrained", choices=("true", "false", "both"))
    p.add_argument("--drift", nargs="+", type=_drift_setting, metavar="KIND[:MODE]",
                   help="e.g. step:most gradual:least none")
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--w", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--d-max", dest="d_max", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--alpha-zsd", dest="alpha_zsd", type=float)
    p.add_argument("--alpha-iks", dest="alpha_iks", type=float)
    p.add_argument("--zsd-reference", dest="zsd_reference", choices=("cumulative", "ema"))
    p.add_argument("--label-column", dest="label_column")
    p.add_argument("--epochs", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", dest="output")


_EXPERIMENT_KEYS = ("dataset", "detectors", "constrained", "drift", "seeds", "w", "r", "gamma", "d_max",
                    "lam", "alpha_zsd", "alpha_iks", "zsd_reference", "label_column", "workers", "output")


def _experiment_config(args) -> ExperimentConfig:
    base = {}
    if args.config:
        base = ExperimentConfig.load(args.config).to_dict()
    for key in _EXPERIMENT_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    if getattr(args, "epochs", None) is not None:
        base.setdefault("train", {})
        base["train"] = {**base["train"], "epochs": args.epochs}
    if "dataset" not in base:
        raise ConfigError("a dataset is required (--dataset or --config)")
    return ExperimentConfig.from_dict(base)


def _single_config(args, detectors=("zsd",)) -> ExperimentConfig:
    d = {"dataset": args.dataset, "detectors": list(detectors), "seeds": [args.seed]}
    if getattr(args, "epochs", None) is not None:
        d["train"] = {"epochs": args.epochs}
    for key in ("w", "r"):
        if getattr(args, key, None) is not None:
            d[key] = getattr(args, key)
    return ExperimentConfig.from_dict(d)


def cmd_gen(args) -> int:
    if args.preset == "rbf":
        ds = generate_rbf(SyntheticSpec.rbf(args.seed))
        write_csv(ds, args.out)
    else:
        ds, meta = generate_moving_rbf(SyntheticSpec.moving_rbf(args.drift, args.seed))
        write_csv(ds, args.out)
        write_drift_meta(meta, sidecar_path(args.out))
    print(json.dumps({"rows": ds.n, "features": ds.q, "classes": ds.k, "out": args.out}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _single_config(args)
    data = prepare_data(cfg, args.seed, "none", "na")
    model, history = fit_model(data.train_dataset, data.splits, cfg.train_config(args.seed),
                               args.constrained, norm=data.norm, data_seed=args.seed)
    save_model(model, args.out)
    diag = model_diagnostics(model, data)
    print(json.dumps({
        "out": args.out,
        "constrained": args.constrained,
        "acc_train": diag["label"]["acc_train"],
        "acc_valid": diag["label"]["acc_valid"],
        "gv_mean": diag["gv_mean"],
        "final_loss_c": history.loss_c[-1],
        "final_loss_ce": history.loss_ce[-1],
    }))
    return EXIT_OK


def _model_for(args, cfg, data):
    if args.model:
        return load_model(args.model)
    model, _ = fit_model(data.train_dataset, data.splits, cfg.train_config(args.seed),
                         args.constrained, norm=data.norm, data_seed=args.seed)
    return model


def cmd_detect(args) -> int:
    cfg = _single_config(args, [args.detector])
    kind, mode = _drift_setting(args.drift)
    mode = "na" if (cfg.dataset == "moving_rbf" or kind == "none") else mode
    data = prepare_data(cfg, args.seed, kind, mode)
    model = _model_for(args, cfg, data) if (needs_model(args.detector) or args.model) else None
    det_cfg = cfg.detector_config()
    ref_x, stream_x, onset = data.reference_and_stream()
    if args.stream_out:
        x, y = data.test_slice()
        write_drifted_csv(args.stream_out, x, y, data.feature_names,
                          None if kind == "none" else data.splits.drift_onset)
    result = run_stream(args.detector, ref_x, stream_x, onset, det_cfg, model)
    out = {"run": result.to_dict()}
    if model is not None:
        diag = model_diagnostics(model, data)
        real = diag["label"]["kind"] == "real" and kind != "none"
        out["label"] = diag["label"]
        out["score"] = score_run(result.report_index, onset, result.raw_flags, result.warmup, real,
                                 det_cfg.max_delay, cfg.gamma).to_dict()
    if not args.flags:
        out["run"].pop("raw_flags")
        out["run"].pop("warmup")
    print(json.dumps(out, indent=1))
    return EXIT_OK


def cmd_dump_embeddings(args) -> int:
    cfg = _single_config(args)
    kind, mode = _drift_setting(args.drift)
    mode = "na" if (cfg.dataset == "moving_rbf" or kind == "none") else mode
    data = prepare_data(cfg, args.seed, kind, mode)
    model = _model_for(args, cfg, data)
    x, y = data.test_slice()
    emb = model.embed(x)
    m = distances(emb, model.centroids).min(axis=1)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_index", "e1", "e2", "e3", "label", "min_distance"])
        for i in range(len(y)):
            writer.writerow([i, *(repr(float(v)) for v in emb[i]), int(y[i]), repr(float(m[i]))])
    print(json.dumps({"rows": int(len(y)), "out": args.out}))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _experiment_config(args)
    manifest = run_benchmark(cfg)
    print(json.dumps({"root": manifest.root, "n_ok": manifest.n_ok, "n_failed": manifest.n_failed,
                      "summary": manifest.summary}))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _experiment_config(args)
    res = ablation_grid(cfg, args.w_values, args.r_values)
    print(json.dumps({"out_dir": res["out_dir"], "cells": res["cells"]}, indent=1))
    return EXIT_OK


def cmd_report(args) -> int:
    groupings = GROUPINGS if args.grouping == "each" else (args.grouping,)
    out = {}
    for g in groupings:
        try:
            out[g] = report(args.results, g, args.out)
        except ConfigError as exc:
            if len(groupings) == 1:
                raise
            out[g] = {"skipped": str(exc)}
    print(json.dumps(out, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="driftlab", description="Drift detection on a constrained embedding")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic dataset to CSV")
    g.add_argument("--preset", choices=("rbf", "moving_rbf"), required=True)
    g.add_argument("--drift", choices=("step", "gradual", "none"), default="step")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def single(sp, model_flag=True):
        sp.add_argument("--dataset", required=True)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--epochs", type=int)
        cons = sp.add_mutually_exclusive_group()
        cons.add_argument("--constrained", dest="constrained", action="store_true", default=True)
        cons.add_argument("--unconstrained", dest="constrained", action="store_false")
        if model_flag:
            sp.add_argument("--model", help="model JSON from 'train'; trained on the fly when omitted")

    t = sub.add_parser("train", help="train a model and save it as JSON")
    single(t, model_flag=False)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="run one detector over one stream")
    single(d)
    d.add_argument("--detector", choices=KINDS, default="zsd")
    d.add_argument("--drift", default="step:most", metavar="KIND[:MODE]")
    d.add_argument("--w", type=int, help="report window (default 50)")
    d.add_argument("--r", type=float, help="report threshold ratio (default 0.25)")
    d.add_argument("--flags", action="store_true", help="include raw flag strings")
    d.add_argument("--stream-out", dest="stream_out", help="write the drifted test stream to this CSV")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("dump-embeddings", help="write test-stream embeddings to CSV")
    single(e)
    e.add_argument("--drift", default="step:most", metavar="KIND[:MODE]")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_dump_embeddings)

    b = sub.add_parser("bench", help="run a benchmark")
    _add_experiment_args(b)
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("ablate", help="(w, r) ablation grid")
    _add_experiment_args(a)
    a.add_argument("--w-values", dest="w_values", nargs="+", type=int, default=list(ABLATION_W))
    a.add_argument("--r-values", dest="r_values", nargs="+", type=float, default=list(ABLATION_R))
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="rank table, Friedman test and CD diagram")
    r.add_argument("--results", required=True, help="directory holding run JSON files")
    r.add_argument("--grouping", choices=(*GROUPINGS, "each"), default="all")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"driftlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"driftlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"driftlab: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

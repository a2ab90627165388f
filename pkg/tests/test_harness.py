import csv
import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftlab import harness
from driftlab.harness import (
    ConfigError,
    ExperimentConfig,
    ablation_grid,
    prepare_data,
    report,
    run_benchmark,
)


@pytest.fixture(scope="module")
def blobs_csv(tmp_path_factory):
    rng = np.random.default_rng(0)
    n, q = 400, 6
    y = rng.integers(0, 3, n)
    centres = rng.uniform(-3, 3, size=(3, q))
    x = centres[y] + rng.normal(size=(n, q))
    path = tmp_path_factory.mktemp("data") / "blobs.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(q)] + ["label"])
        for row, lab in zip(x, y):
            w.writerow([*row, f"c{lab}"])
    return str(path)


def _cfg(path, out, **kw):
    base = dict(dataset=path, detectors=["zsd", "iks", "hdddm_i"], constrained="both",
                drift=[["step", "most"], ["gradual", "least"]], seeds=[0, 1], w=5,
                train={"epochs": 3}, output=str(out))
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_roundtrip():
    cfg = ExperimentConfig("rbf", detectors=["zsd", "emad"], drift=[["gradual", "least"]], seeds=[3, 4],
                           train={"epochs": 5})
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg and back.config_hash() == cfg.config_hash()


@given(st.lists(st.sampled_from(["zsd", "emad", "iks", "hdddm_e", "hdddm_i"]), min_size=1, max_size=5, unique=True),
       st.sampled_from(["true", "false", "both"]), st.integers(1, 100), st.floats(0.01, 1.0))
@settings(max_examples=30)
def test_config_roundtrip_property(dets, cons, w, r):
    cfg = ExperimentConfig("moving_rbf", detectors=dets, constrained=cons, w=w, r=r)
    assert ExperimentConfig.from_dict(json.loads(cfg.to_json())) == cfg


@pytest.mark.parametrize("d, match", [
    ({"dataset": "rbf", "detector": ["zsd"]}, "unknown config keys"),
    ({"dataset": "rbf", "detectors": []}, "empty"),
    ({"dataset": "rbf", "detectors": ["adwin"]}, "unknown detector"),
    ({"dataset": "rbf", "seeds": []}, "seeds"),
    ({"dataset": "rbf", "drift": [["sideways", "most"]]}, "drift"),
    ({"dataset": "data.parquet"}, "dataset"),
    ({"dataset": "rbf", "w": 0}, "w must"),
    ({"dataset": "rbf", "train": {"lr": 0.1}}, "unknown train keys"),
    ({"detectors": ["zsd"]}, "dataset"),
])
def test_config_errors(d, match):
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_dict(d)


def test_config_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        ExperimentConfig.load(bad)


def test_settings_mode_handling():
    assert ExperimentConfig("moving_rbf", drift=[["step", "most"], ["step", "least"]]).settings() == [("step", "na")]
    assert ExperimentConfig("rbf", drift=[["none", "most"]]).settings() == [("none", "na")]
    with pytest.raises(ConfigError):
        ExperimentConfig("rbf", drift=[["step", "na"]]).settings()


def test_prepare_data_layout(blobs_csv):
    cfg = _cfg(blobs_csv, "/unused")
    data = prepare_data(cfg, 0, "step", "most")
    ref, stream, onset = data.reference_and_stream()
    assert (len(ref), len(stream), onset) == (50, 150, 50)
    tr = data.features[: data.splits.train.stop]
    np.testing.assert_allclose(tr.mean(axis=0), 0.0, atol=1e-12)
    plain = prepare_data(cfg, 0, "none", "na")
    np.testing.assert_array_equal(plain.features[:300], data.features[:300])
    assert plain.plan is None and len(data.plan["feature_indices"]) == 2


def test_benchmark_end_to_end(blobs_csv, tmp_path):
    cfg = _cfg(blobs_csv, tmp_path)
    m = run_benchmark(cfg)
    assert m.n_ok == 2 * 3 * 2 * 2 and m.n_failed == 0
    for rel in m.files:
        assert os.path.exists(os.path.join(m.root, rel))
    rows = list(csv.DictReader(open(os.path.join(m.root, "summary.csv"))))
    assert len(rows) == 3 * 2 * 2
    assert list(rows[0])[:13] == list(harness.SUMMARY_COLUMNS[:13])
    rec = json.load(open(os.path.join(m.root, m.files[0])))
    assert rec["label"]["kind"] in ("real", "virtual")
    assert json.load(open(os.path.join(m.root, "manifest.json")))["config_hash"] == cfg.config_hash()

    # rerun into a fresh directory gives byte-identical aggregates
    m2 = run_benchmark(_cfg(blobs_csv, tmp_path / "again"))
    assert open(os.path.join(m.root, "summary.csv")).read() == open(os.path.join(m2.root, "summary.csv")).read()
    for rel in m.files:
        assert json.load(open(os.path.join(m.root, rel))) == json.load(open(os.path.join(m2.root, rel)))

    out = report(m.root, "all", str(tmp_path / "rep"))
    assert len(out["algorithms"]) == 6 and out["rows"] == 2
    ET.parse(out["svg"])
    assert os.path.exists(tmp_path / "rep" / "penalty_curve.csv")
    ranks = np.array(out["average_ranks"])
    assert ranks.sum() == pytest.approx(6 * 7 / 2)


def test_crash_isolation(blobs_csv, tmp_path, monkeypatch):
    real_run = harness.run_stream

    def flaky(kind, *a, **kw):
        if kind == "iks":
            raise FloatingPointError("boom")
        return real_run(kind, *a, **kw)

    monkeypatch.setattr(harness, "run_stream", flaky)
    m = run_benchmark(_cfg(blobs_csv, tmp_path, seeds=[0], constrained="true", drift=[["step", "most"]]))
    assert (m.n_ok, m.n_failed) == (2, 1)
    rows = {r["detector"]: r for r in csv.DictReader(open(os.path.join(m.root, "summary.csv")))}
    assert rows["iks"]["n_failed"] == "1" and rows["iks"]["h_mean"] == ""
    assert rows["zsd"]["n_ok"] == "1"
    failed = json.load(open(os.path.join(m.root, "iks-c-step-most", "0.json")))
    assert failed["status"] == "failed" and "boom" in failed["error"]


def test_training_failure_isolated(blobs_csv, tmp_path, monkeypatch):
    real_fit = harness.fit_model

    def fit(ds, splits, cfg, constrained, **kw):
        if not constrained:
            raise ArithmeticError("diverged")
        return real_fit(ds, splits, cfg, constrained, **kw)

    monkeypatch.setattr(harness, "fit_model", fit)
    m = run_benchmark(_cfg(blobs_csv, tmp_path, seeds=[0], detectors=["zsd"], drift=[["step", "most"]]))
    assert (m.n_ok, m.n_failed) == (1, 1)


def test_report_errors(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        report(tmp_path)
    with pytest.raises(ConfigError, match="grouping"):
        report(tmp_path, "some")


def test_ablation_grid(blobs_csv, tmp_path):
    cfg = _cfg(blobs_csv, tmp_path, seeds=[0], constrained="true", detectors=["zsd", "hdddm_i"])
    res = ablation_grid(cfg, w_values=[4, 5], r_values=[0.0, 0.25])
    assert len(res["cells"]) == 4 and res["combinations"] == 4
    ranks = [c["avg_rank"] for c in res["cells"]]
    assert sum(ranks) == pytest.approx(4 * 5 / 2)
    surface = list(csv.reader(open(os.path.join(res["out_dir"], "ablation_surface.csv"))))
    assert surface[0] == ["w\\r", "0.0", "0.25"] and len(surface) == 3
    single = ablation_grid(cfg, w_values=[5], r_values=[0.25], out_dir=str(tmp_path / "one"))
    assert len(single["cells"]) == 1

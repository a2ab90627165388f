import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st

from driftlab.evaluation import (
    EvaluationError,
    ScoreRecord,
    aggregate,
    average_ranks,
    cd_groups,
    classify_drift_type,
    compute_tnr,
    detection_accuracy,
    emit_cd_diagram,
    friedman_test,
    h_score,
    nemenyi_cd,
    penalized_da,
    penalty_curve,
    rank_rows,
    score_run,
)

unit = st.floats(0, 1)


def test_classify_examples():
    lab = classify_drift_type(0.888, 0.860, 0.774)
    assert lab.ge == pytest.approx(0.028) and lab.threshold == pytest.approx(0.832)
    assert lab.real
    assert classify_drift_type(0.888, 0.860, 0.849).kind == "virtual"
    assert classify_drift_type(0.9, 0.9, 0.9).kind == "virtual"
    with pytest.raises(EvaluationError):
        classify_drift_type(1.2, 0.9, 0.9)


def test_penalized_examples():
    assert penalized_da(1, 0) == 1
    assert penalized_da(1, 150, 300, 2.0) == pytest.approx(0.75, abs=1e-12)
    assert penalized_da(1, 600) == 0.0
    assert penalized_da(1, None) == 0.0
    assert penalized_da(0, None, real=False) == 0.0
    assert penalized_da(1, None, real=False) == 1.0


@given(st.integers(0, 1000), st.integers(0, 1000), st.floats(0.1, 5))
def test_penalized_monotone(d1, d2, g):
    lo, hi = sorted((d1, d2))
    assert penalized_da(1, hi, 300, g) <= penalized_da(1, lo, 300, g)


def test_detection_accuracy_rules():
    assert detection_accuracy(10, 5, True) == 1
    assert detection_accuracy(3, 5, True) == 0
    assert detection_accuracy(None, 5, True) == 0
    assert detection_accuracy(None, 5, False) == 1
    assert detection_accuracy(9, 5, False) == 0


def test_tnr_examples():
    assert compute_tnr(np.zeros(20), None, 10) == 1.0
    flags = np.zeros(150, dtype=int)
    flags[:10] = 1
    assert compute_tnr(flags, None, 100) == pytest.approx(0.9)
    warm = np.zeros(150, bool)
    warm[:5] = True
    assert compute_tnr(flags, warm, 100) == pytest.approx(1 - 5 / 95)
    # stopped at index 39: only 40 samples count
    assert compute_tnr(flags[:40], None, 100) == pytest.approx(0.75)
    with pytest.raises(EvaluationError):
        compute_tnr(np.zeros(5), np.ones(5, bool), 5)


def test_h_examples():
    assert h_score(1, 1) == 1
    assert h_score(0, 0.7) == 0 and h_score(0, 0) == 0
    assert h_score(0.75, 1) == pytest.approx(6 / 7, abs=1e-12)


@given(unit, unit)
def test_h_properties(a, b):
    h = h_score(a, b)
    assert h == pytest.approx(h_score(b, a), abs=1e-15)
    assert h <= math.sqrt(a * b) + 1e-12
    assert 0 <= h <= 1 + 1e-12


def test_score_run():
    flags = np.zeros(120, dtype=np.uint8)
    s = score_run(115, 100, flags, None, True, 300, 2.0)
    assert (s.da, s.delay) == (1, 15)
    assert s.da_hat == pytest.approx(1 - (15 / 300) ** 2)
    v = score_run(None, 100, flags, None, False)
    assert (v.da, v.delay, v.h) == (1, None, 1.0)


def test_aggregate_examples():
    recs = [ScoreRecord(1, 1.0, 1.0, 0.8, 10), ScoreRecord(1, 1.0, 1.0, 1.0, None), ScoreRecord(1, 1.0, 1.0, 0.9, 20)]
    agg = aggregate(recs[:1] * 10)
    assert agg["h"][1] == 0.0
    agg = aggregate([recs[0], recs[1]])
    assert agg["h"] == pytest.approx((0.9, 0.1))
    assert aggregate(recs)["delay"] == (15.0, 5.0)
    assert all(math.isnan(v) for v in aggregate([recs[1]])["delay"])
    with pytest.raises(EvaluationError):
        aggregate([])


def test_friedman_examples():
    table = np.tile([0.9, 0.5, 0.1], (10, 1))
    chi2, reject = friedman_test(table)
    assert chi2 == pytest.approx(20.0, abs=1e-12) and reject
    chi2, reject = friedman_test(np.full((5, 4), 0.3))
    assert chi2 == pytest.approx(0.0, abs=1e-12) and not reject
    with pytest.raises(EvaluationError):
        friedman_test(np.ones((1, 3)))


@given(st.lists(st.lists(unit, min_size=4, max_size=4), min_size=2, max_size=6))
def test_rank_properties(rows):
    table = np.asarray(rows)
    ranks = rank_rows(table)
    np.testing.assert_allclose(ranks.sum(axis=1), 4 * 5 / 2)
    # six-decimal values keep their order and ties after the shift
    shifted = rank_rows(np.round(table, 6) + 2.0)
    np.testing.assert_array_equal(shifted, rank_rows(np.round(table, 6)))
    assert average_ranks(table).shape == (4,)


def test_nemenyi_examples():
    assert nemenyi_cd(2, 10) == pytest.approx(0.620, abs=1e-3)
    assert nemenyi_cd(5, 40) == pytest.approx(nemenyi_cd(5, 10) / 2)
    with pytest.raises(EvaluationError, match="q table exhausted"):
        nemenyi_cd(11, 10)


def test_cd_groups_examples():
    assert cd_groups([1.0, 1.1], 0.5) == [(0, 1)]
    assert cd_groups([1.0, 2.0, 3.0], 0.5) == []
    assert cd_groups([1.0, 1.3, 1.6, 3.0], 0.5) == [(0, 1), (1, 2)]


def test_cd_svg(tmp_path):
    path = tmp_path / "cd.svg"
    svg = emit_cd_diagram([1.2, 1.3, 2.9], ["a", "b<c", "d"], 0.5, path, title="t")
    root = ET.fromstring(path.read_text())
    assert root.tag.endswith("svg") and svg.startswith("<svg")
    bars = [e for e in root.iter() if e.get("class") == "cd-group"]
    assert len(bars) == 1
    with pytest.raises(EvaluationError):
        emit_cd_diagram([1.0, float("nan")], ["a", "b"], 0.5)
    with pytest.raises(OSError):
        emit_cd_diagram([1.0, 2.0], ["a", "b"], 0.5, tmp_path / "missing" / "x.svg")


def test_penalty_curve():
    rows = penalty_curve(300, (2.0,), 150)
    assert [r["delay"] for r in rows] == [0, 150, 300]
    assert [r["gamma_2"] for r in rows] == pytest.approx([1.0, 0.75, 0.0])

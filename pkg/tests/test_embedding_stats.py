import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from driftlab.embedding_stats import (
    ReferenceStatistics,
    StatsError,
    distances,
    feature_min,
    feature_summary,
    generalized_variance,
    gv_reduction,
    reference_from_features,
)

finite = st.floats(-100, 100, allow_nan=False)


def test_distances_examples():
    C = np.array([[0.0, 0, 0], [1.0, 1, 1]])
    assert distances(C[0], C)[0] == 0.0
    assert distances(np.array([3.0, 4, 0]), C)[0] == 5.0
    sym = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    np.testing.assert_array_equal(distances(np.zeros(3), sym), [1.0, 1.0])


def test_distances_batch_matches_single():
    rng = np.random.default_rng(0)
    e, C = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
    batch = distances(e, C)
    for i in range(6):
        np.testing.assert_allclose(batch[i], np.linalg.norm(e[i] - C, axis=1), rtol=1e-14)


def test_distances_rejects_nonfinite():
    with pytest.raises(StatsError):
        distances(np.array([np.nan, 0, 0]), np.zeros((1, 3)))


def test_feature_examples():
    assert feature_min(np.array([2.0, 5.0]))[0] == 2
    assert feature_min(np.array([0.0, 0.0]))[0] == 0
    assert feature_min(np.array([7.0]))[0] == 7
    np.testing.assert_array_equal(feature_summary(np.array([1.0, 3.0])), [2, 1, 3, 1])
    np.testing.assert_array_equal(feature_summary(np.full(3, 0.7)), [0.7, 0, 0.7, 0.7])
    np.testing.assert_array_equal(feature_summary(np.array([5.0])), [5, 0, 5, 5])
    with pytest.raises(StatsError):
        feature_min(np.array([]))
    with pytest.raises(StatsError):
        feature_summary(np.array([]))


@given(arrays(float, st.integers(1, 8), elements=st.floats(0, 1e6)))
def test_summary_ordering(d):
    mean, std, hi, lo = feature_summary(d)
    assert lo <= mean <= hi and std >= 0


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite),
       arrays(float, (4, 3), elements=finite))
def test_min_distance_lipschitz(e1, e2, C):
    a = distances(e1, C).min()
    b = distances(e2, C).min()
    assert abs(a - b) <= np.linalg.norm(e1 - e2) + 1e-9


def test_reference_examples():
    r = reference_from_features(np.ones(3))
    assert r.mean[0] == 1 and r.std[0] == 0
    r = reference_from_features(np.array([0.0, 2.0]))
    assert r.mean[0] == 1 and r.std[0] == 1
    r = ReferenceStatistics(1, capacity=2)
    r.extend([[1.0], [2.0]])
    assert r.add([3.0])[0] == 1.0
    np.testing.assert_array_equal(r.as_array()[:, 0], [2.0, 3.0])
    with pytest.raises(StatsError):
        reference_from_features(np.zeros((0, 1)))


@given(st.lists(arrays(float, 2, elements=st.floats(-1e3, 1e3)), min_size=1, max_size=60),
       st.one_of(st.none(), st.integers(1, 10)))
@settings(max_examples=60)
def test_reference_moments_match_brute_force(rows, capacity):
    r = ReferenceStatistics(2, capacity)
    for v in rows:
        r.add(v)
        kept = np.vstack(list(r.samples))
        np.testing.assert_allclose(r.mean, kept.mean(axis=0), rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(r.var, kept.var(axis=0), rtol=1e-9, atol=1e-6)
    expect = len(rows) if capacity is None else min(len(rows), capacity)
    assert len(r) == expect


def test_gv_examples():
    emb = np.vstack([np.ones((5, 3)), np.random.default_rng(0).normal(size=(10000, 3))])
    lab = np.r_[np.zeros(5, int), np.ones(10000, int)]
    per, mean = generalized_variance(emb, lab)
    assert per[0] == 0.0
    assert per[1] == pytest.approx(1.0, rel=0.2)
    assert mean == pytest.approx(per.mean())
    per2, _ = generalized_variance(np.random.default_rng(1).normal(size=(2, 3)), np.zeros(2, int))
    assert per2[0] == pytest.approx(0.0, abs=1e-15)


def test_gv_small_class_warns():
    with pytest.warns(RuntimeWarning, match="class 1"):
        per, _ = generalized_variance(np.zeros((3, 3)), np.array([0, 0, 1]), 2)
    assert per[1] == 0.0


@given(st.integers(0, 1000))
@settings(max_examples=30)
def test_gv_invariances(seed):
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(40, 3)) * rng.uniform(0.5, 2, size=3)
    lab = np.repeat([0, 1], 20)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    perm = rng.permutation(40)
    base, _ = generalized_variance(emb, lab)
    rot, _ = generalized_variance(emb @ q.T, lab)
    shuf, _ = generalized_variance(emb[perm], lab[perm])
    np.testing.assert_allclose(rot, base, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(shuf, base, rtol=1e-9, atol=1e-12)


def test_gv_reduction():
    assert gv_reduction(1.0, 100.0) == pytest.approx(0.99)
    with warnings.catch_warnings():
        assert np.isnan(gv_reduction(1.0, 0.0))

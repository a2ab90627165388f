import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import brute_window_means, iks_oracle_run, simulate_emad
from driftlab.detectors import (
    EMAD,
    HDDDM,
    IKS,
    KINDS,
    ZSD,
    DetectorConfig,
    DetectorError,
    WindowedRule,
    build_detector,
    detector_inputs,
    ks_coefficient,
    ks_threshold,
    run_detector,
    run_stream,
    upper_tail_p,
    windowed_decision,
)


# configuration

def test_config_defaults():
    cfg = DetectorConfig()
    assert (cfg.w, cfg.r, cfg.lam, cfg.alpha_zsd, cfg.alpha_iks) == (50, 0.25, 0.95, 0.05, 0.01)
    assert cfg.max_delay == 300 and cfg.window == 250 and cfg.bins == 15


@pytest.mark.parametrize("kw", [{"w": 0}, {"r": 1.5}, {"lam": 1.0}, {"alpha_zsd": 0.0},
                                {"zsd_reference": "median"}, {"d_max": 0}])
def test_config_rejects(kw):
    with pytest.raises(DetectorError):
        DetectorConfig(**kw)


def test_ks_threshold_values():
    assert ks_threshold(250, 250, 0.01) == pytest.approx(1.628 * math.sqrt(2 / 250), abs=1e-12)
    assert ks_coefficient(0.05) == 1.358
    assert ks_coefficient(0.1) == pytest.approx(math.sqrt(-0.5 * math.log(0.05)))


# windowed rule

def test_windowed_examples():
    assert windowed_decision([0, 0, 1, 1], 4, 0.25)
    assert not windowed_decision([0] * 60, 50, 0.0)
    assert windowed_decision([1] * 13 + [0] * 37, 50, 0.25)
    assert not windowed_decision([1] * 12 + [0] * 38, 50, 0.25)
    assert not windowed_decision([1], 4, 0.25)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=200), st.integers(1, 30),
       st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.9]))
def test_windowed_rule_matches_brute(flags, w, r):
    rule = WindowedRule(w, r)
    brute = brute_window_means(flags, w)
    for i, o in enumerate(flags):
        assert rule.push(o) == (brute[i] > r)
        assert windowed_decision(flags[: i + 1], w, r) == (brute[i] > r)


# EMAD

def test_emad_single_step_mean():
    d = EMAD(DetectorConfig())
    d.prime(np.array([1.0, 1.0]))
    d.step(2.0)
    assert d.mu == pytest.approx(1.05, abs=1e-15)


def test_emad_fixed_point():
    d = EMAD(DetectorConfig())
    d.prime(np.full(10, 3.0))
    flags = [d.step(3.0) for _ in range(500)]
    assert not any(flags)
    assert d.mu == 3.0 and d.var == 0.0


@pytest.mark.parametrize("jump", [2.0, 10.0, 19.0, 21.0, 40.0])
def test_emad_matches_simulation(jump):
    rng = np.random.default_rng(0)
    ref = rng.normal(size=400)
    mu0, var0 = ref.mean(), ref.var()
    stream = mu0 + jump * math.sqrt(var0) + 0.1 * rng.normal(size=300)
    d = EMAD(DetectorConfig())
    d.prime(ref)
    assert [d.step(m) for m in stream] == simulate_emad(mu0, var0, stream)


def test_emad_jump_sensitivity():
    # the first post-jump mean moves by (1 - lam) * jump, while the threshold
    # moves with sqrt of the variance EMA, so only jumps beyond 20 sigma flag
    assert not any(simulate_emad(0.0, 1.0, [10.0] * 2000))
    assert simulate_emad(0.0, 1.0, [25.0] * 10)[0] == 1


def test_emad_requires_prime():
    with pytest.raises(DetectorError):
        EMAD(DetectorConfig()).step(1.0)


# ZSD

def _zsd(mu=0.0, sigma=1.0, **kw):
    d = ZSD(DetectorConfig(**kw))
    d.prime(np.array([mu - sigma, mu + sigma]))
    return d


@pytest.mark.parametrize("mode", ["cumulative", "ema"])
def test_zsd_examples(mode):
    d = _zsd(2.0, 0.5, zsd_reference=mode)
    assert d.p_value(2.0) == pytest.approx(0.5)
    assert d.p_value(3.5) == pytest.approx(0.0013498980316301, abs=1e-12)
    assert d.step(3.5) == 1
    assert d.p_value(2.0 - 2.5) == pytest.approx(1.0, abs=1e-6)
    assert d.step(-0.5) == 0


def test_zsd_degenerate_reference_warns():
    d = ZSD(DetectorConfig())
    d.prime(np.full(5, 1.0))
    with pytest.warns(RuntimeWarning, match="sigma = 0"):
        assert d.step(1.0 + 1e-6) == 1


def test_zsd_flagged_samples_leave_reference_alone():
    d = _zsd()
    before = (d.mean, d.sigma)
    d.step(100.0)
    assert (d.mean, d.sigma) == before
    d.step(0.5)
    assert d.mean != before[0]


def test_zsd_ema_update():
    d = _zsd(zsd_reference="ema")
    d.step(1.0)
    assert d.mu == pytest.approx(0.05)
    assert d.var == pytest.approx(0.95 + 0.05 * 0.95**2)


@given(st.integers(0, 10_000), st.sampled_from(["cumulative", "ema"]))
@settings(max_examples=40)
def test_zsd_alpha_monotone(seed, mode):
    rng = np.random.default_rng(seed)
    ref = rng.gamma(2.0, size=100)
    stream = np.r_[rng.gamma(2.0, size=150), rng.gamma(2.0, size=150) * rng.uniform(1, 3)]
    prev = -1
    for a in (0.01, 0.05, 0.1, 0.2):
        d = ZSD(DetectorConfig(alpha_zsd=a, zsd_reference=mode))
        d.prime(ref)
        n = sum(d.step(m) for m in stream)
        assert n >= prev
        prev = n


def test_upper_tail():
    assert upper_tail_p(0.0) == 0.5
    assert upper_tail_p(-5.0) > 0.999999


# IKS

def test_iks_identical_and_disjoint():
    cfg = DetectorConfig(w=4)
    ref = np.random.default_rng(0).normal(size=(40, 4))
    d = IKS(cfg)
    d.prime(ref)
    assert not d.warming_up
    assert d.step(ref[-20]) in (0, 1)
    d2 = IKS(cfg)
    d2.prime(np.vstack([ref[:20], ref[:20]]))
    np.testing.assert_array_equal(d2.statistics(), 0.0)
    d3 = IKS(cfg)
    d3.prime(ref[:20])
    assert d3.warming_up
    flags = [d3.step(v) for v in ref[:20] + 100.0]
    assert flags[:19] == [0] * 19 and flags[19] == 1
    np.testing.assert_array_equal(d3.last_d, 1.0)


def test_iks_matches_oracle_small_window():
    cfg = DetectorConfig(w=8)
    rng = np.random.default_rng(3)
    ref = rng.normal(size=(80, 2)).round(2)
    stream = np.vstack([rng.normal(size=(150, 2)), rng.normal(0.8, 1, size=(150, 2))]).round(2)
    det = IKS(cfg)
    det.prime(ref)
    for v, (o, d) in zip(stream, iks_oracle_run(cfg.window, ref, stream, 1.628)):
        assert det.step(v) == o
        np.testing.assert_array_equal(det.last_d, d)
        for c in range(2):
            assert np.all(np.diff(det.ref.sorted[c]) >= 0)
            assert np.all(np.diff(det.test.sorted[c]) >= 0)


# HDDDM

def test_hdddm_kind_and_priming():
    with pytest.raises(DetectorError):
        HDDDM(DetectorConfig(), "hdddm_x")
    cfg = DetectorConfig(w=4)
    d = HDDDM(cfg, "hdddm_i")
    d.prime(np.random.default_rng(0).normal(size=(3 * cfg.window, 2)))
    assert d.ready and not d.warming_up
    assert d.beta == pytest.approx(d.mu + math.sqrt(d.var))


def test_hdddm_warmup_in_stream():
    cfg = DetectorConfig(w=2)
    d = HDDDM(cfg, "hdddm_e")
    d.prime(np.zeros((0, 3)))
    x = np.random.default_rng(1).normal(size=(40, 3))
    flags = [d.step(v) for v in x]
    assert flags[: 3 * cfg.window] == [0] * (3 * cfg.window)
    assert d.ready


@given(st.integers(0, 5000))
@settings(max_examples=20)
def test_hdddm_delta_bounds(seed):
    rng = np.random.default_rng(seed)
    cfg = DetectorConfig(w=3)
    d = HDDDM(cfg)
    d.prime(rng.normal(size=(45, 3)))
    for v in rng.normal(rng.uniform(-3, 3), rng.uniform(0.1, 3), size=(30, 3)):
        d.step(v)
        assert 0.0 <= d.last_delta <= math.sqrt(2) + 1e-12


# runner

def test_stop_contract():
    cfg = DetectorConfig(w=10)
    ref = np.zeros(50)
    ref[::2] = 1.0
    stream = np.r_[np.tile([0.0, 1.0], 50), np.full(100, 50.0)]
    res = run_detector(ZSD(cfg), ref, stream, 100, cfg)
    assert res.report_index is not None
    assert len(res.raw_flags) == res.report_index + 1
    assert res.stopped_early and res.delay == res.report_index - 100 >= 0
    assert not res.false_report


def test_runner_errors():
    cfg = DetectorConfig()
    with pytest.raises(DetectorError, match="empty"):
        run_detector(ZSD(cfg), np.ones(3), np.zeros(0), 0, cfg)
    with pytest.raises(DetectorError, match="onset"):
        run_detector(ZSD(cfg), np.ones(3), np.zeros(5), 9, cfg)
    with pytest.raises(DetectorError, match="needs a trained model"):
        detector_inputs("zsd", np.ones((3, 2)))
    with pytest.raises(DetectorError, match="unknown"):
        build_detector("adwin")
    with pytest.raises(DetectorError, match="empty"):
        run_stream("hdddm_i", np.ones((3, 2)), np.zeros((0, 2)), 0)


def test_run_stream_raw_hdddm():
    rng = np.random.default_rng(0)
    ref = rng.normal(size=(750, 2))
    stream = np.vstack([rng.normal(size=(300, 2)), rng.normal(4, 1, size=(300, 2))])
    res = run_stream("hdddm_i", ref, stream, 300)
    # a one-sigma threshold on an autocorrelated distance may fire before onset
    assert res.report_index is not None
    assert res.false_report == (res.report_index < 300)
    d = res.to_dict()
    assert set(d["raw_flags"]) <= {"0", "1"} and len(d["raw_flags"]) == d["flags_consumed"]


def test_all_kinds_buildable():
    for kind in KINDS:
        assert build_detector(kind).kind == kind

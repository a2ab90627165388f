"""Streaming change detectors and the stream runner.

Every detector consumes one observation per step and emits a raw flag
``o in {0, 1}``. A drift is reported once the fraction of flags in the last
``w`` steps exceeds ``r``; the runner stops at the first report.

Detectors are primed from the reference slice (undrifted data that precedes
the monitored stream) so that warm-up rarely spills into the stream itself.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import kernels
from .embedding_stats import (
    SCALAR_MIN,
    SUMMARY4,
    ReferenceStatistics,
    compute_features,
    distances,
)

KINDS = ("zsd", "emad", "iks", "hdddm_e", "hdddm_i")
ZSD_REFERENCE_MODES = ("cumulative", "ema")
SIGMA_FLOOR = 1e-9

# two-sample KS coefficients c(alpha) at the usual levels
KS_COEFFICIENTS = {0.01: 1.628, 0.05: 1.358}


class DetectorError(ValueError):
    pass


@dataclass
class DetectorConfig:
    """Detector and reporting hyperparameters.

    ``d_max``, ``baseline_window`` and ``hdddm_bins`` default to values
    derived from ``w`` when left as None.
    """

    w: int = 50
    r: float = 0.25
    d_max: Optional[int] = None
    lam: float = 0.95
    alpha_zsd: float = 0.05
    alpha_iks: float = 0.01
    baseline_window: Optional[int] = None
    hdddm_bins: Optional[int] = None
    zsd_reference: str = "cumulative"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.w, (int, np.integer)) or self.w < 1:
            raise DetectorError(f"w must be a positive integer, got {self.w!r}")
        if not 0 <= self.r <= 1:
            raise DetectorError(f"r must lie in [0, 1], got {self.r}")
        if not 0 < self.lam < 1:
            raise DetectorError(f"lam must lie in (0, 1), got {self.lam}")
        for name in ("alpha_zsd", "alpha_iks"):
            a = getattr(self, name)
            if not 0 < a < 1:
                raise DetectorError(f"{name} must lie in (0, 1), got {a}")
        if self.zsd_reference not in ZSD_REFERENCE_MODES:
            raise DetectorError(f"zsd_reference must be one of {ZSD_REFERENCE_MODES}")
        for name in ("d_max", "baseline_window", "hdddm_bins"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise DetectorError(f"{name} must be positive, got {v}")

    @property
    def max_delay(self) -> int:
        return self.d_max if self.d_max is not None else 6 * self.w

    @property
    def window(self) -> int:
        return self.baseline_window if self.baseline_window is not None else 5 * self.w

    @property
    def bins(self) -> int:
        if self.hdddm_bins is not None:
            return self.hdddm_bins
        return max(2, int(math.floor(math.sqrt(self.window))))

    def to_dict(self) -> dict:
        return asdict(self)


def ks_coefficient(alpha: float) -> float:
    for a, c in KS_COEFFICIENTS.items():
        if math.isclose(alpha, a):
            return c
    return math.sqrt(-0.5 * math.log(alpha / 2.0))


def ks_threshold(n: int, m: int, alpha: float = 0.01) -> float:
    return ks_coefficient(alpha) * math.sqrt((n + m) / (n * m))


def upper_tail_p(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def windowed_decision(flags, w: int, r: float) -> bool:
    """True iff the mean of the last ``w`` flags (zero-padded) exceeds ``r``."""
    recent = list(flags)[-w:]
    return sum(recent) / w > r


class WindowedRule:
    """Incremental form of :func:`windowed_decision`."""

    def __init__(self, w: int, r: float):
        self.w, self.r = w, r
        self._buf: deque = deque(maxlen=w)
        self._count = 0

    def push(self, o: int) -> bool:
        if len(self._buf) == self.w:
            self._count -= self._buf[0]
        self._buf.append(o)
        self._count += o
        return self._count / self.w > self.r


class Detector:
    """Base class. Subclasses set ``kind`` and ``layout``."""

    kind = ""
    layout = SCALAR_MIN

    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self.warming_up = True

    def prime(self, reference: np.ndarray) -> None:
        raise NotImplementedError

    def step(self, x) -> int:
        raise NotImplementedError


class EMAD(Detector):
    """Flags when the moving average of ``m`` climbs above an adaptive threshold.

    The second EMA tracks a variance; the threshold uses its square root so
    that it shares the units of ``m``.
    """

    kind = "emad"

    def prime(self, reference):
        ref = np.asarray(reference, dtype=float).reshape(-1)
        if len(ref) == 0:
            raise DetectorError("empty reference")
        self.mu = float(ref.mean())
        self.var = float(ref.var())
        self.beta = self.mu + math.sqrt(self.var)
        self.warming_up = False

    def step(self, m) -> int:
        if self.warming_up:
            raise DetectorError("EMAD used before prime()")
        lam = self.cfg.lam
        m = float(np.asarray(m).reshape(-1)[0])
        self.mu = lam * self.mu + (1 - lam) * m
        self.var = lam * self.var + (1 - lam) * (m - self.mu) ** 2
        o = int(self.mu > self.beta)
        if not o:
            self.beta = self.mu + math.sqrt(self.var)
        return o


class ZSD(Detector):
    """One-sided z-test of ``m`` against reference moments.

    With ``zsd_reference="cumulative"`` the moments cover every unflagged
    observation seen so far. ``"ema"`` uses exponential forgetting instead.
    """

    kind = "zsd"

    def prime(self, reference):
        ref = np.asarray(reference, dtype=float).reshape(-1)
        if len(ref) == 0:
            raise DetectorError("empty reference")
        self._stats = ReferenceStatistics(1)
        self._stats.extend(ref)
        self.mu = float(ref.mean())
        self.var = float(ref.var())
        self._warned = False
        self.warming_up = False

    @property
    def sigma(self) -> float:
        if self.cfg.zsd_reference == "cumulative":
            return float(self._stats.std[0])
        return math.sqrt(self.var)

    @property
    def mean(self) -> float:
        if self.cfg.zsd_reference == "cumulative":
            return float(self._stats.mean[0])
        return self.mu

    def p_value(self, m: float) -> float:
        sigma = self.sigma
        if sigma <= 0:
            if not self._warned:
                warnings.warn("degenerate ZSD reference (sigma = 0)", RuntimeWarning, stacklevel=3)
                self._warned = True
            sigma = SIGMA_FLOOR
        return upper_tail_p((m - self.mean) / sigma)

    def step(self, m) -> int:
        if self.warming_up:
            raise DetectorError("ZSD used before prime()")
        m = float(np.asarray(m).reshape(-1)[0])
        o = int(self.p_value(m) < self.cfg.alpha_zsd)
        if not o:
            if self.cfg.zsd_reference == "cumulative":
                self._stats.add(m)
            else:
                lam = self.cfg.lam
                self.mu = lam * self.mu + (1 - lam) * m
                self.var = lam * self.var + (1 - lam) * (m - self.mu) ** 2
        return o


class _SortedWindow:
    """FIFO window of vectors with one sorted copy per component."""

    def __init__(self, dim: int, capacity: int):
        self.capacity = capacity
        self.items: deque = deque()
        self.sorted = [np.empty(0) for _ in range(dim)]

    def __len__(self):
        return len(self.items)

    @property
    def full(self) -> bool:
        return len(self.items) >= self.capacity

    def push(self, v: np.ndarray) -> Optional[np.ndarray]:
        """Append ``v``; returns the evicted vector when the window was full."""
        if self.full:
            old = self.items.popleft()
            for c, arr in enumerate(self.sorted):
                kernels.sorted_replace(arr, float(old[c]), float(v[c]))
        else:
            old = None
            for c in range(len(self.sorted)):
                arr = self.sorted[c]
                self.sorted[c] = np.insert(arr, np.searchsorted(arr, v[c]), v[c])
        self.items.append(v)
        return old


class IKS(Detector):
    """Per-component two-sample KS tests between a reference and a sliding window.

    Observations are four-number summaries of the centroid distances. When a
    step is not flagged, the observation leaving the sliding window is moved
    into the reference window.
    """

    kind = "iks"
    layout = SUMMARY4

    def prime(self, reference):
        ref = np.asarray(reference, dtype=float)
        if ref.ndim != 2 or len(ref) == 0:
            raise DetectorError("empty reference")
        n = self.cfg.window
        self.dim = ref.shape[1]
        self.ref = _SortedWindow(self.dim, n)
        self.test = _SortedWindow(self.dim, n)
        if len(ref) >= 2 * n:
            head, tail = ref[-2 * n : -n], ref[-n:]
        else:
            head, tail = ref[-n:], ref[:0]
        for v in head:
            self.ref.push(v)
        for v in tail:
            self.test.push(v)
        self.last_d = np.zeros(self.dim)
        self.warming_up = not self.test.full

    def statistics(self) -> np.ndarray:
        return np.array([kernels.ks_statistic(a, b) for a, b in zip(self.ref.sorted, self.test.sorted)])

    def step(self, v) -> int:
        v = np.asarray(v, dtype=float).reshape(self.dim)
        evicted = self.test.push(v)
        if not self.test.full:
            self.warming_up = True
            return 0
        self.warming_up = False
        self.last_d = self.statistics()
        thr = ks_threshold(len(self.ref), len(self.test), self.cfg.alpha_iks)
        o = int(np.any(self.last_d > thr))
        if not o and evicted is not None:
            self.ref.push(evicted)
        return o


class HDDDM(Detector):
    """Mean per-feature Hellinger distance between a fixed reference batch and a
    sliding window, with an adaptive threshold on its moving average.

    Start-up runs through three phases of ``5w`` observations each: collect the
    reference batch, fill the window, then estimate the distance moments.
    """

    layout = "vector"

    def __init__(self, cfg: DetectorConfig, kind: str = "hdddm_e"):
        super().__init__(cfg)
        if kind not in ("hdddm_e", "hdddm_i"):
            raise DetectorError(f"not an HDDDM kind: {kind!r}")
        self.kind = kind
        self.layout = "embedding" if kind == "hdddm_e" else "raw"
        self._ref_rows: list = []
        self._win: Optional[np.ndarray] = None
        self._win_len = 0
        self._pos = 0
        self._init_deltas: list = []
        self.last_delta = float("nan")

    def prime(self, reference):
        for v in np.asarray(reference, dtype=float):
            self._warm(v)

    @property
    def ready(self) -> bool:
        return len(self._init_deltas) >= self.cfg.window

    def _slide(self, v: np.ndarray) -> None:
        self._win[self._pos] = v
        self._pos = (self._pos + 1) % self.cfg.window
        self._win_len = min(self._win_len + 1, self.cfg.window)

    def _delta(self) -> float:
        self.last_delta = float(kernels.hellinger_mean(self.ref_batch, self._win, self.cfg.bins))
        return self.last_delta

    def _warm(self, v: np.ndarray) -> None:
        n = self.cfg.window
        if len(self._ref_rows) < n:
            self._ref_rows.append(v)
            if len(self._ref_rows) == n:
                self.ref_batch = np.ascontiguousarray(np.vstack(self._ref_rows))
                self._win = np.zeros_like(self.ref_batch)
            return
        self._slide(v)
        if self._win_len < n:
            return
        self._init_deltas.append(self._delta())
        if self.ready:
            d = np.asarray(self._init_deltas)
            self.mu = float(d.mean())
            self.var = float(d.var())
            self.beta = self.mu + math.sqrt(self.var)
            self.warming_up = False

    def step(self, v) -> int:
        v = np.asarray(v, dtype=float).reshape(-1)
        if not self.ready:
            self._warm(v)
            self.warming_up = True
            return 0
        self.warming_up = False
        self._slide(v)
        delta = self._delta()
        o = int(delta > self.beta)
        if not o:
            lam = self.cfg.lam
            self.mu = lam * self.mu + (1 - lam) * delta
            self.var = lam * self.var + (1 - lam) * (delta - self.mu) ** 2
            self.beta = self.mu + math.sqrt(self.var)
        return o


def build_detector(kind: str, cfg: Optional[DetectorConfig] = None) -> Detector:
    cfg = cfg or DetectorConfig()
    if kind == "zsd":
        return ZSD(cfg)
    if kind == "emad":
        return EMAD(cfg)
    if kind == "iks":
        return IKS(cfg)
    if kind in ("hdddm_e", "hdddm_i"):
        return HDDDM(cfg, kind)
    raise DetectorError(f"unknown detector kind {kind!r}; expected one of {KINDS}")


def needs_model(kind: str) -> bool:
    return kind != "hdddm_i"


def detector_inputs(kind: str, x: np.ndarray, model=None) -> np.ndarray:
    """Rows the detector of ``kind`` consumes for a batch of raw inputs."""
    x = np.asarray(x, dtype=float)
    if kind == "hdddm_i":
        return x
    if model is None:
        raise DetectorError(f"detector {kind!r} needs a trained model")
    emb = model.embed(x)
    if kind == "hdddm_e":
        return emb
    d = distances(emb, model.centroids)
    return compute_features(d, SUMMARY4 if kind == "iks" else SCALAR_MIN)


@dataclass
class RunResult:
    kind: str
    raw_flags: np.ndarray
    warmup: np.ndarray
    onset_index: int
    stream_length: int
    report_index: Optional[int] = None
    stopped_early: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def delay(self) -> Optional[int]:
        if self.report_index is None or self.report_index < self.onset_index:
            return None
        return self.report_index - self.onset_index

    @property
    def false_report(self) -> bool:
        return self.report_index is not None and self.report_index < self.onset_index

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "onset_index": self.onset_index,
            "stream_length": self.stream_length,
            "report_index": self.report_index,
            "delay": self.delay,
            "stopped_early": self.stopped_early,
            "flags_consumed": int(len(self.raw_flags)),
            "raw_flag_count": int(self.raw_flags.sum()),
            "warmup_count": int(self.warmup.sum()),
            "raw_flags": "".join(map(str, self.raw_flags.tolist())),
            "warmup": "".join("1" if b else "0" for b in self.warmup.tolist()),
            **self.extra,
        }


def run_detector(
    detector: Detector,
    reference_rows: np.ndarray,
    stream_rows: np.ndarray,
    onset_index: int,
    cfg: DetectorConfig,
) -> RunResult:
    """Prime ``detector`` and feed it ``stream_rows`` until the first report."""
    n = len(stream_rows)
    if n == 0:
        raise DetectorError("empty monitored stream")
    if not 0 <= onset_index <= n:
        raise DetectorError(f"onset {onset_index} outside stream of length {n}")
    detector.prime(reference_rows)
    rule = WindowedRule(cfg.w, cfg.r)
    flags = np.zeros(n, dtype=np.uint8)
    warm = np.zeros(n, dtype=bool)
    report = None
    for i in range(n):
        o = detector.step(stream_rows[i])
        flags[i] = o
        warm[i] = detector.warming_up
        if rule.push(o):
            report = i
            break
    used = n if report is None else report + 1
    return RunResult(
        kind=detector.kind,
        raw_flags=flags[:used],
        warmup=warm[:used],
        onset_index=onset_index,
        stream_length=n,
        report_index=report,
        stopped_early=report is not None and report < n - 1,
    )


def run_stream(
    kind: str,
    reference_x: np.ndarray,
    stream_x: np.ndarray,
    onset_index: int,
    cfg: Optional[DetectorConfig] = None,
    model=None,
) -> RunResult:
    """Run one detector over a monitored stream of raw (normalised) inputs."""
    cfg = cfg or DetectorConfig()
    if len(stream_x) == 0:
        raise DetectorError("empty monitored stream")
    if len(reference_x) == 0:
        raise DetectorError("empty reference slice")
    det = build_detector(kind, cfg)
    ref_rows = detector_inputs(kind, reference_x, model)
    rows = detector_inputs(kind, stream_x, model)
    return run_detector(det, ref_rows, rows, onset_index, cfg)

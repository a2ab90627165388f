"""Scoring, aggregation across seeds and rank-based significance testing."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, asdict
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np
from scipy import stats

DEFAULT_GAMMA = 2.0
DEFAULT_D_MAX = 300

# Nemenyi critical values q_0.05 for A = 2..10 algorithms
NEMENYI_Q05 = (1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class DriftLabel:
    kind: str
    acc_train: float
    acc_valid: float
    acc_test: float

    @property
    def ge(self) -> float:
        return abs(self.acc_train - self.acc_valid)

    @property
    def threshold(self) -> float:
        return self.acc_valid - self.ge

    @property
    def real(self) -> bool:
        return self.kind == "real"

    def to_dict(self) -> dict:
        return {**asdict(self), "ge": self.ge}


def classify_drift_type(acc_train: float, acc_valid: float, acc_test: float) -> DriftLabel:
    """Real drift iff test accuracy falls below validation accuracy by more than
    the train/validation generalisation gap."""
    for a in (acc_train, acc_valid, acc_test):
        if not 0.0 <= a <= 1.0:
            raise EvaluationError(f"accuracy {a} outside [0, 1]")
    ge = abs(acc_train - acc_valid)
    kind = "real" if acc_test < acc_valid - ge else "virtual"
    return DriftLabel(kind, acc_train, acc_valid, acc_test)


def detection_accuracy(report_index: Optional[int], onset_index: int, real: bool) -> int:
    """1 when the run handled the drift event correctly.

    Real drift must be reported at or after onset. Virtual drift (or no drift)
    must not be reported at all.
    """
    if real:
        return int(report_index is not None and report_index >= onset_index)
    return int(report_index is None)


def penalized_da(da: float, delay: Optional[float], d_max: float = DEFAULT_D_MAX,
                 gamma: float = DEFAULT_GAMMA, real: bool = True) -> float:
    if not real:
        return float(da)
    if delay is None:
        return 0.0
    if delay < 0:
        raise EvaluationError("delay must be non-negative")
    return float(min(max(da - (delay / d_max) ** gamma, 0.0), 1.0))


def compute_tnr(raw_flags: np.ndarray, warmup: Optional[np.ndarray], onset_index: int) -> float:
    """1 - false-flag rate over the counted pre-onset samples.

    Only flags actually consumed are counted, so a run stopped early by a
    false report contributes only the samples before the stop.
    """
    flags = np.asarray(raw_flags)[:onset_index]
    mask = np.ones(len(flags), dtype=bool)
    if warmup is not None:
        mask &= ~np.asarray(warmup, dtype=bool)[: len(flags)]
    counted = int(mask.sum())
    if counted == 0:
        raise EvaluationError("no counted pre-onset samples")
    return 1.0 - float(flags[mask].sum()) / counted


def h_score(da_hat: float, tnr: float) -> float:
    if da_hat + tnr == 0:
        return 0.0
    return 2.0 * da_hat * tnr / (da_hat + tnr)


@dataclass
class ScoreRecord:
    da: int
    da_hat: float
    tnr: float
    h: float
    delay: Optional[int] = None
    gamma: float = DEFAULT_GAMMA
    d_max: int = DEFAULT_D_MAX

    def to_dict(self) -> dict:
        return asdict(self)


def score_run(report_index: Optional[int], onset_index: int, raw_flags: np.ndarray,
              warmup: Optional[np.ndarray], real: bool,
              d_max: int = DEFAULT_D_MAX, gamma: float = DEFAULT_GAMMA) -> ScoreRecord:
    da = detection_accuracy(report_index, onset_index, real)
    delay = report_index - onset_index if (real and da) else None
    da_hat = penalized_da(da, delay, d_max, gamma, real)
    tnr = compute_tnr(raw_flags, warmup, onset_index)
    return ScoreRecord(da=da, da_hat=da_hat, tnr=tnr, h=h_score(da_hat, tnr),
                       delay=delay, gamma=gamma, d_max=d_max)


PENALTY_GAMMAS = (0.5, 1.0, 2.0, 4.0)


def penalty_curve(d_max: int = DEFAULT_D_MAX, gammas: Sequence[float] = PENALTY_GAMMAS,
                  step: int = 10) -> list[dict]:
    """Penalised DA of a correct detection for delays 0..d_max, one row per delay."""
    rows = []
    for delay in range(0, d_max + 1, step):
        row = {"delay": delay}
        for g in gammas:
            row[f"gamma_{g:g}"] = penalized_da(1, delay, d_max, g)
        rows.append(row)
    return rows


def write_penalty_curve(path: str | os.PathLike, d_max: int = DEFAULT_D_MAX,
                        gammas: Sequence[float] = PENALTY_GAMMAS, step: int = 10) -> None:
    rows = penalty_curve(d_max, gammas, step)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


AGG_METRICS = ("da", "da_hat", "tnr", "delay", "h")


def aggregate(records: Sequence[ScoreRecord]) -> dict[str, tuple[float, float]]:
    """Mean and population std per metric; delay over runs where it exists."""
    if not records:
        raise EvaluationError("nothing to aggregate")
    out = {}
    for name in AGG_METRICS:
        vals = [getattr(r, name) for r in records if getattr(r, name) is not None]
        if vals:
            arr = np.asarray(vals, dtype=float)
            out[name] = (float(arr.mean()), float(arr.std()))
        else:
            out[name] = (float("nan"), float("nan"))
    return out


def rank_rows(table: np.ndarray) -> np.ndarray:
    """Per-row ranks with 1 for the highest score; ties share the average rank."""
    table = np.asarray(table, dtype=float)
    return np.vstack([stats.rankdata(-row, method="average") for row in table])


def friedman_test(table: np.ndarray, alpha: float = 0.05) -> tuple[float, bool]:
    """Friedman chi-square statistic over rows (datasets) and columns (algorithms)."""
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[0] < 2 or table.shape[1] < 2:
        raise EvaluationError("Friedman test needs at least 2 rows and 2 algorithms")
    if not np.all(np.isfinite(table)):
        raise EvaluationError("non-finite score in rank table")
    n, a = table.shape
    avg = rank_rows(table).mean(axis=0)
    chi2 = 12.0 * n / (a * (a + 1)) * (float(np.sum(avg**2)) - a * (a + 1) ** 2 / 4.0)
    chi2 = max(chi2, 0.0)
    critical = float(stats.chi2.ppf(1 - alpha, a - 1))
    return chi2, chi2 > critical


def average_ranks(table: np.ndarray) -> np.ndarray:
    return rank_rows(table).mean(axis=0)


def nemenyi_cd(a: int, n: int, alpha: float = 0.05) -> float:
    if not math.isclose(alpha, 0.05):
        raise EvaluationError("only alpha = 0.05 is tabulated")
    if not 2 <= a <= 1 + len(NEMENYI_Q05):
        raise EvaluationError(f"q table exhausted: A={a} outside 2..{1 + len(NEMENYI_Q05)}")
    if n < 1:
        raise EvaluationError("N must be positive")
    return NEMENYI_Q05[a - 2] * math.sqrt(a * (a + 1) / (6.0 * n))


def cd_groups(avg_ranks: Sequence[float], cd: float) -> list[tuple[int, int]]:
    """Maximal runs (in rank order) whose rank spread is within ``cd``.

    Returns (first, last) positions into the sorted order; single members are
    not groups.
    """
    r = np.sort(np.asarray(avg_ranks, dtype=float))
    groups = []
    for i in range(len(r)):
        j = i
        while j + 1 < len(r) and r[j + 1] - r[i] <= cd:
            j += 1
        if j > i and not any(a <= i and j <= b for a, b in groups):
            groups.append((i, j))
    return groups


def emit_cd_diagram(avg_ranks: Sequence[float], names: Sequence[str], cd: float,
                    path: Optional[str | os.PathLike] = None, title: str = "") -> str:
    """Render a critical-difference diagram as standalone SVG.

    Returns the SVG text and writes it to ``path`` when given.
    """
    ranks = np.asarray(avg_ranks, dtype=float)
    if len(ranks) != len(names):
        raise EvaluationError("one name per rank required")
    if not np.all(np.isfinite(ranks)):
        raise EvaluationError("non-finite average rank")
    a = max(len(ranks), 2)
    width, margin = 720, 150
    order = np.argsort(ranks, kind="stable")
    n_left = (len(order) + 1) // 2
    axis_y = 70
    label_rows = max(n_left, len(order) - n_left)
    groups = cd_groups(ranks, cd)
    height = axis_y + 40 + 22 * label_rows + 12 * len(groups) + 30

    def x_of(rank: float) -> float:
        return margin + (rank - 1) / (a - 1) * (width - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2}" y="16" text-anchor="middle">{escape(title)}</text>')
    # CD scale bar
    parts.append(f'<line x1="{x_of(1):.2f}" y1="32" x2="{x_of(1 + cd):.2f}" y2="32" stroke="black" stroke-width="2"/>')
    parts.append(f'<text x="{(x_of(1) + x_of(1 + cd)) / 2:.2f}" y="28" text-anchor="middle">CD={cd:.3f}</text>')
    parts.append(f'<line x1="{x_of(1):.2f}" y1="{axis_y}" x2="{x_of(a):.2f}" y2="{axis_y}" stroke="black"/>')
    for t in range(1, a + 1):
        x = x_of(t)
        parts.append(f'<line x1="{x:.2f}" y1="{axis_y - 5}" x2="{x:.2f}" y2="{axis_y}" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{axis_y - 8}" text-anchor="middle">{t}</text>')
    bars_y = axis_y + 12
    sorted_ranks = ranks[order]
    for g, (i, j) in enumerate(groups):
        y = bars_y + 12 * g
        parts.append(
            f'<line class="cd-group" x1="{x_of(sorted_ranks[i]) - 3:.2f}" y1="{y}" '
            f'x2="{x_of(sorted_ranks[j]) + 3:.2f}" y2="{y}" stroke="black" stroke-width="4"/>'
        )
    label_top = bars_y + 12 * len(groups) + 10
    for pos, idx in enumerate(order):
        left = pos < n_left
        row = pos if left else len(order) - 1 - pos
        y = label_top + 22 * row
        x = x_of(ranks[idx])
        x_text = margin - 10 if left else width - margin + 10
        anchor = "end" if left else "start"
        parts.append(
            f'<polyline points="{x:.2f},{axis_y} {x:.2f},{y} {x_text:.2f},{y}" fill="none" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x_text + (-4 if left else 4):.2f}" y="{y + 4}" text-anchor="{anchor}">'
            f"{escape(str(names[idx]))} ({ranks[idx]:.2f})</text>"
        )
    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(svg)
    return svg

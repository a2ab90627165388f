"""Numpy implementations of the streaming hot kernels.

These mirror ``_kernels.pyx`` operation for operation so that both backends
return bit-identical results.
"""

from __future__ import annotations

import numpy as np


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample KS statistic for two *sorted* 1-D arrays."""
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return 0.0
    pts = np.concatenate([a, b])
    ca = np.searchsorted(a, pts, side="right") / n
    cb = np.searchsorted(b, pts, side="right") / m
    return float(np.max(np.abs(ca - cb)))


def sorted_replace(arr: np.ndarray, old: float, new: float) -> None:
    """Replace one occurrence of ``old`` by ``new`` in a sorted array, in place."""
    i = int(np.searchsorted(arr, old, side="left"))
    if i >= len(arr) or arr[i] != old:
        raise KeyError(old)
    j = int(np.searchsorted(arr, new, side="left"))
    if j > i:
        # new goes after old's slot: shift the block in between left by one
        j -= 1
        arr[i:j] = arr[i + 1 : j + 1]
    elif j < i:
        arr[j + 1 : i + 1] = arr[j:i].copy()
    arr[j] = new


def _bin_counts(x: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    return np.bincount(idx, minlength=bins)


def hellinger_per_feature(ref: np.ndarray, win: np.ndarray, bins: int) -> np.ndarray:
    """Per-column Hellinger distance between histograms of two sample blocks.

    Both blocks share B equal-width bins spanning their joint min/max.
    Values lie in [0, sqrt(2)].
    """
    nf = ref.shape[1]
    out = np.zeros(nf)
    nr, nw = ref.shape[0], win.shape[0]
    for f in range(nf):
        a, b = ref[:, f], win[:, f]
        lo = min(a.min(), b.min())
        hi = max(a.max(), b.max())
        if not hi > lo:
            continue
        p = _bin_counts(a, lo, hi, bins) / nr
        q = _bin_counts(b, lo, hi, bins) / nw
        s = 0.0
        for t in range(bins):
            d = np.sqrt(p[t]) - np.sqrt(q[t])
            s += d * d
        out[f] = np.sqrt(s)
    return out


def hellinger_mean(ref: np.ndarray, win: np.ndarray, bins: int) -> float:
    return float(np.sum(hellinger_per_feature(ref, win, bins)) / ref.shape[1])

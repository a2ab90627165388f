"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import timeit

import numpy as np

from driftlab import _pykernels

try:
    from driftlab import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(rng, window=250, bins=15, dims=10):
    a = np.sort(rng.normal(size=window))
    b = np.sort(rng.normal(0.2, 1.0, size=window))
    ref = rng.normal(size=(window, dims))
    win = rng.normal(0.1, 1.0, size=(window, dims))
    arr = np.sort(rng.normal(size=window))
    slots = rng.integers(0, window, size=1000).tolist()
    news = rng.normal(size=1000).tolist()

    def replace_loop(mod):
        x = arr.copy()
        for i, new in zip(slots, news):
            mod.sorted_replace(x, float(x[i]), new)

    return {
        "ks_statistic (n=m=250)": lambda mod: mod.ks_statistic(a, b),
        f"hellinger_mean (250x{dims}, B={bins})": lambda mod: mod.hellinger_mean(ref, win, bins),
        "sorted_replace x1000": replace_loop,
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=200)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    backends = [("numpy", _pykernels)] + ([("cython", _kernels)] if _kernels else [])
    print(f"{'kernel':38s}" + "".join(f"{name:>14s}" for name, _ in backends) + ("   speedup" if _kernels else ""))
    for label, fn in cases(rng).items():
        times = []
        for _, mod in backends:
            n = max(1, args.repeats // 50) if "x1000" in label else args.repeats
            t = min(timeit.repeat(lambda: fn(mod), number=n, repeat=3)) / n
            times.append(t)
        row = f"{label:38s}" + "".join(f"{t * 1e6:12.1f}us" for t in times)
        if len(times) == 2:
            row += f"   {times[0] / times[1]:6.1f}x"
        print(row)
    if _kernels is None:
        print("compiled kernels not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()

"""Benchmark the compiled kernels against their pure-numpy fallbacks.

Times lcs_length, lcs_table, and window_counts on synthetic inputs at a
few sizes and prints a comparison table. The compiled path warms up first
so jit compilation never lands inside a timed region.

Run from the repository root:

    python benchmarks/bench_kernels.py --repeats 5
"""

from __future__ import annotations

import argparse
import random
import time
from dataclasses import dataclass

import numpy as np

from dialogkit import kernels


@dataclass
class BenchmarkResult:
    name: str
    size: str
    numba_ms: float | None
    numpy_ms: float

    @property
    def speedup(self) -> float | None:
        if self.numba_ms is None or self.numba_ms == 0:
            return None
        return self.numpy_ms / self.numba_ms


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best * 1000.0


def _random_tokens(n: int, vocab: int, rng: random.Random) -> list[str]:
    return [f"w{rng.randrange(vocab)}" for _ in range(n)]


def run_benchmarks(repeats: int, seed: int) -> list[BenchmarkResult]:
    rng = random.Random(seed)
    np_rng = np.random.default_rng(seed)
    results: list[BenchmarkResult] = []

    for n in (200, 800):
        a = _random_tokens(n, 50, rng)
        b = _random_tokens(n, 50, rng)
        xs, ys = kernels._encode_pair(a, b)
        if kernels.HAS_NUMBA:
            kernels._lcs_length_numba(xs, ys)
            kernels._lcs_table_numba(xs, ys)
            numba_len = _time(lambda: kernels._lcs_length_numba(xs, ys), repeats)
            numba_tab = _time(lambda: kernels._lcs_table_numba(xs, ys), repeats)
        else:
            numba_len = numba_tab = None
        numpy_len = _time(lambda: kernels._lcs_length_numpy(xs, ys), repeats)
        numpy_tab = _time(lambda: kernels._lcs_table_numpy(xs, ys), repeats)
        results.append(BenchmarkResult("lcs_length", f"{n}x{n}", numba_len, numpy_len))
        results.append(BenchmarkResult("lcs_table", f"{n}x{n}", numba_tab, numpy_tab))

    for n in (100_000, 1_000_000):
        labels = (np_rng.random(n) < 0.1).astype(np.int64)
        k = max(2, n // 200)
        if kernels.HAS_NUMBA:
            kernels._window_counts_numba(labels, k)
            numba_ms = _time(lambda: kernels._window_counts_numba(labels, k), repeats)
        else:
            numba_ms = None
        numpy_ms = _time(lambda: kernels._window_counts_numpy(labels, k), repeats)
        results.append(BenchmarkResult("window_counts", f"n={n}", numba_ms, numpy_ms))
    return results


def print_table(results: list[BenchmarkResult]) -> None:
    header = f"{'kernel':<15} {'size':<12} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for result in results:
        numba = f"{result.numba_ms:.3f}" if result.numba_ms is not None else "n/a"
        speedup = f"{result.speedup:.1f}x" if result.speedup is not None else "n/a"
        print(
            f"{result.name:<15} {result.size:<12} {numba:>10} "
            f"{result.numpy_ms:>10.3f} {speedup:>8}"
        )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    if not kernels.HAS_NUMBA:
        print("numba unavailable; timing the numpy path only")
    results = run_benchmarks(args.repeats, args.seed)
    print_table(results)


if __name__ == "__main__":
    main()

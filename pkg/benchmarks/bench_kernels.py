"""Benchmark the compiled score kernels against the pure-numpy fallback.

Runs blocked_neighbor_pass on random data for each backend and metric, checks
the two backends return identical neighbor lists, and prints one throughput
row per (backend, metric).

Usage: python3 benchmarks/bench_kernels.py [--n 20000] [--m 64] [--r 10]
       [--threads 1] [--metrics euclidean,cosine_similarity] [--repeats 1]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dmlscope import EmbeddingSet, MetricKind, blocked_neighbor_pass
from dmlscope.kernels import available_backends


def _instance(n: int, m: int, metric: MetricKind, seed: int) -> EmbeddingSet:
    rng = np.random.default_rng(seed)
    mat = rng.standard_normal((n, m)).astype(np.float32)
    if metric is MetricKind.SNR_DISTANCE:
        mat[:, 0] += np.linspace(0.0, 1.0, n, dtype=np.float32)  # anchor variance > 0
    ids = tuple(f"x{i}" for i in range(n))
    return EmbeddingSet(ids=ids, matrix=mat, metric=metric)


def bench(
    n: int, m: int, r: int, block: int, threads: int, metrics: list[MetricKind], repeats: int
) -> int:
    backends = available_backends()
    print(f"backends: {', '.join(backends)}   n={n} m={m} r={r} block={block} threads={threads}")
    header = f"{'backend':>8} {'metric':>24} {'seconds':>9} {'Mpairs/s':>9}"
    failures = 0
    for metric in metrics:
        embs = _instance(n, m, metric, seed=7)
        results = {}
        rows = []
        for backend in backends:
            best = float("inf")
            for _ in range(repeats):
                t0 = time.perf_counter()
                out = blocked_neighbor_pass(
                    embs, r_max=r, block_size=block, threads=threads, backend=backend
                )
                best = min(best, time.perf_counter() - t0)
            results[backend] = out
            rate = n * n / best / 1e6
            rows.append(f"{backend:>8} {metric.value:>24} {best:9.3f} {rate:9.1f}")
        print(header)
        for row in rows:
            print(row)
        if len(backends) == 2:
            a, b = (results[be] for be in backends)
            same = all(
                x.neighbor_indices == y.neighbor_indices for x, y in zip(a, b)
            )
            print(f"{'':>8} backends agree: {same}")
            if not same:
                failures += 1
        print()
    return failures


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=20000)
    parser.add_argument("--m", type=int, default=64)
    parser.add_argument("--r", type=int, default=10)
    parser.add_argument("--block", type=int, default=1024)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--repeats", type=int, default=1)
    parser.add_argument(
        "--metrics",
        default="euclidean,cosine_similarity,snr_distance",
        help="comma list of metric names",
    )
    args = parser.parse_args()
    metrics = [MetricKind.parse(name) for name in args.metrics.split(",")]
    return bench(args.n, args.m, args.r, args.block, args.threads, metrics, args.repeats)


if __name__ == "__main__":
    raise SystemExit(main())

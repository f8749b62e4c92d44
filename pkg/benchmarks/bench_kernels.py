#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three hot paths (split scan via full training, ensemble margin
prediction, edit distance) on both backends in one process via
``asrroute._kernels.load_backend`` and prints the speedups.  To run the
whole package on one backend instead, set ASRROUTE_BACKEND=numpy|numba
before importing anything.

Usage:
    python benchmarks/bench_kernels.py [--rows 16000] [--features 50]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from asrroute import _kernels
from asrroute.gbm import Hyperparams, train_binary, predict_proba_batch


def time_call(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_training(rows: int, features: int) -> dict[str, float]:
    rng = np.random.default_rng(0)
    X = rng.normal(size=(rows, features))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0.2).astype(float)
    hp = Hyperparams(n_rounds=20, max_depth=3)
    out = {}
    for name in available_backends():
        _swap_backend(name)
        train_binary(X[:200], y[:200], hp=Hyperparams(n_rounds=2), seed=0)  # warmup
        out[name] = time_call(lambda: train_binary(X, y, hp=hp, seed=0), repeats=2)
    return out


def bench_predict(rows: int, features: int) -> dict[str, float]:
    rng = np.random.default_rng(1)
    X = rng.normal(size=(rows, features))
    y = (X[:, 0] > 0).astype(float)
    _swap_backend("numba" if "numba" in available_backends() else "numpy")
    model = train_binary(X, y, hp=Hyperparams(n_rounds=50, max_depth=4), seed=0)
    out = {}
    for name in available_backends():
        _swap_backend(name)
        predict_proba_batch(model, X[:100])  # warmup
        out[name] = time_call(lambda: predict_proba_batch(model, X))
    return out


def bench_edit_distance(pairs: int = 2000, length: int = 60) -> dict[str, float]:
    rng = np.random.default_rng(2)
    seqs = [
        (rng.integers(0, 50, rng.integers(length // 2, length)).astype(np.int64),
         rng.integers(0, 50, rng.integers(length // 2, length)).astype(np.int64))
        for _ in range(pairs)
    ]
    out = {}
    for name in available_backends():
        impl = _kernels.load_backend(name)["edit_distance"]
        impl(seqs[0][0], seqs[0][1])  # warmup
        out[name] = time_call(lambda: [impl(a, b) for a, b in seqs])
    return out


def available_backends() -> list[str]:
    try:
        _kernels.load_backend("numba")
        return ["numpy", "numba"]
    except ImportError:
        return ["numpy"]


def _swap_backend(name: str) -> None:
    impls = _kernels.load_backend(name)
    _kernels.edit_distance = impls["edit_distance"]
    _kernels.scan_splits = impls["scan_splits"]
    _kernels.predict_margin = impls["predict_margin"]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=16000)
    parser.add_argument("--features", type=int, default=50)
    args = parser.parse_args()

    active = _kernels.BACKEND
    results = {
        f"train_binary ({args.rows}x{args.features}, 20 rounds)":
            bench_training(args.rows, args.features),
        f"predict_proba_batch ({args.rows} rows, 50 trees)":
            bench_predict(args.rows, args.features),
        "edit_distance (2000 pairs, ~60 tokens)": bench_edit_distance(),
    }
    _swap_backend(active)

    print(f"\nkernel benchmark (default backend: {active})\n")
    for label, times in results.items():
        print(label)
        for name, t in times.items():
            print(f"  {name:<6} {t * 1000:9.1f} ms")
        if "numba" in times and "numpy" in times:
            print(f"  numba speedup: {times['numpy'] / times['numba']:.1f}x")
        print()


if __name__ == "__main__":
    main()

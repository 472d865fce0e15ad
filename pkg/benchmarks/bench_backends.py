#!/usr/bin/env python3
"""Benchmark the compiled training kernels against the numpy fallback.

Times the local-training loop (the hot path of every federated round) over
a grid of shard sizes and batch sizes, plus the evaluation forward pass.

    python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from fedsim import kernels
from fedsim.kernels import pure


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_train(backend, theta, sizes, X, y, perms, batch, repeats):
    return time_call(
        lambda: backend.train_epochs(theta, sizes, X, y, perms, batch,
                                     "adam", 1e-3),
        repeats)


def bench_predict(backend, theta, sizes, X, repeats):
    return time_call(lambda: backend.predict_proba(theta, sizes, X), repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3,
                        help="timing repetitions per cell (best is kept)")
    args = parser.parse_args()

    if not kernels.HAVE_COMPILED:
        print("compiled backend not built; install with the Cython extension "
              "to compare (pip install -e . --no-build-isolation)")
        return 1
    compiled = kernels.get_backend("cython")

    rng = np.random.default_rng(0)
    hidden = (64, 64)
    feature_dim = 10
    sizes = (feature_dim, hidden[0], hidden[1], 1)
    theta = rng.normal(scale=0.2, size=pure.param_count(sizes))

    print(f"MLP {list(sizes)}, Adam, 5 epochs per call; best of {args.repeats}")
    print(f"{'workload':<28} {'pure':>10} {'cython':>10} {'speedup':>9}")
    print("-" * 60)
    for m, batch in [(200, 4), (200, 32), (2000, 4), (2000, 32), (2000, 256)]:
        X = rng.normal(size=(m, feature_dim))
        y = (rng.uniform(size=m) < 0.3).astype(np.float64)
        perms = np.stack([rng.permutation(m) for _ in range(5)]).astype(np.int64)
        t_pure = bench_train(pure, theta, sizes, X, y, perms, batch, args.repeats)
        t_comp = bench_train(compiled, theta, sizes, X, y, perms, batch,
                             args.repeats)
        label = f"train m={m} B={batch}"
        print(f"{label:<28} {t_pure*1e3:>8.1f}ms {t_comp*1e3:>8.1f}ms "
              f"{t_pure/t_comp:>8.1f}x")

    X = rng.normal(size=(20000, feature_dim))
    t_pure = bench_predict(pure, theta, sizes, X, args.repeats)
    t_comp = bench_predict(compiled, theta, sizes, X, args.repeats)
    label = "predict m=20000"
    print(f"{label:<28} {t_pure*1e3:>8.1f}ms {t_comp*1e3:>8.1f}ms "
          f"{t_pure/t_comp:>8.1f}x")

    print()
    print("end-to-end federated run (30 hospitals of 5-50 stays, B=4, "
          "E=5, R=5), seconds:")
    print(f"{'workers':<28} {'pure':>10} {'cython':>10} {'speedup':>9}")
    print("-" * 60)
    for workers in (1, 2):
        t_pure = run_federated_subprocess("python", workers)
        t_comp = run_federated_subprocess("cython", workers)
        label = f"workers={workers}"
        print(f"{label:<28} {t_pure:>9.2f}s {t_comp:>9.2f}s "
              f"{t_pure/t_comp:>8.1f}x")
    return 0


_ROUND_SNIPPET = """
import time
from fedsim.data import (SyntheticSpec, generate_synthetic,
                         partition_by_hospital, standardize, train_test_split)
from fedsim.executor import RoundExecutor
from fedsim.fedavg import FedConfig, run_federated

spec = SyntheticSpec(hospital_count=30, min_size=5, max_size=50,
                     feature_dim=10, client_shift_strength=0.5,
                     base_positive_rate=0.3, seed=13)
shards = partition_by_hospital(generate_synthetic(spec))
train_shards, test_set = train_test_split(shards, 0.3, seed=1)
train_shards, test_set, _ = standardize(train_shards, test_set)
cfg = FedConfig(local_epochs=5, client_fraction=1.0, batch_size=4,
                learning_rate=3e-3, rounds=5, seed=1)
executor = RoundExecutor(worker_count={workers})
run_federated(train_shards, cfg, test_set, executor)  # warm caches
start = time.perf_counter()
run_federated(train_shards, cfg, test_set, executor)
print(time.perf_counter() - start)
"""


def run_federated_subprocess(backend, workers):
    # Backend choice happens at import, so each timing gets its own process.
    import os
    import subprocess
    import sys

    env = dict(os.environ, FEDSIM_BACKEND=backend)
    out = subprocess.run(
        [sys.executable, "-c", _ROUND_SNIPPET.format(workers=workers)],
        env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


if __name__ == "__main__":
    raise SystemExit(main())

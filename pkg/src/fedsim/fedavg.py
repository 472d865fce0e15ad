"""Federated averaging: local training, client sampling, aggregation.

Each round: sample a client subset, train each sampled client from the
current server parameters for the configured number of local epochs
(fresh optimizer state every time), average the returned parameter
vectors, evaluate on the held-out test set.  Every random choice derives
from (seed, round, client), so a run is reproducible piecewise and
independent of executor parallelism.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fedsim import kernels
from fedsim.data import ClientShard, Dataset
from fedsim.errors import ClientDivergenceError
from fedsim.executor import RoundExecutor, TaskSpec, reduce_round
from fedsim.metrics import evaluate
from fedsim.model import MlpParams, init_params
from fedsim.seeding import derive_seed

log = logging.getLogger(__name__)

WEIGHTING_MODES = ("uniform", "size_weighted")
OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class FedConfig:
    """Knobs of one federated experiment."""

    local_epochs: int
    client_fraction: float
    batch_size: int
    learning_rate: float = 1e-4
    rounds: int = 10
    weighting: str = "uniform"
    optimizer: str = "adam"
    seed: int = 0
    hidden_sizes: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if not 0.0 < self.client_fraction <= 1.0:
            raise ValueError("client_fraction must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.weighting not in WEIGHTING_MODES:
            raise ValueError(f"weighting must be one of {WEIGHTING_MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        if len(self.hidden_sizes) != 2 or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be two positive widths")


@dataclass(frozen=True)
class RoundPlan:
    """Participants of one round and their private training seeds."""

    round_index: int
    client_ids: tuple[int, ...]
    client_seeds: tuple[int, ...]


@dataclass(frozen=True)
class RoundRecord:
    round: int
    auc: float
    loss: float
    clients: tuple[int, ...]
    duration_ms: float


@dataclass(eq=False)
class ExperimentResult:
    """Per-round evaluation trace plus the final parameters."""

    rounds: list[RoundRecord]
    final_params: MlpParams

    def auc_series(self) -> list[float]:
        return [r.auc for r in self.rounds]

    def to_jsonl(self, path, timing: bool = True) -> None:
        """One JSON object per round; timing=False omits the wall-clock field
        so result files from runs with different worker counts byte-match."""
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.rounds:
                obj = {
                    "round": rec.round,
                    "auc": rec.auc,
                    "loss": rec.loss,
                    "clients": list(rec.clients),
                }
                if timing:
                    obj["duration_ms"] = rec.duration_ms
                fh.write(json.dumps(obj) + "\n")


def client_training_seed(base_seed: int, round_index: int, client_id: int) -> int:
    """Seed for one client's local shuffles in one round."""
    return derive_seed(base_seed, "train", round_index, client_id)


def init_seed(base_seed: int) -> int:
    """Seed for the server's initial parameters."""
    return derive_seed(base_seed, "init")


def sample_clients(client_ids: Sequence[int], client_fraction: float,
                   round_index: int, seed: int) -> RoundPlan:
    """Uniform sample without replacement of max(1, round(C*N)) clients."""
    if not client_ids:
        raise ValueError("no clients to sample from")
    if not 0.0 < client_fraction <= 1.0:
        raise ValueError("client_fraction must be in (0, 1]")
    ids = sorted(client_ids)
    n = max(1, int(math.floor(client_fraction * len(ids) + 0.5)))
    rng = np.random.default_rng(derive_seed(seed, "sample", round_index))
    chosen = rng.choice(len(ids), size=n, replace=False)
    picked = tuple(ids[i] for i in chosen)
    seeds = tuple(client_training_seed(seed, round_index, cid) for cid in picked)
    return RoundPlan(round_index, picked, seeds)


def train_client(shard: ClientShard, theta: np.ndarray, cfg: FedConfig,
                 client_seed: int) -> np.ndarray:
    """Local training on one shard: E epochs of seeded-shuffle mini-batches
    starting from fresh optimizer state.  The input theta is not modified."""
    X = np.ascontiguousarray(shard.feature_matrix())
    y = shard.labels()
    m = shard.size
    rng = np.random.default_rng(client_seed)
    perms = np.stack([rng.permutation(m) for _ in range(cfg.local_epochs)]).astype(np.int64)
    d = X.shape[1]
    layer_sizes = (d, cfg.hidden_sizes[0], cfg.hidden_sizes[1], 1)
    trained = kernels.train_epochs(
        theta, layer_sizes, X, y, perms, cfg.batch_size,
        cfg.optimizer, cfg.learning_rate,
    )
    if not np.all(np.isfinite(trained)):
        raise ClientDivergenceError(shard.hospital_id)
    return trained


def aggregate(client_params: Sequence[np.ndarray], weights=None,
              mode: str = "uniform") -> np.ndarray:
    """Average parameter vectors: plain mean, or weighted by shard sizes.

    Summation follows the given order; callers wanting order-independent
    results sort by client id first (reduce_round does).
    """
    if not len(client_params):
        raise ValueError("nothing to aggregate")
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in client_params])
    if mode == "uniform":
        return stacked.mean(axis=0)
    if mode == "size_weighted":
        if weights is None:
            raise ValueError("size_weighted aggregation needs weights")
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (stacked.shape[0],):
            raise ValueError(f"{stacked.shape[0]} param vectors but {w.shape} weights")
        w = w / w.sum()
        return (w[:, None] * stacked).sum(axis=0)
    raise ValueError(f"unknown aggregation mode {mode!r}")


def run_federated(train_shards: Sequence[ClientShard], cfg: FedConfig,
                  test_set: Dataset, executor: RoundExecutor) -> ExperimentResult:
    """Run the full server loop for cfg.rounds rounds."""
    if not train_shards:
        raise ValueError("no training shards")
    if not test_set.records:
        raise ValueError("empty test set")
    labels = {rec.label for rec in test_set.records}
    if labels != {0, 1}:
        raise ValueError("test set must contain both label classes")

    shard_by_id = {s.hospital_id: s for s in train_shards}
    if len(shard_by_id) != len(train_shards):
        raise ValueError("duplicate hospital ids among training shards")
    sizes = {cid: s.size for cid, s in shard_by_id.items()}
    d = train_shards[0].records[0].features.shape[0]
    layer_sizes = (d, cfg.hidden_sizes[0], cfg.hidden_sizes[1], 1)
    theta = init_params(layer_sizes, init_seed(cfg.seed)).theta

    records: list[RoundRecord] = []
    for round_index in range(1, cfg.rounds + 1):
        started = time.perf_counter()
        plan = sample_clients(list(shard_by_id), cfg.client_fraction,
                              round_index, cfg.seed)
        tasks = [
            TaskSpec(cid, _bind_training(shard_by_id[cid], theta, cfg, cseed))
            for cid, cseed in zip(plan.client_ids, plan.client_seeds)
        ]
        results = executor.map_round(tasks, round_index=round_index)
        theta = reduce_round(results, weights=sizes, mode=cfg.weighting)
        report = evaluate(MlpParams(layer_sizes, theta), test_set)
        duration_ms = (time.perf_counter() - started) * 1000.0
        records.append(RoundRecord(
            round=round_index,
            auc=report.auc,
            loss=report.mean_loss,
            clients=tuple(sorted(plan.client_ids)),
            duration_ms=duration_ms,
        ))
        log.info("round=%d auc=%.4f loss=%.4f clients=%d",
                 round_index, report.auc, report.mean_loss, len(plan.client_ids))
    return ExperimentResult(records, MlpParams(layer_sizes, theta))


def _bind_training(shard: ClientShard, theta: np.ndarray, cfg: FedConfig,
                   client_seed: int):
    def run() -> np.ndarray:
        return train_client(shard, theta, cfg, client_seed)

    return run

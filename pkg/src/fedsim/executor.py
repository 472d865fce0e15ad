"""Deterministic fault-tolerant parallel engine for one federated round.

Map phase: run every client-training task (pure function of its immutable
inputs) with at most worker_count in flight, validating outputs and retrying
transient failures with the same seed so retries cannot change results.
Reduce phase: aggregate the surviving parameter vectors in client-id order,
which fixes the floating-point summation order regardless of scheduling.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from fedsim.errors import ClientDivergenceError, RoundExecutionError, TransientTaskError

log = logging.getLogger(__name__)

WORKERS_ENV_VAR = "FEDSIM_WORKERS"


class Dropped:
    """Marker for a client whose output was discarded this round."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "<dropped>"


DROPPED = Dropped()


@dataclass(frozen=True)
class TaskSpec:
    """One client-training task: a pure function of its bound inputs."""

    client_id: int
    run: Callable[[], np.ndarray]


@dataclass(frozen=True)
class RetryPolicy:
    """Transient failures retry (same seed); divergence drops the client."""

    max_retries: int = 2

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def resolve_worker_count(explicit: int | None = None) -> int:
    """Explicit value, else the FEDSIM_WORKERS env var, else CPU count."""
    if explicit is not None:
        if explicit < 1:
            raise ValueError("worker count must be >= 1")
        return explicit
    env = os.environ.get(WORKERS_ENV_VAR, "").strip()
    if env:
        count = int(env)
        if count < 1:
            raise ValueError(f"{WORKERS_ENV_VAR} must be >= 1, got {count}")
        return count
    return os.cpu_count() or 1


def _run_task(task: TaskSpec, policy: RetryPolicy, round_index: int,
              fault_injector) -> np.ndarray | Dropped:
    attempts = policy.max_retries + 1
    for attempt in range(attempts):
        try:
            if fault_injector is not None and fault_injector(task.client_id, attempt):
                raise TransientTaskError(f"injected fault for client {task.client_id}")
            out = task.run()
        except TransientTaskError as exc:
            log.info("round=%d client=%d event=retry attempt=%d",
                     round_index, task.client_id, attempt)
            if attempt == attempts - 1:
                raise RoundExecutionError(
                    f"client {task.client_id} failed after {attempts} attempts "
                    f"in round {round_index}: {exc}"
                ) from exc
            continue
        except ClientDivergenceError:
            log.warning("round=%d client=%d event=drop attempt=%d",
                        round_index, task.client_id, attempt)
            return DROPPED
        out = np.asarray(out, dtype=np.float64)
        if not np.all(np.isfinite(out)):
            log.warning("round=%d client=%d event=drop attempt=%d",
                        round_index, task.client_id, attempt)
            return DROPPED
        return out
    raise AssertionError("unreachable")


def map_round(tasks: Sequence[TaskSpec], worker_count: int = 1,
              policy: RetryPolicy = RetryPolicy(), round_index: int = 0,
              fault_injector: Callable[[int, int], bool] | None = None):
    """Execute all tasks, at most worker_count in flight.

    Returns [(client_id, params-or-DROPPED), ...] sorted by client id.
    Raises RoundExecutionError when a task exhausts its retries.
    """
    if not tasks:
        raise ValueError("no tasks to run")
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")
    if worker_count == 1:
        outputs = [_run_task(t, policy, round_index, fault_injector) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=worker_count) as pool:
            futures = [
                pool.submit(_run_task, t, policy, round_index, fault_injector)
                for t in tasks
            ]
            outputs = [f.result() for f in futures]
    results = list(zip((t.client_id for t in tasks), outputs))
    results.sort(key=lambda pair: pair[0])
    return results


def reduce_round(results, weights=None, mode: str = "uniform") -> np.ndarray:
    """Aggregate the non-dropped client parameters in client-id order.

    weights maps client id to shard size (required for size_weighted mode).
    """
    kept = [(cid, out) for cid, out in sorted(results, key=lambda pair: pair[0])
            if not isinstance(out, Dropped)]
    if not kept:
        raise RoundExecutionError("all clients dropped; round has no result")
    from fedsim.fedavg import aggregate

    params = [out for _, out in kept]
    if mode == "size_weighted":
        if weights is None:
            raise ValueError("size_weighted aggregation needs per-client weights")
        return aggregate(params, [weights[cid] for cid, _ in kept], mode)
    return aggregate(params, None, mode)


@dataclass
class RoundExecutor:
    """Bound worker count, retry policy, and optional fault injection."""

    worker_count: int = 1
    policy: RetryPolicy = field(default_factory=RetryPolicy)
    fault_injector: Callable[[int, int], bool] | None = None

    def map_round(self, tasks: Sequence[TaskSpec], round_index: int = 0):
        return map_round(tasks, self.worker_count, self.policy, round_index,
                         self.fault_injector)

"""Hospital cohorts selected by shard-size bounds, with size statistics.

A scenario is an inclusive [lower, upper] bracket on hospital dataset size;
its cohort is every shard whose (pre-split) size falls inside.  Cohort
statistics use the population standard deviation by default (the sample
estimator stays available for validation against reference extracts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from fedsim.data import ClientShard
from fedsim.errors import EmptyCohortError


@dataclass(frozen=True)
class ScenarioSpec:
    """Inclusive size bounds plus an optional label."""

    lower: int
    upper: int
    scenario_id: str | None = None

    def __post_init__(self):
        if self.lower < 1:
            raise ValueError(f"lower bound must be >= 1, got {self.lower}")
        if self.upper < self.lower:
            raise ValueError(
                f"upper bound {self.upper} below lower bound {self.lower}"
            )

    @property
    def label(self) -> str:
        return self.scenario_id or f"{self.lower}-{self.upper}"


# The 18 (lower, upper) size brackets used for eICU-style cohort studies.
DEFAULT_SCENARIOS: tuple[ScenarioSpec, ...] = tuple(
    ScenarioSpec(lower, upper, scenario_id=str(i + 1))
    for i, (lower, upper) in enumerate(
        [
            (10, 50), (10, 100), (10, 500), (10, 1000), (10, 5000),
            (50, 100), (50, 500), (50, 1000), (50, 5000),
            (100, 500), (100, 1000), (100, 5000),
            (500, 1000), (500, 5000),
            (1000, 5000),
            (5, 50), (5, 500), (5, 5000),
        ]
    )
)


@dataclass(eq=False)
class Cohort:
    """Shards selected by a scenario, with their size statistics."""

    shards: list[ClientShard]
    n: int
    mu: float
    sigma: float


def _size_stats(sizes, estimator: str = "population") -> tuple[int, float, float]:
    n = len(sizes)
    mu = sum(sizes) / n
    sq = sum((s - mu) ** 2 for s in sizes)
    if estimator == "population":
        sigma = math.sqrt(sq / n)
    elif estimator == "sample":
        sigma = math.sqrt(sq / (n - 1)) if n > 1 else 0.0
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    return n, mu, sigma


def build_cohort(shards, spec: ScenarioSpec) -> Cohort:
    """Select the shards sized within [lower, upper], inclusive."""
    if not shards:
        raise EmptyCohortError("no shards supplied")
    selected = [s for s in shards if spec.lower <= s.size <= spec.upper]
    if not selected:
        raise EmptyCohortError(
            f"no hospital has between {spec.lower} and {spec.upper} stays"
        )
    selected.sort(key=lambda s: s.hospital_id)
    n, mu, sigma = _size_stats([s.size for s in selected])
    return Cohort(selected, n, mu, sigma)


def cohort_stats(cohort: Cohort, estimator: str = "population") -> tuple[int, float, float]:
    """Recompute (n, mu, sigma) from the shards."""
    return _size_stats([s.size for s in cohort.shards], estimator)

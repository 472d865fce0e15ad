"""Grid sweeps over local epochs, client fraction, and batch size.

Every cell of (scenario x epochs x fraction x batch x repeat) derives its
own seed from the base seed and its coordinates, so any cell can be rerun
in isolation and reproduce its record exactly.  Completed cells append to
a JSON-lines store; rerunning a sweep skips cells already present unless
forced.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from fedsim.data import ClientShard, standardize, train_test_split
from fedsim.errors import EmptyCohortError, FedsimError
from fedsim.executor import RoundExecutor
from fedsim.fedavg import FedConfig, run_federated
from fedsim.scenarios import ScenarioSpec, build_cohort
from fedsim.seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HoldoutPolicy:
    """How each scenario's held-out test set is produced."""

    test_fraction: float = 0.3
    seed: int = 0
    standardize: bool = True


@dataclass(frozen=True)
class SweepGrid:
    epoch_values: tuple[int, ...]
    fraction_values: tuple[float, ...]
    batch_values: tuple[int, ...]
    scenarios: tuple[ScenarioSpec, ...]
    repeats: int
    base_config: FedConfig
    base_seed: int

    def __post_init__(self):
        if not (self.epoch_values and self.fraction_values and self.batch_values
                and self.scenarios):
            raise ValueError("all grid axes must be nonempty")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def cells(self):
        for scenario in self.scenarios:
            for epochs in self.epoch_values:
                for fraction in self.fraction_values:
                    for batch in self.batch_values:
                        for repeat in range(self.repeats):
                            yield scenario, epochs, fraction, batch, repeat


@dataclass(frozen=True)
class SweepRecord:
    scenario: str
    epochs: int
    client_fraction: float
    batch_size: int
    repeat: int
    auc_series: tuple[float, ...]
    final_auc: float

    @property
    def key(self):
        return (self.scenario, self.epochs, self.client_fraction,
                self.batch_size, self.repeat)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self) | {"auc_series": list(self.auc_series)})

    @classmethod
    def from_json(cls, line: str) -> "SweepRecord":
        obj = json.loads(line)
        return cls(
            scenario=obj["scenario"],
            epochs=int(obj["epochs"]),
            client_fraction=float(obj["client_fraction"]),
            batch_size=int(obj["batch_size"]),
            repeat=int(obj["repeat"]),
            auc_series=tuple(obj["auc_series"]),
            final_auc=float(obj["final_auc"]),
        )


def cell_seed(base_seed: int, scenario_label: str, epochs: int,
              fraction: float, batch: int, repeat: int) -> int:
    return derive_seed(base_seed, "cell", scenario_label, epochs, fraction,
                       batch, repeat)


def load_store(path) -> list[SweepRecord]:
    """All records in the store, in append order (forced reruns duplicate
    a cell's coordinates; dedupe() keeps the latest)."""
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(SweepRecord.from_json(line))
    return records


def dedupe(records: Sequence[SweepRecord]) -> list[SweepRecord]:
    """Latest record per cell coordinates, in first-seen order."""
    latest = {rec.key: rec for rec in records}
    seen = set()
    ordered = []
    for rec in records:
        if rec.key not in seen:
            seen.add(rec.key)
            ordered.append(latest[rec.key])
    return ordered


def _prepare_scenario(shards: Sequence[ClientShard], scenario: ScenarioSpec,
                      policy: HoldoutPolicy, base_seed: int):
    cohort = build_cohort(list(shards), scenario)
    split_seed = derive_seed(base_seed, "split", scenario.label, policy.seed)
    train_shards, test_set = train_test_split(cohort.shards,
                                              policy.test_fraction, split_seed)
    if policy.standardize:
        train_shards, test_set, _ = standardize(train_shards, test_set)
    return train_shards, test_set


def run_cell(shards: Sequence[ClientShard], scenario: ScenarioSpec,
             epochs: int, fraction: float, batch: int, repeat: int,
             policy: HoldoutPolicy, base_config: FedConfig, base_seed: int,
             executor: RoundExecutor,
             prepared=None) -> SweepRecord:
    """Run one grid cell from scratch (or from a prepared scenario split)."""
    if prepared is None:
        prepared = _prepare_scenario(shards, scenario, policy, base_seed)
    train_shards, test_set = prepared
    cfg = dataclasses.replace(
        base_config,
        local_epochs=epochs,
        client_fraction=fraction,
        batch_size=batch,
        seed=cell_seed(base_seed, scenario.label, epochs, fraction, batch, repeat),
    )
    result = run_federated(train_shards, cfg, test_set, executor)
    series = tuple(result.auc_series())
    return SweepRecord(scenario.label, epochs, fraction, batch, repeat,
                       series, series[-1])


def run_sweep(grid: SweepGrid, shards: Sequence[ClientShard],
              policy: HoldoutPolicy, executor: RoundExecutor,
              store_path, force: bool = False,
              strict: bool = True) -> list[SweepRecord]:
    """Run the full grid, appending each completed cell to the store.

    Cells whose coordinates already exist in the store are skipped (their
    stored records are returned) unless force is set.  Scenarios with no
    hospital in range are skipped with a warning; if every scenario is
    empty the sweep fails.  With strict=False a failing cell is logged and
    the sweep continues (the cell is then missing from the result).
    """
    store_path = Path(store_path)
    existing = {} if force else {rec.key: rec for rec in load_store(store_path)}

    prepared: dict[str, tuple] = {}
    skipped_scenarios: set[str] = set()
    for scenario in grid.scenarios:
        try:
            prepared[scenario.label] = _prepare_scenario(
                shards, scenario, policy, grid.base_seed)
        except EmptyCohortError as exc:
            log.warning("scenario %s skipped: %s", scenario.label, exc)
            skipped_scenarios.add(scenario.label)
    if not prepared:
        raise FedsimError("every scenario produced an empty cohort")

    records: list[SweepRecord] = []
    with open(store_path, "a", encoding="utf-8") as store:
        for scenario, epochs, fraction, batch, repeat in grid.cells():
            if scenario.label in skipped_scenarios:
                continue
            key = (scenario.label, epochs, fraction, batch, repeat)
            if key in existing:
                log.info("cell %s already in store, skipping", key)
                records.append(existing[key])
                continue
            try:
                record = run_cell(shards, scenario, epochs, fraction, batch,
                                  repeat, policy, grid.base_config,
                                  grid.base_seed, executor,
                                  prepared[scenario.label])
            except FedsimError as exc:
                if strict:
                    raise
                log.error("cell %s failed: %s", key, exc)
                continue
            store.write(record.to_json() + "\n")
            store.flush()
            records.append(record)
    return records


LONG_HEADER = ["scenario", "E", "C", "B", "repeat", "round", "auc"]


def emit_report(records: Sequence[SweepRecord], group_by: str,
                long_path, summary_path) -> None:
    """Write the long-format round/AUC table and a grouped summary.

    group_by "E" groups final AUC by (scenario, E); "BC" by (scenario, B, C).
    Means are taken across repeats (and any other axes inside the group).
    """
    if not records:
        raise ValueError("no records to report")
    with open(long_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LONG_HEADER)
        for rec in records:
            for round_index, auc in enumerate(rec.auc_series, start=1):
                writer.writerow([rec.scenario, rec.epochs, rec.client_fraction,
                                 rec.batch_size, rec.repeat, round_index, auc])

    if group_by == "E":
        key_fields = ["scenario", "E"]
        key_fn = lambda r: (r.scenario, r.epochs)
    elif group_by == "BC":
        key_fields = ["scenario", "B", "C"]
        key_fn = lambda r: (r.scenario, r.batch_size, r.client_fraction)
    else:
        raise ValueError(f"group_by must be 'E' or 'BC', got {group_by!r}")

    groups: dict[tuple, list[float]] = {}
    for rec in records:
        groups.setdefault(key_fn(rec), []).append(rec.final_auc)
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(key_fields + ["mean_final_auc", "n_runs"])
        for key in sorted(groups):
            values = groups[key]
            writer.writerow(list(key) + [sum(values) / len(values), len(values)])

"""Command-line entry point.

One YAML config file drives every subcommand; flags only override single
keys (worker count, base seed, forced sweep reruns) so the config stays
the reproducibility record of an experiment.

Subcommands:
    generate   write a synthetic dataset CSV
    scenario   print cohort statistics per size bracket as CSV
    train      run one federated experiment, persist results + checkpoint
    sweep      run a hyper-parameter grid and emit report CSVs
    report     re-emit report CSVs from an existing sweep store
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import yaml

from fedsim import sweep as sweep_mod
from fedsim.data import (SyntheticSpec, generate_synthetic, load_csv,
                         partition_by_hospital, save_csv, standardize,
                         train_test_split)
from fedsim.errors import ConfigError, EmptyCohortError, FedsimError
from fedsim.executor import RoundExecutor, resolve_worker_count
from fedsim.fedavg import FedConfig, run_federated
from fedsim.model import save_checkpoint
from fedsim.scenarios import DEFAULT_SCENARIOS, ScenarioSpec, build_cohort
from fedsim.sweep import SweepGrid, HoldoutPolicy, dedupe, emit_report, load_store, run_sweep

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Validated contents of one config file."""

    csv_path: Path | None
    csv_schema: tuple[str, ...] | None
    synthetic: SyntheticSpec | None
    test_policy: HoldoutPolicy
    scenarios: tuple[ScenarioSpec, ...]
    federated: FedConfig
    train_scenario: str | None
    sweep_epochs: tuple[int, ...]
    sweep_fractions: tuple[float, ...]
    sweep_batches: tuple[int, ...]
    sweep_repeats: int
    sweep_scenarios: tuple[ScenarioSpec, ...]
    report_group_by: str
    workers: int | None
    out_dir: Path
    out_dataset: str
    out_experiment: str
    out_checkpoint: str
    checkpoint_format: str
    out_store: str
    out_long: str
    out_summary: str
    timing: bool


def _check_keys(mapping: dict, allowed: set[str], context: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown key {unknown[0]!r}")


def _as_mapping(obj, context: str) -> dict:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{context}: expected a mapping, got {type(obj).__name__}")
    return obj


def _parse_scenarios(raw, context: str) -> tuple[ScenarioSpec, ...]:
    if raw is None or raw == "default":
        return DEFAULT_SCENARIOS
    if not isinstance(raw, list):
        raise ConfigError(f"{context}: expected 'default' or a list")
    specs = []
    for i, item in enumerate(raw):
        item = _as_mapping(item, f"{context}[{i}]")
        _check_keys(item, {"label", "lower", "upper"}, f"{context}[{i}]")
        try:
            specs.append(ScenarioSpec(int(item["lower"]), int(item["upper"]),
                                      scenario_id=item.get("label")))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{context}[{i}]: {exc}") from exc
    return tuple(specs)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    raw = _as_mapping(raw, "config")
    _check_keys(raw, {"dataset", "split", "scenarios", "federated", "sweep",
                      "report", "workers", "output"}, "config")

    dataset = _as_mapping(raw.get("dataset"), "dataset")
    _check_keys(dataset, {"csv", "schema", "synthetic"}, "dataset")
    csv_path = Path(dataset["csv"]) if "csv" in dataset else None
    csv_schema = tuple(dataset["schema"]) if "schema" in dataset else None
    synthetic = None
    if "synthetic" in dataset:
        syn = _as_mapping(dataset["synthetic"], "dataset.synthetic")
        _check_keys(syn, {"hospitals", "min_size", "max_size", "features",
                          "shift_strength", "positive_rate", "seed"},
                    "dataset.synthetic")
        try:
            synthetic = SyntheticSpec(
                hospital_count=int(syn.get("hospitals", 20)),
                min_size=int(syn.get("min_size", 50)),
                max_size=int(syn.get("max_size", 500)),
                feature_dim=int(syn.get("features", 10)),
                client_shift_strength=float(syn.get("shift_strength", 0.5)),
                base_positive_rate=float(syn.get("positive_rate", 0.3)),
                seed=int(syn.get("seed", 0)),
            )
        except ValueError as exc:
            raise ConfigError(f"dataset.synthetic: {exc}") from exc
    if csv_path is not None and synthetic is not None:
        raise ConfigError("dataset: give either 'csv' or 'synthetic', not both")

    split = _as_mapping(raw.get("split"), "split")
    _check_keys(split, {"test_fraction", "seed", "standardize"}, "split")
    try:
        test_policy = HoldoutPolicy(
            test_fraction=float(split.get("test_fraction", 0.3)),
            seed=int(split.get("seed", 0)),
            standardize=bool(split.get("standardize", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"split: {exc}") from exc

    scenarios = _parse_scenarios(raw.get("scenarios"), "scenarios")

    fed = _as_mapping(raw.get("federated"), "federated")
    _check_keys(fed, {"local_epochs", "client_fraction", "batch_size",
                      "learning_rate", "rounds", "weighting", "optimizer",
                      "seed", "hidden", "scenario"}, "federated")
    hidden = fed.get("hidden", [64, 64])
    if not (isinstance(hidden, list) and len(hidden) == 2):
        raise ConfigError("federated.hidden: expected two widths")
    try:
        federated = FedConfig(
            local_epochs=int(fed.get("local_epochs", 1)),
            client_fraction=float(fed.get("client_fraction", 1.0)),
            batch_size=int(fed.get("batch_size", 32)),
            learning_rate=float(fed.get("learning_rate", 1e-4)),
            rounds=int(fed.get("rounds", 10)),
            weighting=str(fed.get("weighting", "uniform")),
            optimizer=str(fed.get("optimizer", "adam")),
            seed=int(fed.get("seed", 0)),
            hidden_sizes=(int(hidden[0]), int(hidden[1])),
        )
    except ValueError as exc:
        raise ConfigError(f"federated: {exc}") from exc
    train_scenario = fed.get("scenario")

    swp = _as_mapping(raw.get("sweep"), "sweep")
    _check_keys(swp, {"local_epochs", "client_fractions", "batch_sizes",
                      "repeats", "scenarios"}, "sweep")
    sweep_epochs = tuple(int(v) for v in swp.get("local_epochs", [1, 5, 10, 20]))
    sweep_fractions = tuple(float(v) for v in
                            swp.get("client_fractions", [0.2, 0.4, 0.6, 0.8, 1.0]))
    sweep_batches = tuple(int(v) for v in swp.get("batch_sizes", [4, 16, 32, 64]))
    sweep_repeats = int(swp.get("repeats", 1))
    sweep_scenarios = (_parse_scenarios(swp["scenarios"], "sweep.scenarios")
                       if "scenarios" in swp else scenarios)

    rep = _as_mapping(raw.get("report"), "report")
    _check_keys(rep, {"group_by"}, "report")
    report_group_by = str(rep.get("group_by", "E"))
    if report_group_by not in ("E", "BC"):
        raise ConfigError("report.group_by: expected 'E' or 'BC'")

    workers = raw.get("workers")
    if workers is not None:
        workers = int(workers)
        if workers < 1:
            raise ConfigError("workers: must be >= 1")

    out = _as_mapping(raw.get("output"), "output")
    _check_keys(out, {"dir", "dataset_csv", "experiment", "checkpoint",
                      "checkpoint_format", "store", "long_report",
                      "summary_report", "timing"}, "output")
    checkpoint_format = str(out.get("checkpoint_format", "binary"))
    if checkpoint_format not in ("binary", "json"):
        raise ConfigError("output.checkpoint_format: expected 'binary' or 'json'")

    return RunConfig(
        csv_path=csv_path,
        csv_schema=csv_schema,
        synthetic=synthetic,
        test_policy=test_policy,
        scenarios=scenarios,
        federated=federated,
        train_scenario=train_scenario,
        sweep_epochs=sweep_epochs,
        sweep_fractions=sweep_fractions,
        sweep_batches=sweep_batches,
        sweep_repeats=sweep_repeats,
        sweep_scenarios=sweep_scenarios,
        report_group_by=report_group_by,
        workers=workers,
        out_dir=Path(out.get("dir", "results")),
        out_dataset=str(out.get("dataset_csv", "synthetic.csv")),
        out_experiment=str(out.get("experiment", "experiment.jsonl")),
        out_checkpoint=str(out.get("checkpoint", "model.ckpt")),
        checkpoint_format=checkpoint_format,
        out_store=str(out.get("store", "sweep.jsonl")),
        out_long=str(out.get("long_report", "rounds.csv")),
        out_summary=str(out.get("summary_report", "summary.csv")),
        timing=bool(out.get("timing", True)),
    )


def _load_dataset(cfg: RunConfig):
    if cfg.synthetic is not None:
        return generate_synthetic(cfg.synthetic)
    if cfg.csv_path is not None:
        return load_csv(cfg.csv_path, cfg.csv_schema)
    raise ConfigError("dataset: either 'csv' or 'synthetic' is required")


def _executor(cfg: RunConfig, args) -> RoundExecutor:
    explicit = args.workers if args.workers is not None else cfg.workers
    return RoundExecutor(worker_count=resolve_worker_count(explicit))


def _fed_config(cfg: RunConfig, args) -> FedConfig:
    if args.seed is not None:
        import dataclasses
        return dataclasses.replace(cfg.federated, seed=args.seed)
    return cfg.federated


def cmd_generate(cfg: RunConfig, args) -> int:
    if cfg.synthetic is None:
        raise ConfigError("generate needs a dataset.synthetic section")
    dataset = generate_synthetic(cfg.synthetic)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out_path = cfg.out_dir / cfg.out_dataset
    save_csv(out_path, dataset)
    hospitals = len({r.hospital_id for r in dataset.records})
    print(f"wrote {len(dataset)} records across {hospitals} hospitals to {out_path}")
    return 0


def cmd_scenario(cfg: RunConfig, args) -> int:
    dataset = _load_dataset(cfg)
    shards = partition_by_hospital(dataset)
    writer = sys.stdout
    writer.write("scenario,lower,upper,n,mu,sigma\n")
    for spec in cfg.scenarios:
        try:
            cohort = build_cohort(shards, spec)
            writer.write(f"{spec.label},{spec.lower},{spec.upper},"
                         f"{cohort.n},{cohort.mu:.2f},{cohort.sigma:.2f}\n")
        except EmptyCohortError:
            log.warning("scenario %s: no hospitals in [%d, %d]",
                        spec.label, spec.lower, spec.upper)
            writer.write(f"{spec.label},{spec.lower},{spec.upper},0,,\n")
    return 0


def _training_inputs(cfg: RunConfig):
    dataset = _load_dataset(cfg)
    shards = partition_by_hospital(dataset)
    if cfg.train_scenario is not None:
        matches = [s for s in cfg.scenarios if s.label == str(cfg.train_scenario)]
        if not matches:
            raise ConfigError(f"federated.scenario: no scenario labelled "
                              f"{cfg.train_scenario!r}")
        shards = build_cohort(shards, matches[0]).shards
    train_shards, test_set = train_test_split(
        shards, cfg.test_policy.test_fraction, cfg.test_policy.seed)
    if cfg.test_policy.standardize:
        train_shards, test_set, _ = standardize(train_shards, test_set)
    return train_shards, test_set


def cmd_train(cfg: RunConfig, args) -> int:
    train_shards, test_set = _training_inputs(cfg)
    fed = _fed_config(cfg, args)
    result = run_federated(train_shards, fed, test_set, _executor(cfg, args))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    result_path = cfg.out_dir / cfg.out_experiment
    result.to_jsonl(result_path, timing=cfg.timing)
    ckpt_path = cfg.out_dir / cfg.out_checkpoint
    save_checkpoint(ckpt_path, result.final_params, fmt=cfg.checkpoint_format)
    final = result.rounds[-1]
    print(f"final round {final.round}: auc={final.auc:.4f} loss={final.loss:.4f}")
    print(f"results: {result_path}\ncheckpoint: {ckpt_path}")
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    dataset = _load_dataset(cfg)
    shards = partition_by_hospital(dataset)
    base_seed = args.seed if args.seed is not None else cfg.federated.seed
    grid = SweepGrid(
        epoch_values=cfg.sweep_epochs,
        fraction_values=cfg.sweep_fractions,
        batch_values=cfg.sweep_batches,
        scenarios=cfg.sweep_scenarios,
        repeats=cfg.sweep_repeats,
        base_config=cfg.federated,
        base_seed=base_seed,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    store_path = cfg.out_dir / cfg.out_store
    records = run_sweep(grid, shards, cfg.test_policy, _executor(cfg, args),
                        store_path, force=args.force, strict=False)
    emit_report(records, cfg.report_group_by,
                cfg.out_dir / cfg.out_long, cfg.out_dir / cfg.out_summary)
    # Empty-cohort scenarios are skips, not failures; anything else missing is.
    populated = set()
    for spec in cfg.sweep_scenarios:
        try:
            build_cohort(shards, spec)
            populated.add(spec.label)
        except EmptyCohortError:
            pass
    runnable = sum(1 for cell in grid.cells() if cell[0].label in populated)
    print(f"sweep complete: {len(records)} of {runnable} runnable cells recorded "
          f"(store: {store_path})")
    return 0 if len(records) == runnable else 1


def cmd_report(cfg: RunConfig, args) -> int:
    store_path = cfg.out_dir / cfg.out_store
    records = dedupe(load_store(store_path))
    if not records:
        log.error("no sweep records found at %s", store_path)
        return 1
    group_by = args.group_by or cfg.report_group_by
    emit_report(records, group_by,
                cfg.out_dir / cfg.out_long, cfg.out_dir / cfg.out_summary)
    print(f"report written: {cfg.out_dir / cfg.out_long}, "
          f"{cfg.out_dir / cfg.out_summary}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__)
    parser.add_argument("--config", "-c", required=True, help="YAML config file")
    parser.add_argument("--workers", type=int, default=None,
                        help="parallel client-training workers "
                             "(overrides config and FEDSIM_WORKERS)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the experiment base seed")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="write a synthetic dataset CSV")
    sub.add_parser("scenario", help="print cohort size statistics as CSV")
    sub.add_parser("train", help="run one federated experiment")
    p_sweep = sub.add_parser("sweep", help="run the hyper-parameter grid")
    p_sweep.add_argument("--force", action="store_true",
                         help="rerun cells already present in the store")
    p_report = sub.add_parser("report", help="emit report CSVs from the store")
    p_report.add_argument("--group-by", choices=("E", "BC"), default=None)
    return parser


_COMMANDS = {
    "generate": cmd_generate,
    "scenario": cmd_scenario,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if not hasattr(args, "force"):
        args.force = False
    if not hasattr(args, "group_by"):
        args.group_by = None
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, FedsimError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())

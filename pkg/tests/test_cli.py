import json

import pytest
import yaml

from fedsim.cli import main
from fedsim.data import load_csv

SYNTH = {
    "hospitals": 6,
    "min_size": 15,
    "max_size": 40,
    "features": 4,
    "shift_strength": 0.5,
    "positive_rate": 0.35,
    "seed": 3,
}


def write_config(tmp_path, name="config.yaml", **sections):
    base = {
        "dataset": {"synthetic": dict(SYNTH)},
        "split": {"test_fraction": 0.3, "seed": 1},
        "federated": {
            "local_epochs": 1,
            "client_fraction": 1.0,
            "batch_size": 16,
            "learning_rate": 0.003,
            "rounds": 3,
            "seed": 5,
            "hidden": [8, 8],
        },
        "output": {"dir": str(tmp_path / "out")},
    }
    base.update(sections)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(base), encoding="utf-8")
    return path


def test_generate_writes_expected_hospital_count(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["--config", str(config), "generate"]) == 0
    out_csv = tmp_path / "out" / "synthetic.csv"
    dataset = load_csv(out_csv)
    assert len({r.hospital_id for r in dataset.records}) == 6
    assert "6 hospitals" in capsys.readouterr().out


def test_generate_byte_identical_reruns(tmp_path):
    config = write_config(tmp_path)
    main(["--config", str(config), "generate"])
    first = (tmp_path / "out" / "synthetic.csv").read_bytes()
    main(["--config", str(config), "generate"])
    assert (tmp_path / "out" / "synthetic.csv").read_bytes() == first


def test_unknown_config_key_names_it(tmp_path, caplog):
    config = write_config(tmp_path, federated={"local_epochs": 1,
                                               "batchsize": 16})
    code = main(["--config", str(config), "generate"])
    assert code == 2
    assert "batchsize" in caplog.text


def test_invalid_scenario_bounds_fail_validation(tmp_path, caplog):
    config = write_config(tmp_path,
                          scenarios=[{"label": "bad", "lower": 9, "upper": 2}])
    assert main(["--config", str(config), "scenario"]) == 2
    assert "scenarios[0]" in caplog.text


def test_scenario_counts_whole_range(tmp_path, capsys):
    config = write_config(
        tmp_path, scenarios=[{"label": "everything", "lower": 1, "upper": 10000}])
    assert main(["--config", str(config), "scenario"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "scenario,lower,upper,n,mu,sigma"
    fields = lines[1].split(",")
    assert fields[0] == "everything"
    assert fields[3] == "6"


def test_scenario_empty_bracket_emits_zero_row(tmp_path, capsys, caplog):
    config = write_config(
        tmp_path, scenarios=[{"label": "none", "lower": 5000, "upper": 6000}])
    assert main(["--config", str(config), "scenario"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[1].startswith("none,5000,6000,0,")
    assert "no hospitals" in caplog.text


def test_train_writes_round_lines_and_checkpoint(tmp_path):
    config = write_config(tmp_path)
    assert main(["--config", str(config), "train"]) == 0
    rounds = (tmp_path / "out" / "experiment.jsonl").read_text().splitlines()
    assert len(rounds) == 3
    payload = json.loads(rounds[0])
    assert payload["round"] == 1
    assert 0.0 <= payload["auc"] <= 1.0
    from fedsim.model import load_checkpoint
    params = load_checkpoint(tmp_path / "out" / "model.ckpt")
    assert params.layer_sizes == (4, 8, 8, 1)


def test_train_worker_count_does_not_change_results(tmp_path):
    config = write_config(tmp_path, output={"dir": str(tmp_path / "out"),
                                            "timing": False})
    main(["--config", str(config), "--workers", "1", "train"])
    one = (tmp_path / "out" / "experiment.jsonl").read_bytes()
    main(["--config", str(config), "--workers", "8", "train"])
    eight = (tmp_path / "out" / "experiment.jsonl").read_bytes()
    assert one == eight


def test_train_scenario_filter_unknown_label(tmp_path, caplog):
    config = write_config(tmp_path, federated={"local_epochs": 1,
                                               "client_fraction": 1.0,
                                               "batch_size": 16,
                                               "scenario": "missing"})
    assert main(["--config", str(config), "train"]) == 2
    assert "missing" in caplog.text


def test_sweep_and_report_end_to_end(tmp_path, capsys):
    config = write_config(
        tmp_path,
        scenarios=[{"label": "all", "lower": 1, "upper": 10000}],
        sweep={"local_epochs": [1, 2], "client_fractions": [1.0],
               "batch_sizes": [16], "repeats": 2},
        report={"group_by": "E"},
    )
    assert main(["--config", str(config), "sweep"]) == 0
    out = tmp_path / "out"
    store_lines = (out / "sweep.jsonl").read_text().splitlines()
    assert len(store_lines) == 4
    long_lines = (out / "rounds.csv").read_text().splitlines()
    assert len(long_lines) == 1 + 4 * 3
    assert "sweep complete: 4 of 4" in capsys.readouterr().out

    # Resume: nothing new is appended.
    assert main(["--config", str(config), "sweep"]) == 0
    assert len((out / "sweep.jsonl").read_text().splitlines()) == 4

    # Re-grouped report from the same store.
    assert main(["--config", str(config), "report", "--group-by", "BC"]) == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "scenario,B,C,mean_final_auc,n_runs"


def test_report_without_store_fails(tmp_path, caplog):
    config = write_config(tmp_path)
    assert main(["--config", str(config), "report"]) == 1
    assert "no sweep records" in caplog.text


def test_missing_config_file(tmp_path, caplog):
    assert main(["--config", str(tmp_path / "nope.yaml"), "generate"]) == 2


def test_config_rejects_both_dataset_sources(tmp_path, caplog):
    config = write_config(tmp_path,
                          dataset={"csv": "x.csv", "synthetic": dict(SYNTH)})
    assert main(["--config", str(config), "generate"]) == 2
    assert "not both" in caplog.text


def test_csv_dataset_roundtrip_through_cli(tmp_path):
    gen_config = write_config(tmp_path)
    main(["--config", str(gen_config), "generate"])
    csv_path = tmp_path / "out" / "synthetic.csv"
    train_config = write_config(
        tmp_path, name="train.yaml",
        dataset={"csv": str(csv_path)},
        output={"dir": str(tmp_path / "out2")},
    )
    assert main(["--config", str(train_config), "train"]) == 0
    assert (tmp_path / "out2" / "experiment.jsonl").exists()

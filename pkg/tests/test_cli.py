import json
import shutil

import pytest

from movement_rhythms.cli import RunConfig, main

SIM = {"n_participants": 20, "start": "2021-09-01", "end": "2021-12-31"}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "sim.json"
    cfg.write_text(json.dumps({"simulate": SIM, "bootstrap_replicates": 100}))
    assert main(["--config", str(cfg), "--out", str(root / "sim"), "--seed", "7", "simulate"]) == 0
    return root / "sim"


def run(sim_dir, out, *args):
    return main(["--config", str(sim_dir / "run_config.json"), "--out", str(out), *args])


def test_simulate_writes_inputs_and_config(sim_dir):
    for name in ("steps.csv", "demographics.csv", "survey.csv", "stringency.csv", "ground_truth.json",
                 "run_config.json"):
        assert (sim_dir / name).is_file()
    cfg = RunConfig.load(sim_dir / "run_config.json")
    assert cfg.simulate["n_participants"] == 20 and cfg.seed == 7


def test_config_round_trip(tmp_path):
    cfg = RunConfig(models={"mine": "long_we ~ age, group = participant"}, study_span=["2021-07-01", "2022-06-30"])
    assert RunConfig.from_dict(json.loads(cfg.dumps())) == cfg


def test_ingest_check(sim_dir, tmp_path, capsys):
    assert run(sim_dir, tmp_path, "ingest-check") == 0
    bad = tmp_path / "bad"
    shutil.copytree(sim_dir, bad)
    with open(bad / "steps.csv", "a") as fh:
        fh.write("p001,2021-09-01,25,4\n")
    assert main(["--config", str(bad / "run_config.json"), "ingest-check"]) == 1
    assert "hour 25" in capsys.readouterr().out


def test_consistency_and_fit_are_deterministic(sim_dir, tmp_path):
    outs = []
    for i, workers in enumerate((1, 2, 1)):
        out = tmp_path / f"run{i}"
        assert run(sim_dir, out, "--workers", str(workers), "consistency") == 0
        assert run(sim_dir, out, "--workers", str(workers), "fit", "1b") == 0
        outs.append(out)
    for name in ("consistency.csv", "monthly.csv", "audit.csv", "fit_1b.json", "fit_1b.md"):
        blobs = {(o / name).read_bytes() for o in outs}
        assert len(blobs) == 1, name


def test_fit_reports(sim_dir, tmp_path):
    assert run(sim_dir, tmp_path, "fit", "3") == 0
    md = (tmp_path / "fit_3.md").read_text()
    assert "| long_wd |" in md and "τ00 (month)" in md
    assert run(sim_dir, tmp_path, "fit", "long_we ~ age + role, group = participant") == 0
    assert json.loads((tmp_path / "fit_custom.json").read_text())["formula"].startswith("long_we ~")


def test_unknown_model_exit_code(sim_dir, tmp_path, capsys):
    assert run(sim_dir, tmp_path, "fit", "9") == 1
    assert "1a, 1b, 2, 3, custom" in capsys.readouterr().err


def test_empty_dataset(sim_dir, tmp_path, capsys):
    cfg = json.loads((sim_dir / "run_config.json").read_text())
    cfg.update(study_span=["2019-01-01", "2023-12-31"],
               **{k: str(sim_dir / cfg[k]) for k in ("steps", "demographics", "survey", "stringency")})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["--config", str(path), "--out", str(tmp_path), "consistency"]) == 1
    assert "empty dataset" in capsys.readouterr().err


def test_compare_and_stringency(sim_dir, tmp_path):
    assert run(sim_dir, tmp_path, "compare") == 0
    assert (tmp_path / "compare_stages.csv").is_file() and (tmp_path / "compare_groups.csv").is_file()
    assert run(sim_dir, tmp_path, "stringency") == 0
    report = json.loads((tmp_path / "stringency_correlation.json").read_text())
    assert set(report) == {"1b_month", "3"}
    header = (tmp_path / "segmentation_monthly.csv").read_text().splitlines()[0]
    assert header == "year_month,k4,k6,k8,k12"


def test_rank_test_command(tmp_path, capsys):
    csv = tmp_path / "t.csv"
    csv.write_text("a,b\n1,3\n2,4\n")
    assert main(["test", str(csv), "a", "b"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "statistic\tp\tmethod\tn" and out[1].startswith("0\t0.333333\texact")


def test_bad_config(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"epsilon": -1}))
    assert main(["--config", str(path), "consistency"]) == 1
    path.write_text(json.dumps({"nonsense": 1}))
    assert main(["--config", str(path), "consistency"]) == 1
    assert main(["--config", str(tmp_path / "missing.json"), "consistency"]) == 1

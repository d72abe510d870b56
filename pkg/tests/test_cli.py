import json
from pathlib import Path

import pytest

from multifamm.artifacts import read_csv
from multifamm.cli import main

ROOT = Path(__file__).resolve().parent.parent
TOY_DIR = ROOT / "data" / "toy"
SAMPLE = ROOT / "data" / "trajectory_sample.csv"


def test_print_defaults(capsys):
    assert main(["config", "--defaults"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["step1"]["truncation"] == "TV"
    assert printed["step2"]["scedasticity"] == "per-dimension"


def test_config_errors(tmp_path):
    assert main(["config", "--config", str(tmp_path / "absent.json")]) == 2
    assert main(["fit", "--config", str(tmp_path / "absent.json"), "--output", str(tmp_path)]) == 2
    assert main(["fit", "--output", str(tmp_path)]) == 2
    assert main(["fit", "--jobs", "0", "--output", str(tmp_path)]) == 2


def test_missing_data_file(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"data": {"points_file": "nope.csv", "meta_file": "nope_meta.csv"}}))
    assert main(["fit", "--config", str(config), "--output", str(tmp_path / "out")]) == 3
    assert (tmp_path / "out" / "run.log").exists()


def test_coarsen_sample(tmp_path):
    kept_csv = tmp_path / "kept.csv"
    code = main(["coarsen", "--input", str(SAMPLE), "--lead-dims", "hand.x,hand.y",
                 "--target-size", "20", "--output", str(kept_csv)])
    assert code == 0
    kept = read_csv(kept_csv)
    counts = kept.groupby(["curve_id", "dim"]).size()
    assert (counts == 20).all()
    assert set(kept["dim"]) == {"hand.x", "hand.y", "elbow.x"}

    report = read_csv(tmp_path / "coarsen_report.csv")
    assert report["n_before"].tolist() == [150, 150, 150]
    assert (report["stop_reason"] == "target_size").all()
    assert (tmp_path / "run.log").exists()


def test_coarsen_relative_threshold(tmp_path):
    kept_csv = tmp_path / "kept.csv"
    code = main(["coarsen", "--input", str(SAMPLE), "--lead-dims", "hand.x,hand.y",
                 "--rstar", "0.003", "--output", str(kept_csv), "--seed", "7"])
    assert code == 0
    report = read_csv(tmp_path / "coarsen_report.csv")
    assert (report["relative_loss"] <= 0.003).all()
    assert (report["n_after"] <= 0.5 * report["n_before"]).all()

    header = kept_csv.read_text().splitlines()[:3]
    assert header[0].startswith("# config_hash=")
    assert header[1] == "# seed=7"
    assert header[2] == "curve_id,dim,t,y"


def test_coarsen_unknown_lead_dim(tmp_path):
    assert main(["coarsen", "--input", str(SAMPLE), "--lead-dims", "knee.x", "--target-size", "5",
                 "--output", str(tmp_path / "kept.csv")]) == 3


@pytest.mark.slow
def test_fit_toy(tmp_path):
    out = tmp_path / "toy"
    assert main(["fit", "--config", str(TOY_DIR / "config.json"), "--output", str(out)]) == 0
    for name in ("model_fit.json", "step1.json", "variance_table.csv", "scalar_intercepts.csv",
                 "effects/x1__dim2.csv", "manifest.json"):
        assert (out / name).exists(), name
    fit = json.loads((out / "model_fit.json").read_text())
    assert fit["data"]["summary"]["n_curves"] == 48
    table = read_csv(out / "variance_table.csv").set_index("row")
    assert table.loc["pi", "Total"] >= 0.95 - 1e-9


def test_coarsen_zero_threshold_keeps_everything(tmp_path):
    assert main(["coarsen", "--input", str(SAMPLE), "--lead-dims", "hand.x,hand.y",
                 "--rstar", "0", "--output", str(tmp_path / "kept.csv")]) == 0
    report = read_csv(tmp_path / "coarsen_report.csv")
    assert (report["n_after"] == report["n_before"]).all()


def test_simulate_without_replicates(tmp_path):
    assert main(["simulate", "--preset", "setting1-desk", "--replicates", "0",
                 "--output", str(tmp_path)]) == 0
    assert read_csv(tmp_path / "metrics.csv").empty
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["data"]["replicates"] == 0


def test_missing_covariate_column(tmp_path):
    config = json.loads((TOY_DIR / "config.json").read_text())
    config["data"]["points_file"] = str(TOY_DIR / "points.csv")
    config["data"]["meta_file"] = str(TOY_DIR / "meta.csv")
    config["formula"].append({"name": "x2", "kind": "linear", "covariates": ["x2"]})
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config))
    assert main(["fit", "--config", str(path), "--output", str(tmp_path / "out")]) == 3
    assert "x2" in (tmp_path / "out" / "run.log").read_text()


def test_coarsen_collinear_input(tmp_path):
    t = [i / 9 for i in range(10)]
    lines = ["curve_id,dim,t,y"]
    lines += [f"c1,hand.x,{v},{k}" for k, v in enumerate(t)]
    lines += [f"c1,hand.y,{v},0.5" for v in t]
    points = tmp_path / "line.csv"
    points.write_text("\n".join(lines) + "\n")

    assert main(["coarsen", "--input", str(points), "--lead-dims", "hand.x,hand.y",
                 "--rstar", "1e-4", "--output", str(tmp_path / "a" / "kept.csv")]) == 0
    assert read_csv(tmp_path / "a" / "coarsen_report.csv")["n_after"].tolist() == [2]

    assert main(["coarsen", "--input", str(points), "--lead-dims", "hand.x,hand.y",
                 "--rstar", "0", "--output", str(tmp_path / "b" / "kept.csv")]) == 0
    assert len(read_csv(tmp_path / "b" / "kept.csv")) == 20


def test_malformed_term_is_config_error(tmp_path):
    config = json.loads((TOY_DIR / "config.json").read_text())
    config["data"]["points_file"] = str(TOY_DIR / "points.csv")
    config["data"]["meta_file"] = str(TOY_DIR / "meta.csv")
    config["formula"].append({"name": "x2"})
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config))
    assert main(["fit", "--config", str(path), "--output", str(tmp_path / "out")]) == 2

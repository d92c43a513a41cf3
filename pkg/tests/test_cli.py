import json

import numpy as np
import pytest

from conflow.cli import main
from conflow.io import read_csv, read_tensor, write_tensor

TINY = {
    "bench-convergence": {
        "n": 60, "flows_per_cell": 10, "alphas": [0.1], "dims": [5], "vector_tasks": ["iso_gaussian"],
        "vector_scores": ["l2", "huber"], "field_tasks": ["gp2d"], "lengths": [0.1], "field_size": 8,
        "field_scores": ["field_l2"],
    },
    "bench-repulsion": {"n": 60, "dims": [5], "n_points": 10, "sims": 1, "steps": 3},
    "bench-bands": {
        "variants": ["symmetric"], "n_train": 40, "n_cal": 30, "n_test": 30, "n_base": 40, "p": 16,
        "samples_per_input": 5, "reps": 1,
    },
    "audit-cpd": {"samples": 200, "n": 60, "p": 3},
}
KIND = {"bench-convergence": "convergence", "bench-repulsion": "repulsion", "bench-bands": "bands", "audit-cpd": "cpd_audit"}


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def run_bench(tmp_path, command, out, threads, monkeypatch):
    monkeypatch.setenv("CONFLOW_THREADS", str(threads))
    cfg = write_config(tmp_path / f"{command}.json", TINY[command])
    assert main([command, "--config", cfg, "--seed", "3", "--out", str(out)]) == 0
    kind = KIND[command]
    return (out / f"{kind}.csv").read_bytes(), (out / f"{kind}.svg").read_bytes()


@pytest.mark.parametrize("command", list(TINY))
def test_bench_outputs_are_reproducible(tmp_path, command, monkeypatch):
    csv1, svg1 = run_bench(tmp_path, command, tmp_path / "a", 1, monkeypatch)
    csv2, svg2 = run_bench(tmp_path, command, tmp_path / "b", 2, monkeypatch)
    assert csv1 == csv2
    assert svg1 == svg2
    assert (tmp_path / "a" / f"{KIND[command]}.config.json").exists()
    header = csv1.decode().splitlines()[0].split(",")
    assert header[:2] == ["config_hash", "seed"]


def test_seed_changes_output(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "c.json", TINY["audit-cpd"])
    main(["audit-cpd", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "s1")])
    main(["audit-cpd", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "s2")])
    assert (tmp_path / "s1" / "cpd_audit.csv").read_bytes() != (tmp_path / "s2" / "cpd_audit.csv").read_bytes()


@pytest.fixture
def data_dir(tmp_path):
    cfg = write_config(tmp_path / "dg.json", {"generator": "linear_gaussian", "params": {"p": 3, "n": 80}})
    assert main(["datagen", "--config", cfg, "--seed", "5", "--out", str(tmp_path)]) == 0
    return tmp_path


def test_datagen(data_dir):
    rows = read_csv(data_dir / "datagen.csv")
    assert [r["split"] for r in rows] == ["train", "cal", "test"]
    assert read_tensor(data_dir / "cal_Y.ncf").shape == (80, 3)


def test_pipeline_subcommands(data_dir):
    # predictions are taken as given: here the raw inputs stand in for y_hat
    write_tensor(data_dir / "y_hat.ncf", np.zeros(3))
    write_tensor(data_dir / "y0.ncf", read_tensor(data_dir / "test_Y.ncf")[:5])
    base = {"cal_y_hat": "cal_X.ncf", "cal_y": "cal_Y.ncf", "y_hat": "y_hat.ncf"}

    cfg = write_config(data_dir / "cal.json", dict(base, alphas=[0.1, 0.2]))
    assert main(["calibrate", "--config", cfg, "--out", str(data_dir / "o1")]) == 0
    taus = [float(r["tau"]) for r in read_csv(data_dir / "o1" / "thresholds.csv")]
    assert taus[0] >= taus[1]

    cfg = write_config(data_dir / "sb.json", dict(base, y0="y0.ncf", alpha=0.1))
    assert main(["sample-boundary", "--config", cfg, "--out", str(data_dir / "o2")]) == 0
    rows = read_csv(data_dir / "o2" / "boundary.csv")
    assert all(r["converged"] == "true" for r in rows)

    # paths in a config resolve relative to the config file
    (data_dir / "sub").mkdir()
    (data_dir / "sub" / "rp.json").write_text(
        json.dumps(dict({k: "../" + v for k, v in base.items()}, points="../o2/terminal.ncf", steps=3))
    )
    assert main(["repulse", "--config", str(data_dir / "sub" / "rp.json"), "--out", str(data_dir / "o3")]) == 0
    assert read_tensor(data_dir / "o3" / "repulsed.ncf").shape == (5, 3)

    cfg = write_config(data_dir / "cpd.json", dict(base, samples=20))
    assert main(["sample-cpd", "--config", cfg, "--out", str(data_dir / "o4")]) == 0
    assert read_tensor(data_dir / "o4" / "cpd_samples.ncf").shape == (20, 3)


def test_band_and_metrics(tmp_path):
    rng = np.random.default_rng(0)
    write_tensor(tmp_path / "cs.ncf", rng.normal(size=(40, 10, 8)))
    write_tensor(tmp_path / "cy.ncf", rng.normal(size=(40, 8)))
    write_tensor(tmp_path / "ts.ncf", rng.normal(size=(20, 10, 8)))
    write_tensor(tmp_path / "ty.ncf", rng.normal(size=(20, 8)))
    cfg = write_config(tmp_path / "b.json", {
        "cal_samples": "cs.ncf", "cal_y": "cy.ncf", "test_samples": "ts.ncf", "test_y": "ty.ncf", "alpha": 0.2,
    })
    assert main(["band", "--config", cfg, "--out", str(tmp_path / "ob")]) == 0
    assert read_tensor(tmp_path / "ob" / "lower.ncf").shape == (20, 8)
    assert 0 <= float(read_csv(tmp_path / "ob" / "band.csv")[0]["coverage"]) <= 1

    write_tensor(tmp_path / "s.ncf", rng.normal(size=(4, 16, 16)))
    write_tensor(tmp_path / "t.ncf", rng.normal(size=(16, 16)))
    cfg = write_config(tmp_path / "m.json", {"samples": "s.ncf", "target": "t.ncf"})
    assert main(["metrics", "--config", cfg, "--out", str(tmp_path / "om")]) == 0
    row = read_csv(tmp_path / "om" / "metrics.csv")[0]
    assert {"energy_distance", "vendi", "lsd", "patch_mmd"} <= set(row)


@pytest.mark.parametrize(
    "cfg_text, argv_extra",
    [("{not json", []), (json.dumps({"cal_y": "missing.ncf"}), []), (json.dumps({}), ["--seed", "-1"])],
)
def test_bad_input_exits_with_code_2(tmp_path, cfg_text, argv_extra, capsys):
    path = tmp_path / "bad.json"
    path.write_text(cfg_text)
    assert main(["calibrate", "--config", str(path), "--out", str(tmp_path)] + argv_extra) == 2
    assert "error" in capsys.readouterr().err


def test_bench_rejects_bad_alpha(tmp_path):
    cfg = write_config(tmp_path / "a.json", {"alphas": [1.5]})
    assert main(["bench-convergence", "--config", cfg, "--out", str(tmp_path)]) == 2

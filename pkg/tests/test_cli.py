import csv
import shutil

import numpy as np
import pytest
import yaml

import problems as P
from pdzd.cli import main

CONFIGS = P.ROOT / "configs"

TINY = {
    "plant": {"type": "qp", "Q": [[2.0, 0.0], [0.0, 1.0]], "c": [-1.0, -1.0], "A": [[1.0, 1.0]], "b": [0.5],
              "set": {"type": "box", "lower": -1.0, "upper": 1.0}},
    "dynamics": "ppdzd",
    "params": {"k_x": 1.0, "k_lambda": 1.0, "alpha_x": 2.5, "alpha_lambda": 3.0, "eps_g": 0.025},
    "probing": {"signal": "square", "eps_a": 0.025, "eps_omega": 0.025, "kappa": ["1", "2"]},
    "integration": {"t_end": 0.2},
}


def write(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_single_step_run(tmp_path):
    cfg = {**TINY, "integration": {"h": 0.025 / 96, "t_end": 0.025 / 96}}
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, cfg), "--out", str(out), "--no-plots"]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 3  # hash comment, header, one record
    assert lines[2].startswith("0.0,")


def test_square_odd_ratio_refused(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(CONFIGS / "square_1_3.yaml"), "--out", str(out)]) == 2
    assert sorted(p.name for p in out.iterdir()) == ["validation.txt"]
    text = (out / "validation.txt").read_text()
    assert "VIOLATED" in text and "odd/odd" in text


def test_published_plan_refused_unless_overridden(tmp_path):
    out = tmp_path / "refused"
    assert main(["run", str(CONFIGS / "ovc_published_plan.yaml"), "--out", str(out)]) == 2
    assert not (out / "trajectory.csv").exists()
    cfg = yaml.safe_load((CONFIGS / "ovc_published_plan.yaml").read_text())
    cfg["plant"]["R_file"] = str(CONFIGS / "feeder_R.csv")
    cfg["integration"] = {"t_end": 0.05}
    out = tmp_path / "forced"
    assert main(["run", write(tmp_path, cfg), "--out", str(out), "--allow-unorthogonal", "--no-plots"]) == 0
    assert "--allow-unorthogonal" in (out / "validation.txt").read_text()
    assert (out / "trajectory.csv").exists()


def test_invalid_config_exits_2(tmp_path):
    cfg = {**TINY, "plant": {"type": "nonsense"}}
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, cfg), "--out", str(out)]) == 2
    assert "invalid configuration" in (out / "validation.txt").read_text()


def test_step_above_bound_refused(tmp_path):
    cfg = {**TINY, "integration": {"h": 0.01, "t_end": 0.1}}
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, cfg), "--out", str(out)]) == 2
    assert "refused" in (out / "validation.txt").read_text()


def test_numerical_abort_exits_3(tmp_path):
    cfg = {"plant": {"type": "qp", "Q": [[1.0]], "c": [1.0], "set": {"type": "box", "lower": -1.0, "upper": 1.0}},
           "dynamics": "ppdgd", "params": {"k_x": 1000.0, "alpha_x": 1.0},
           "integration": {"method": "euler", "h": 0.1, "t_end": 100.0, "reproject": False}}
    out = tmp_path / "out"
    with np.errstate(all="ignore"):
        assert main(["run", write(tmp_path, cfg), "--out", str(out), "--no-plots"]) == 3
    rows = read_rows(out / "summary.csv")
    assert rows[0]["status"] == "aborted"


def test_rerun_is_byte_identical(tmp_path):
    path = write(tmp_path, TINY)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", path, "--out", str(a), "--no-plots"]) == 0
    assert main(["run", path, "--out", str(b), "--no-plots"]) == 0
    for name in ("trajectory.csv", "summary.csv", "validation.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    h = read_rows(a / "summary.csv")[0]["config_hash"]
    assert len(h) == 16
    assert (a / "trajectory.csv").read_text().startswith(f"# config_hash: {h}")
    assert f"config_hash: {h}" in (a / "validation.txt").read_text()


def test_hash_ignores_config_location(tmp_path):
    a = write(tmp_path, TINY, "one.yaml")
    (tmp_path / "sub").mkdir()
    b = write(tmp_path / "sub", TINY, "two.yaml")
    main(["run", a, "--out", str(tmp_path / "oa"), "--no-plots"])
    main(["run", b, "--out", str(tmp_path / "ob"), "--no-plots"])
    ha = read_rows(tmp_path / "oa" / "summary.csv")[0]["config_hash"]
    hb = read_rows(tmp_path / "ob" / "summary.csv")[0]["config_hash"]
    assert ha == hb


def test_plots_are_written(tmp_path):
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, TINY), "--out", str(out)]) == 0
    assert (out / "trajectory.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PDZD_OUT", str(tmp_path / "env_out"))
    assert main(["run", write(tmp_path, TINY), "--no-plots"]) == 0
    assert (tmp_path / "env_out" / "summary.csv").exists()


def test_empty_grid_is_single_run(tmp_path):
    grid = tmp_path / "grid.yaml"
    grid.write_text("{}\n")
    out = tmp_path / "out"
    assert main(["sweep", write(tmp_path, TINY), "--grid", str(grid), "--out", str(out), "--no-plots"]) == 0
    assert len(read_rows(out / "sweep_summary.csv")) == 1


def test_noise_sweep_rows_and_seeds(tmp_path):
    out = tmp_path / "out"
    code = main(["sweep", write(tmp_path, TINY), "--grid", str(CONFIGS / "grid_noise.yaml"), "--out", str(out), "--jobs", "2"])
    assert code == 0
    rows = read_rows(out / "sweep_summary.csv")
    assert [float(r["noise.sigma"]) for r in rows] == [0.0, 0.05, 0.1, 0.2]
    assert len({r["seed"] for r in rows}) == 4
    assert all(r["status"] == "ok" for r in rows)
    assert (out / "sweep_tail_sup.png").exists()
    # per-point seeds are reproducible
    again = tmp_path / "again"
    main(["sweep", write(tmp_path, TINY), "--grid", str(CONFIGS / "grid_noise.yaml"), "--out", str(again), "--no-plots"])
    assert (out / "sweep_summary.csv").read_bytes() == (again / "sweep_summary.csv").read_bytes()


def test_eps_a_sweep_estimator_error_grows(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "tcp.yaml").read_text())
    cfg["integration"] = {"t_end": 0.3}
    out = tmp_path / "out"
    assert main(["sweep", write(tmp_path, cfg), "--grid", str(CONFIGS / "grid_eps_a.yaml"), "--out", str(out), "--no-plots"]) == 0
    err = [float(r["estimator_error"]) for r in read_rows(out / "sweep_summary.csv")]
    assert len(err) == 4 and all(a < b for a, b in zip(err, err[1:]))


def test_failed_point_marks_sweep_partial(tmp_path):
    grid = tmp_path / "grid.yaml"
    grid.write_text("integration.h: [0.00026041666666666666, 0.01]\n")
    out = tmp_path / "out"
    assert main(["sweep", write(tmp_path, TINY), "--grid", str(grid), "--out", str(out), "--no-plots"]) == 1
    assert [r["status"] for r in read_rows(out / "sweep_summary.csv")] == ["ok", "refused"]


def test_sample_configs_parse(tmp_path):
    from pdzd.config import build_experiment, load_config

    for path in sorted(CONFIGS.glob("*.yaml")):
        if path.name.startswith("grid_"):
            assert isinstance(yaml.safe_load(path.read_text()), dict)
            continue
        exp = build_experiment(load_config(path))
        assert exp.refused == (path.name in ("ovc_published_plan.yaml", "square_1_3.yaml"))


@pytest.mark.skipif(shutil.which("pdzd") is None, reason="console script not installed")
def test_console_script(tmp_path):
    import subprocess

    r = subprocess.run(["pdzd", "run", str(CONFIGS / "square_1_3.yaml"), "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 2 and "refused" in r.stderr

import json
import logging
import subprocess
import sys
from pathlib import Path

import pytest

from cli import build_parser, configure_logging, run
from costmap import load_grid_map
from planner import PlannerConfig, init_params, save_checkpoint

SMALL = PlannerConfig(n_rays=8, c_i=4, c_g=3, m=2, n_k=3, enc_hidden=16, trunk_hidden=16)


@pytest.fixture
def corridor_file(tmp_path):
    path = tmp_path / "corridor.json"
    assert run(["gen-env", "--kind", "corridor", "--length", "8", "--width", "2", "--out", str(path)]) == 0
    return path


def test_help_and_usage_errors(capsys):
    assert run(["--help"]) == 0
    assert run([]) == 2
    assert run(["teleport"]) == 2
    assert run(["plan", "--model", "m", "--env", "e", "--pose", "1,2", "--goal", "3,4"]) == 2
    assert run(["gen-data", "--env", "e", "--out", "o", "--n", "0"]) == 2
    assert "expected 3 comma-separated" in capsys.readouterr().err


def test_domain_errors_exit_with_one(tmp_path, capsys):
    assert run(["build-costmap", "--env", str(tmp_path / "missing.json"), "--out", str(tmp_path / "m.ipcm")]) == 1
    assert "impplan build-costmap: error:" in capsys.readouterr().err


def test_gen_env_and_costmaps(capsys, corridor_file, tmp_path):
    data = json.loads(corridor_file.read_text())
    assert data["width"] == 8.0
    assert "corridor-floor-0" in capsys.readouterr().out

    out, image = tmp_path / "sem.ipcm", tmp_path / "sem.pgm"
    assert run(["build-costmap", "--env", str(corridor_file), "--out", str(out), "--plot", str(image)]) == 0
    assert load_grid_map(out).shape == (24, 80)
    assert image.read_bytes().startswith(b"P5\n80 24\n255\n")
    assert "semantic map 24x80" in capsys.readouterr().out


def test_gen_data_rejects_bad_ratio(corridor_file, tmp_path, capsys):
    assert run(["gen-data", "--env", str(corridor_file), "--out", str(tmp_path / "d"), "--fov-ratio", "1.5"]) == 1
    assert "--fov-ratio" in capsys.readouterr().err


def test_plan_prints_keypoints_and_gate(corridor_file, tmp_path, capsys):
    model = tmp_path / "model.ipnn"
    save_checkpoint(init_params(0, SMALL), model)
    dump = tmp_path / "path.txt"
    args = ["plan", "--model", str(model), "--env", str(corridor_file), "--pose", "1,1.2,0", "--goal", "7,1.2"]
    assert run(args + ["--dump", str(dump)]) == 0
    out = capsys.readouterr().out
    assert out.count("keypoint ") == 3
    assert "mu: " in out and ("gate: execute" in out or "gate: reject" in out)

    svg = tmp_path / "path.svg"
    assert run(["plot-path", str(dump), "--env", str(corridor_file), "--out", str(svg)]) == 0
    assert "<polyline" in svg.read_text()

    assert run(args[:-2] + ["--goal", "30,1.2"]) == 1


def test_pipeline(corridor_file, tmp_path, capsys):
    data, model, log = tmp_path / "data.ipds", tmp_path / "model.ipnn", tmp_path / "history.csv"
    report = tmp_path / "report.json"
    env = str(corridor_file)

    assert run(["gen-data", "--env", env, "--n", "6", "--viewpoints", "20", "--n-rays", "8", "--out", str(data)]) == 0
    assert run(["train", "--data", str(data), "--env", env, "--epochs", "2", "--out", str(model), "--log", str(log), "--db", "sqlite://"]) == 0
    out = capsys.readouterr().out
    assert "recorded run" in out and "stopped at epoch" in out
    assert log.read_text().startswith("epoch,lr,train_total,val_total")

    assert run(["eval", "--model", str(model), "--env", env, "--n", "2", "--report", str(report)]) == 0
    summary = capsys.readouterr().out
    assert "goal reached:" in summary
    assert json.loads(report.read_text())["n_pairs"] == 2


def test_logging_level_from_environment(monkeypatch):
    monkeypatch.setenv("IMPPLAN_LOG_LEVEL", "error")
    configure_logging(0)
    assert logging.getLogger().level == logging.ERROR
    configure_logging(2)
    assert logging.getLogger().level == logging.DEBUG
    logging.getLogger().setLevel(logging.WARNING)


def test_parser_defaults():
    args = build_parser().parse_args(["gen-data", "--env", "e", "--out", "o"])
    assert (args.n, args.fov_ratio, args.viewpoints, args.n_rays) == (2000, 0.75, 200, 64)


def test_identical_seeds_give_identical_files(corridor_file, tmp_path):
    env = str(corridor_file)
    outputs = []
    for name in ("a", "b"):
        data, model = tmp_path / f"{name}.ipds", tmp_path / f"{name}.ipnn"
        log, report = tmp_path / f"{name}.csv", tmp_path / f"{name}.json"
        assert run(["gen-data", "--env", env, "--n", "4", "--viewpoints", "20", "--n-rays", "8", "--seed", "3", "--out", str(data)]) == 0
        assert run(["train", "--data", str(data), "--env", env, "--epochs", "1", "--seed", "3", "--out", str(model), "--log", str(log)]) == 0
        assert run(["eval", "--model", str(model), "--env", env, "--n", "2", "--seed", "3", "--report", str(report)]) == 0
        outputs.append([p.read_bytes() for p in (data, model, log, report)])
    assert outputs[0] == outputs[1]


def test_commands_without_a_store_do_not_load_sqlalchemy():
    code = "import sys, cli; sys.exit(int('sqlalchemy' in sys.modules))"
    result = subprocess.run([sys.executable, "-c", code], cwd=Path(__file__).parent, capture_output=True)
    assert result.returncode == 0, result.stderr.decode()

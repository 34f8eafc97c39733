import json

import numpy as np
import pytest

from span3d.cli import main
from span3d.htl import default_task_graph, write_history_csv
from span3d.kitti import write_synthetic_kitti


@pytest.fixture
def history(tmp_path):
    g = default_task_graph()
    p = tmp_path / "hist.csv"
    p.write_text(write_history_csv({tid: [1.0 / (t + 1) for t in range(12)] for tid in g.task_ids}))
    return p


@pytest.fixture
def kitti_dir(tmp_path):
    d = tmp_path / "kitti"
    write_synthetic_kitti(d, np.random.default_rng(0), 3, 5)
    return d


def _outputs(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def _cmds(tmp_path, history, kitti_dir):
    return {
        "fit": ["fit"],
        "suite": ["suite", "--n-scenes", "3"],
        "htl-replay": ["htl-replay", str(history)],
        "deviation-stats": ["deviation-stats", str(kitti_dir / "label_2"), str(kitti_dir / "calib")],
        "grad-check": ["grad-check", "--n-instances", "5"],
    }


@pytest.mark.parametrize("name", ["fit", "suite", "htl-replay", "deviation-stats", "grad-check"])
def test_subcommands_byte_deterministic(name, tmp_path, history, kitti_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fit": {"max_iters": 150}}))
    argv = _cmds(tmp_path, history, kitti_dir)[name]
    runs = []
    for i in range(2):
        out = tmp_path / f"out{i}"
        assert main(["--seed", "7", "--config", str(cfg), "--out", str(out), *argv]) == 0
        runs.append(_outputs(out))
    assert runs[0] and runs[0] == runs[1]


def test_seed_changes_output(tmp_path):
    main(["--seed", "1", "--out", str(tmp_path / "a"), "fit"])
    main(["--seed", "2", "--out", str(tmp_path / "b"), "fit"])
    assert _outputs(tmp_path / "a") != _outputs(tmp_path / "b")


def test_flags_after_subcommand(tmp_path):
    assert main(["fit", "--seed", "1", "--out", str(tmp_path / "a")]) == 0
    assert main(["--seed", "1", "fit", "--out", str(tmp_path / "b")]) == 0
    assert _outputs(tmp_path / "a") == _outputs(tmp_path / "b")


def test_fit_explicit_boxes(tmp_path):
    gt = "1,1,20,4,1.5,1.7,0.3"
    rc = main(["--out", str(tmp_path), "--check", "fit", "--gt", gt, "--init", "1.3,1,20.4,4,1.5,1.7,0.3"])
    assert rc == 0
    doc = json.loads((tmp_path / "fit.json").read_text())
    assert doc["converged"] and doc["rmse"] < 0.05
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss" and len(lines) == doc["iterations"] + 2


def test_usage_errors_exit_1(tmp_path, capsys):
    assert _exit(["fit", "--bogus"]) == 1
    assert _exit(["nope"]) == 1
    assert _exit(["fit", "--gt", "1,2,3"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"fit": {"speed": 1}}')
    assert main(["--config", str(bad), "fit"]) == 1
    assert "speed" in capsys.readouterr().err


def _exit(argv):
    with pytest.raises(SystemExit) as e:
        main(argv)
    return e.value.code


def test_io_errors_exit_2(tmp_path):
    assert main(["--out", str(tmp_path), "htl-replay", str(tmp_path / "missing.csv")]) == 2
    assert main(["--config", str(tmp_path / "missing.json"), "fit"]) == 2
    assert main(["--out", str(tmp_path), "deviation-stats", str(tmp_path / "x"), str(tmp_path / "y")]) == 2
    bad = tmp_path / "h.csv"
    bad.write_text("epoch,task_id,mean_loss\nzero,a,1\n")
    assert main(["--out", str(tmp_path), "htl-replay", str(bad)]) == 2


def test_replay_missing_task_exit_1(tmp_path, capsys):
    p = tmp_path / "h.csv"
    p.write_text(write_history_csv({"class": [1.0, 0.5, 0.2]}))
    assert main(["--out", str(tmp_path), "htl-replay", str(p)]) == 1
    assert "depth" in capsys.readouterr().err


def test_check_failure_exit_3(tmp_path):
    assert main(["--out", str(tmp_path), "--check", "grad-check", "--n-instances", "3", "--tol", "0"]) == 3
    assert main(["--out", str(tmp_path), "--check", "grad-check", "--n-instances", "3"]) == 0


def test_replay_outputs(tmp_path, history):
    assert main(["--out", str(tmp_path), "--check", "htl-replay", str(history)]) == 0
    lines = (tmp_path / "weights.csv").read_text().splitlines()
    assert lines[0] == "epoch,task,l_s,alpha,omega"
    assert all(l.endswith(",1.0") for l in lines[-9:])


def test_deviation_stats_missing_calib_warns(tmp_path, kitti_dir, capsys):
    (kitti_dir / "calib" / "000001.txt").unlink()
    rc = main(["--out", str(tmp_path), "--check", "deviation-stats",
               str(kitti_dir / "label_2"), str(kitti_dir / "calib")])
    assert rc == 0
    doc = json.loads((tmp_path / "deviation.json").read_text())
    assert doc["warnings"] == 1 and doc["files"] == 2 and doc["n"] == 10
    assert "000001" in capsys.readouterr().err
    for edge in doc["edges"].values():
        assert abs(edge["mean"]) < 1e-9
    assert (tmp_path / "deviation.csv").read_text().startswith("edge,bin_lo,bin_hi,count\n")


def test_config_defaults_prints_json(capsys):
    assert main(["config-defaults"]) == 0
    assert set(json.loads(capsys.readouterr().out)) == {"fit", "dag", "filters", "suite"}

import json
import subprocess
import sys

import numpy as np
import pytest

from depthwin.cli import main
from depthwin.io import read_depth, read_manifest, read_trajectory, write_depth, write_poses, write_trajectory
from depthwin.metrics import Trajectory


def tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


@pytest.fixture
def synth_dir(tmp_path, scene_files):
    spec, poses = scene_files
    out = tmp_path / "synth"
    assert main(["synth", str(spec), str(poses), "--out", str(out)]) == 0
    return out


def test_synth_writes_expected_files(synth_dir):
    files = tree(synth_dir)
    assert sum(n.startswith("image_") for n in files) == 3
    assert sum(n.startswith("depth_") for n in files) == 3
    assert {"groundtruth.txt", "manifest.json", "scene.json", "relative_poses_gt.txt"} <= set(files)
    m = read_manifest(synth_dir / "manifest.json")
    assert m.n == 3 and len(read_trajectory(m.trajectory)) == 3
    assert abs(read_depth(m.depths[0], m.depth_divisor).mean() - 3.0) < 0.5


def test_synth_is_deterministic_and_seeded(tmp_path, scene_files):
    spec, poses = scene_files
    for name in ("a", "b"):
        assert main(["synth", str(spec), str(poses), "--out", str(tmp_path / name), "--seed", "7"]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    assert main(["synth", str(spec), str(poses), "--out", str(tmp_path / "c"), "--seed", "8"]) == 0
    assert tree(tmp_path / "a")["image_000.pgm"] != tree(tmp_path / "c")["image_000.pgm"]


def test_synth_set_override_and_sensor(tmp_path, scene_files):
    spec, poses = scene_files
    out = tmp_path / "s"
    assert main(["synth", str(spec), str(poses), "--out", str(out), "--set", "sensor.max_range=3.0"]) == 0
    assert (out / "sensor_depth_002.pgm").exists()
    assert read_manifest(out / "manifest.json").sensor_depths is not None


def test_synth_malformed_json(tmp_path, scene_files, capsys):
    _, poses = scene_files
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "geometry": "slanted",\n  oops\n}')
    assert main(["synth", str(bad), str(poses), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "column" in err


def test_synth_config_errors(tmp_path, scene_files):
    spec, poses = scene_files
    assert main(["synth", str(spec), str(poses)]) == 2  # no --out
    assert main(["synth", str(spec), str(poses), "--out", str(tmp_path / "o"), "--set", "colour=1"]) == 2
    assert main(["synth", str(spec), str(poses), "--out", str(tmp_path / "o"), "--set", "offset=500"]) == 2
    assert main(["synth", str(tmp_path / "nope.json"), str(poses), "--out", str(tmp_path / "o")]) == 2
    one = tmp_path / "one.txt"
    write_poses(one, [[0] * 6])
    assert main(["synth", str(spec), str(one), "--out", str(tmp_path / "o")]) == 2
    assert main(["frobnicate"]) == 2


def test_optimize_reduces_loss(tmp_path, synth_dir):
    out = tmp_path / "opt"
    args = ["optimize", str(synth_dir / "manifest.json"), "--out", str(out), "--set", "optim.max_steps=60", "--set", "lr=0.01", "--set", "num_scales=2", "--set", "init_depth=3.0"]
    assert main(args) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["termination"] in ("converged", "max-steps") and s["steps"] == 60
    assert s["final_loss"] < s["initial_loss"]
    assert s["optim"]["lr"] == 0.01 and s["loss"]["num_scales"] == 2
    assert {"depth.pgm", "depth.npy", "poses.txt", "trace.csv", "trajectory.txt", "final_breakdown.csv"} <= set(tree(out))
    assert np.load(out / "depth.npy").shape == (32, 48)


def test_optimize_two_frame_manifest(tmp_path, synth_dir):
    m = json.loads((synth_dir / "manifest.json").read_text())
    m["images"], m["depths"], m["n"] = m["images"][:2], m["depths"][:2], 2
    (synth_dir / "pair.json").write_text(json.dumps(m))
    out = tmp_path / "pair"
    assert main(["optimize", str(synth_dir / "pair.json"), "--out", str(out), "--set", "max_steps=5", "--set", "num_scales=1"]) == 0
    assert (out / "poses.txt").read_text().count("\n") == 2  # header plus one pose


def test_optimize_errors(tmp_path, synth_dir, capsys):
    (synth_dir / "image_001.pgm").unlink()
    assert main(["optimize", str(synth_dir / "manifest.json"), "--out", str(tmp_path / "o")]) == 2
    assert "image_001.pgm" in capsys.readouterr().err
    assert main(["optimize", str(synth_dir / "manifest.json"), "--out", str(tmp_path / "o"), "--set", "bogus=1"]) == 2
    assert main(["optimize", str(synth_dir / "manifest.json"), "--out", str(tmp_path / "o"), "--set", "lr=-1"]) == 2


def test_eval_depth(tmp_path, capsys):
    rng = np.random.default_rng(0)
    gt_dir, pred_dir, twice_dir = tmp_path / "gt", tmp_path / "pred", tmp_path / "twice"
    for d in (gt_dir, pred_dir, twice_dir):
        d.mkdir()
    for i in range(3):
        g = rng.uniform(1, 5, (12, 16))
        write_depth(gt_dir / f"{i}.pgm", g)
        write_depth(pred_dir / f"{i}.pgm", g)
        write_depth(twice_dir / f"{i}.pgm", 2 * g)
    for d in (pred_dir, twice_dir):
        assert main(["eval-depth", str(d), str(gt_dir), "--out", str(tmp_path / "m")]) == 0
        row = capsys.readouterr().out.splitlines()[1].split()
        assert [float(x) for x in row] == [0, 0, 0, 0, 1, 1, 1]
    csv = (tmp_path / "m" / "depth_metrics.csv").read_text().splitlines()
    assert csv[0].startswith("image,abs_rel") and csv[-1].startswith("mean,") and len(csv) == 5
    assert main(["eval-depth", str(pred_dir), str(tmp_path / "missing")]) == 2
    assert main(["eval-depth", str(pred_dir), str(gt_dir), "--set", "scale=2"]) == 2


def test_eval_ate(tmp_path, capsys):
    rng = np.random.default_rng(1)
    pos = np.cumsum(rng.normal(0, 0.1, (20, 3)), axis=0)
    gt = Trajectory.from_positions(pos)
    write_trajectory(tmp_path / "gt.txt", gt)
    write_trajectory(tmp_path / "scaled.txt", Trajectory.from_positions(3 * pos))
    for name in ("gt.txt", "scaled.txt"):
        assert main(["eval-ate", str(tmp_path / name), str(tmp_path / "gt.txt"), "--out", str(tmp_path / "o")]) == 0
        assert capsys.readouterr().out.strip() == "0.000±0.000"
    assert (tmp_path / "o" / "ate.csv").exists()
    (tmp_path / "empty.txt").write_text("# nothing\n")
    assert main(["eval-ate", str(tmp_path / "empty.txt"), str(tmp_path / "gt.txt")]) == 2


def test_init_sim(tmp_path, capsys):
    assert main(["init-sim", "--set", "scene=rich", "--set", "frames=4", "--out", str(tmp_path / "o")]) == 0
    assert "rich: frames-to-initialize without fallback=2 with fallback=2" in capsys.readouterr().out
    assert (tmp_path / "o" / "init.csv").read_text().splitlines()[1] == "rich,2,2,1,1"
    assert main(["init-sim", "--set", "max_frames=1"]) == 2
    assert main(["init-sim", "--set", "scene=desert"]) == 2


def test_init_sim_from_manifest(tmp_path, scene_files, capsys):
    spec, poses = scene_files
    out = tmp_path / "s"
    assert main(["synth", str(spec), str(poses), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["init-sim", str(out / "manifest.json"), "--set", "M=8"]) == 0
    assert "manifest: frames-to-initialize" in capsys.readouterr().out


def test_plot_command(tmp_path):
    p = tmp_path / "loss.csv"
    p.write_text("step,C\n0,0.5\n1,0.25\n")
    assert main(["plot", str(p), str(tmp_path / "a.svg")]) == 0
    assert (tmp_path / "a.svg").read_text().count("<polyline") == 1
    (tmp_path / "empty.csv").write_text("")
    assert main(["plot", str(tmp_path / "empty.csv"), str(tmp_path / "b.svg")]) == 2
    assert main(["plot", str(p), str(tmp_path / "c.svg"), "--kind", "pie"]) == 2


def test_config_file(tmp_path, synth_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"optim": {"max_steps": 3}, "loss": {"num_scales": 1}}))
    out = tmp_path / "o"
    assert main(["optimize", str(synth_dir / "manifest.json"), "--config", str(cfg), "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["steps"] == 3


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "depthwin", "plot", str(tmp_path / "none.csv"), str(tmp_path / "x.svg")], capture_output=True, text=True)
    assert r.returncode == 2 and "missing file" in r.stderr

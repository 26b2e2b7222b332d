import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from depthwin.errors import InvalidArgumentError
from depthwin.metrics import (
    DEPTH_COLUMNS,
    DepthMetrics,
    Trajectory,
    associate,
    ate_report,
    ate_snippet,
    depth_metrics,
    median_scale,
    split_snippets,
)


def random_depths(seed, shape=(20, 30)):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(1, 50, shape)
    pred = gt * rng.uniform(0.6, 1.6, shape)
    return pred, gt


def test_median_scale_simple():
    _, gt = random_depths(0)
    assert median_scale(gt, gt) == 1.0
    assert median_scale(gt / 2, gt) == 2.0
    with pytest.raises(InvalidArgumentError):
        median_scale(gt, gt, np.zeros(gt.shape, bool))


def sorted_median(xs):
    xs = sorted(xs)
    k = len(xs)
    return xs[k // 2] if k % 2 else 0.5 * (xs[k // 2 - 1] + xs[k // 2])


@pytest.mark.parametrize("seed", range(4))
def test_median_scale_matches_sort_oracle(seed):
    pred, gt = random_depths(seed, (7, 9 + seed))
    mask = np.random.default_rng(seed).random(gt.shape) > 0.3
    ref = sorted_median(gt[mask].tolist()) / sorted_median(pred[mask].tolist())
    assert abs(median_scale(pred, gt, mask) - ref) < 1e-12


def test_metrics_identity():
    _, gt = random_depths(1)
    m = depth_metrics(gt, gt)
    assert m.as_row() == (0, 0, 0, 0, 1, 1, 1)


def test_metrics_ratio_case():
    gt = np.array([[1.0, 2.0], [4.0, 8.0]])
    m = depth_metrics(1.25 * gt, gt)
    assert m.abs_rel == pytest.approx(0.25, abs=1e-15)
    assert m.a1 == 0 and m.a2 == 1 and m.a3 == 1


@pytest.mark.parametrize("seed", range(3))
def test_metrics_match_scalar_loop(seed):
    pred, gt = random_depths(seed)
    pred[0, 0] = 200.0  # exercises the cap
    pred[0, 1] = 1e-6  # and the floor
    mask = np.random.default_rng(seed + 10).random(gt.shape) > 0.2
    sums = dict(abs_rel=0.0, sq_rel=0.0, rmse=0.0, rmse_log=0.0, a1=0, a2=0, a3=0)
    count = 0
    for i in range(gt.shape[0]):
        for j in range(gt.shape[1]):
            if not mask[i, j]:
                continue
            p = min(max(pred[i, j], 1e-3), 80.0)
            g = gt[i, j]
            count += 1
            sums["abs_rel"] += abs(p - g) / g
            sums["sq_rel"] += (p - g) ** 2 / g
            sums["rmse"] += (p - g) ** 2
            sums["rmse_log"] += (math.log(p) - math.log(g)) ** 2
            r = max(p / g, g / p)
            for k in (1, 2, 3):
                sums[f"a{k}"] += r < 1.25**k
    m = depth_metrics(pred, gt, mask)
    ref = {k: v / count for k, v in sums.items()}
    ref["rmse"] = math.sqrt(ref["rmse"])
    ref["rmse_log"] = math.sqrt(ref["rmse_log"])
    for k in DEPTH_COLUMNS:
        assert abs(getattr(m, k) - ref[k]) < 1e-10


@given(st.integers(0, 1000), st.floats(0.1, 10))
def test_metric_scaling_properties(seed, c):
    pred, gt = random_depths(seed, (6, 7))
    m = depth_metrics(pred, gt, cap=1e6)
    s = depth_metrics(c * pred, c * gt, cap=1e6)
    for k in ("abs_rel", "rmse_log"):
        assert abs(getattr(s, k) - getattr(m, k)) < 1e-9
    for k in ("a1", "a2", "a3"):
        assert abs(getattr(s, k) - getattr(m, k)) <= 1 / 42 + 1e-12  # at most a boundary pixel flips
    assert s.rmse == pytest.approx(c * m.rmse, rel=1e-9)
    assert s.sq_rel == pytest.approx(c * m.sq_rel, rel=1e-9)
    assert 0 <= m.a1 <= m.a2 <= m.a3 <= 1
    assert min(m.abs_rel, m.sq_rel, m.rmse, m.rmse_log) >= 0


def test_metrics_csv_and_mean():
    m = DepthMetrics(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
    assert m.to_csv().splitlines() == [",".join(DEPTH_COLUMNS), "0.100000,0.200000,0.300000,0.400000,0.500000,0.600000,0.700000"]
    avg = DepthMetrics.mean([m, DepthMetrics(0.3, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9)])
    assert avg.abs_rel == pytest.approx(0.2) and avg.a3 == pytest.approx(0.8)
    with pytest.raises(InvalidArgumentError):
        DepthMetrics.mean([])


def test_metrics_errors():
    with pytest.raises(InvalidArgumentError):
        depth_metrics(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(InvalidArgumentError):
        depth_metrics(np.ones((2, 2)), np.zeros((2, 2)))


def random_traj(seed, n=20, rotate=True):
    rng = np.random.default_rng(seed)
    pos = np.cumsum(rng.normal(0, 0.5, (n, 3)), axis=0)
    q = Rotation.from_rotvec(rng.normal(0, 0.3, (n, 3)) if rotate else np.zeros((n, 3))).as_quat()
    return Trajectory(np.arange(n) * 0.1, pos, q)


def test_split_snippets():
    t = random_traj(0, 10)
    snips = split_snippets(t, 5)
    assert len(snips) == 2
    for k, (pos, rots) in enumerate(snips):
        assert np.array_equal(pos[2], np.zeros(3))
        assert np.allclose(rots[2], np.eye(3), atol=1e-12)
        orig = t.positions[5 * k : 5 * k + 5]
        for i in range(5):
            for j in range(5):
                assert abs(np.linalg.norm(pos[i] - pos[j]) - np.linalg.norm(orig[i] - orig[j])) < 1e-12
    with pytest.raises(InvalidArgumentError):
        split_snippets(random_traj(0, 4), 5)


def test_recentering_is_idempotent():
    t = random_traj(1, 5)
    pos, rots = split_snippets(t, 5)[0]
    again = Trajectory(t.timestamps, pos, Rotation.from_matrix(rots).as_quat())
    pos2, _ = split_snippets(again, 5)[0]
    assert np.max(np.abs(pos2 - pos)) < 1e-12


def test_ate_snippet_basics():
    g = np.random.default_rng(2).normal(size=(5, 3))
    assert ate_snippet(g, g) == 0
    assert ate_snippet(3 * g, g) == pytest.approx(0, abs=1e-14)
    assert ate_snippet(np.zeros((5, 3)), g) == pytest.approx(np.sqrt(np.mean(np.sum(g * g, axis=1))))
    with pytest.raises(InvalidArgumentError):
        ate_snippet(g[:4], g)


@pytest.mark.parametrize("seed", range(3))
def test_ate_scale_matches_grid_search(seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(5, 3))
    p = 0.37 * g + 0.05 * rng.normal(size=(5, 3))
    grid = np.exp(np.linspace(np.log(0.01), np.log(100), 200001))
    errs = [np.sqrt(np.mean(np.sum((s * p - g) ** 2, axis=1))) for s in grid[::50]]
    k = int(np.argmin(errs)) * 50
    lo, hi = max(k - 50, 0), min(k + 50, len(grid) - 1)
    fine = grid[lo : hi + 1]
    errs = [np.sqrt(np.mean(np.sum((s * p - g) ** 2, axis=1))) for s in fine]
    s_grid = fine[int(np.argmin(errs))]
    s_star = np.sum(p * g) / np.sum(p * p)
    step = fine[1] / fine[0] - 1
    assert abs(s_star / s_grid - 1) <= step
    assert ate_snippet(p, g) <= min(errs) + 1e-12


@given(st.integers(0, 1000), st.floats(0.01, 100))
def test_ate_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(5, 3))
    p = g + 0.1 * rng.normal(size=(5, 3))
    assert abs(ate_snippet(c * p, g) - ate_snippet(p, g)) < 1e-9


def test_ate_report_identity_and_locality():
    gt = random_traj(3, 20)
    r = ate_report(gt, gt)
    assert str(r) == "0.000±0.000" and r.count == 4
    moved = Trajectory(gt.timestamps, gt.positions.copy(), gt.quaternions)
    moved.positions[5:10] += np.array([1.0, -2.0, 0.5])
    rep = ate_report(moved, gt)
    # a rigid translation of a whole snippet vanishes after re-centering
    assert np.allclose(rep.per_snippet, 0, atol=1e-12)
    moved.positions[7] += np.array([0.3, 0, 0])
    rep = ate_report(moved, gt)
    assert rep.per_snippet[1] > 0
    assert np.all(rep.per_snippet[[0, 2, 3]] < 1e-12)


def reference_ate(pred, gt, n=5):
    errs = []
    for k in range(len(gt) // n):
        per = []
        for traj in (pred, gt):
            pts = traj.positions[k * n : (k + 1) * n]
            Rc = Rotation.from_quat(traj.quaternions[k * n + n // 2]).as_matrix()
            c = pts[n // 2]
            per.append([[sum(Rc[r][i] * (pt[r] - c[r]) for r in range(3)) for i in range(3)] for pt in pts])
        p, g = per
        num = sum(p[i][d] * g[i][d] for i in range(n) for d in range(3))
        den = sum(p[i][d] ** 2 for i in range(n) for d in range(3))
        s = num / den if den else 0.0
        errs.append(math.sqrt(sum((s * p[i][d] - g[i][d]) ** 2 for i in range(n) for d in range(3)) / n))
    mean = sum(errs) / len(errs)
    std = math.sqrt(sum((e - mean) ** 2 for e in errs) / len(errs))
    return mean, std


def test_ate_report_matches_loop_oracle():
    gt = random_traj(4, 25)
    rng = np.random.default_rng(5)
    pred = Trajectory(gt.timestamps, gt.positions + rng.normal(0, 0.01, gt.positions.shape), gt.quaternions)
    rep = ate_report(pred, gt)
    mean, std = reference_ate(pred, gt)
    assert abs(rep.mean - mean) < 1e-10 and abs(rep.std - std) < 1e-10
    lines = rep.to_csv().splitlines()
    assert lines[0] == "snippet,ate" and lines[-2].startswith("mean,") and len(lines) == 1 + 5 + 2


def test_association_by_timestamp():
    gt = random_traj(6, 12)
    pred = Trajectory(gt.timestamps[2:] + 0.005, gt.positions[2:], gt.quaternions[2:])
    pairs = associate(pred, gt)
    assert np.array_equal(pairs[:, 1], np.arange(2, 12))
    far = Trajectory(gt.timestamps + 0.05, gt.positions, gt.quaternions)
    assert len(associate(far, gt)) == 12  # equal lengths fall back to index pairing
    with pytest.raises(InvalidArgumentError):
        ate_report(Trajectory(gt.timestamps[:3] + 0.05, gt.positions[:3], gt.quaternions[:3]), gt)


def test_trajectory_validation():
    with pytest.raises(InvalidArgumentError):
        Trajectory([0.0, 0.0], np.zeros((2, 3)), np.tile([0, 0, 0, 1.0], (2, 1)))
    with pytest.raises(InvalidArgumentError):
        Trajectory([0.0, 1.0], np.zeros((3, 3)), np.tile([0, 0, 0, 1.0], (2, 1)))
    T = np.tile(np.eye(4), (3, 1, 1))
    T[:, 0, 3] = [0, 1, 2]
    t = Trajectory.from_poses(T)
    assert np.array_equal(t.positions[:, 0], [0, 1, 2])

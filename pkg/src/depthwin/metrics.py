"""Depth error metrics with median scaling, and snippet-based ATE."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidArgumentError

DEPTH_COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3")


@dataclass
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float

    def as_row(self):
        return astuple(self)

    @classmethod
    def mean(cls, items):
        items = list(items)
        if not items:
            raise InvalidArgumentError("no metrics to average")
        return cls(*(float(np.mean([getattr(m, f.name) for m in items])) for f in fields(cls)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DEPTH_COLUMNS)
        w.writerow([f"{x:.6f}" for x in self.as_row()])
        return buf.getvalue()

    def format_row(self) -> str:
        return " ".join(f"{x:.3f}" for x in self.as_row())


def _masked(pred, gt, mask):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    mask = (gt > 0) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InvalidArgumentError("mask selects no pixels")
    return pred[mask], gt[mask]


def median_scale(pred, gt, mask=None) -> float:
    """Factor that matches the prediction's median to the ground truth's."""
    p, g = _masked(pred, gt, mask)
    return float(np.median(g) / np.median(p))


def depth_metrics(pred, gt, mask=None, cap=80.0, floor=1e-3) -> DepthMetrics:
    """Seven standard single-view depth metrics over ``mask``.

    ``pred`` must already be median scaled; it is clamped to ``[floor, cap]``.
    The accuracy thresholds are strict: ``max(p/g, g/p) < 1.25**k``.
    """
    p, g = _masked(pred, gt, mask)
    p = np.clip(p, floor, cap)
    ratio = np.maximum(p / g, g / p)
    diff = p - g
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        a1=float(np.mean(ratio < 1.25)),
        a2=float(np.mean(ratio < 1.25**2)),
        a3=float(np.mean(ratio < 1.25**3)),
    )


@dataclass
class Trajectory:
    """Timestamped camera positions and orientations (quaternions x, y, z, w)."""

    timestamps: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.quaternions = np.asarray(self.quaternions, dtype=float).reshape(-1, 4)
        n = len(self.timestamps)
        if len(self.positions) != n or len(self.quaternions) != n:
            raise InvalidArgumentError("timestamps, positions and orientations differ in length")
        if n > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise InvalidArgumentError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.timestamps)

    def rotations(self) -> np.ndarray:
        return Rotation.from_quat(self.quaternions).as_matrix()

    def slice(self, i, j) -> "Trajectory":
        return Trajectory(self.timestamps[i:j], self.positions[i:j], self.quaternions[i:j])

    @classmethod
    def from_positions(cls, positions, timestamps=None):
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        ts = np.arange(len(positions), dtype=float) if timestamps is None else timestamps
        q = np.tile([0.0, 0.0, 0.0, 1.0], (len(positions), 1))
        return cls(ts, positions, q)

    @classmethod
    def from_poses(cls, world_from_cam, timestamps=None):
        """Build from 4x4 camera-to-world transforms."""
        T = np.asarray(world_from_cam, dtype=float).reshape(-1, 4, 4)
        ts = np.arange(len(T), dtype=float) if timestamps is None else timestamps
        q = Rotation.from_matrix(T[:, :3, :3]).as_quat()
        return cls(ts, T[:, :3, 3], q)


def _recenter(positions, rotations):
    c = len(positions) // 2
    Rc = rotations[c]
    pos = (positions - positions[c]) @ Rc
    pos[c] = 0.0
    rots = np.einsum("ji,njk->nik", Rc, rotations)
    return pos, rots


def split_snippets(traj: Trajectory, n=5):
    """Consecutive non-overlapping ``n``-frame snippets, each expressed in
    the coordinate frame of its central sample.

    Returns a list of ``(positions, rotations)`` tuples.
    """
    if n < 1 or len(traj) < n:
        raise InvalidArgumentError(f"trajectory of {len(traj)} samples is shorter than snippet length {n}")
    R = traj.rotations()
    out = []
    for k in range(len(traj) // n):
        sl = slice(k * n, (k + 1) * n)
        out.append(_recenter(traj.positions[sl], R[sl]))
    return out


def ate_snippet(pred_positions, gt_positions) -> float:
    """RMSE after the least-squares scale alignment of ``pred`` onto ``gt``."""
    p = np.asarray(pred_positions, dtype=float)
    g = np.asarray(gt_positions, dtype=float)
    if p.shape != g.shape:
        raise InvalidArgumentError(f"snippet shapes differ: {p.shape} vs {g.shape}")
    den = np.sum(p * p)
    s = np.sum(p * g) / den if den > 0 else 0.0
    return float(np.sqrt(np.mean(np.sum((s * p - g) ** 2, axis=1))))


@dataclass
class AteReport:
    mean: float
    std: float
    count: int
    per_snippet: np.ndarray | None = None

    def __str__(self):
        return f"{self.mean:.3f}±{self.std:.3f}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["snippet", "ate"])
        for i, e in enumerate(self.per_snippet if self.per_snippet is not None else []):
            w.writerow([i, f"{e:.9f}"])
        w.writerow(["mean", f"{self.mean:.9f}"])
        w.writerow(["std", f"{self.std:.9f}"])
        return buf.getvalue()


def associate(pred: Trajectory, gt: Trajectory, max_dt=0.02):
    """Index pairs matching each prediction to the nearest ground-truth
    timestamp within ``max_dt``; trajectories of equal length with no
    timestamp match are paired by index."""
    if len(gt) == 0 or len(pred) == 0:
        return np.zeros((0, 2), dtype=int)
    idx = np.searchsorted(gt.timestamps, pred.timestamps)
    pairs = []
    for i, j in enumerate(idx):
        best = None
        for k in (j - 1, j):
            if 0 <= k < len(gt):
                dt = abs(gt.timestamps[k] - pred.timestamps[i])
                if dt <= max_dt and (best is None or dt < best[1]):
                    best = (k, dt)
        if best is not None and (not pairs or best[0] > pairs[-1][1]):
            pairs.append((i, best[0]))
    if not pairs and len(pred) == len(gt):
        return np.stack([np.arange(len(pred))] * 2, axis=1)
    return np.array(pairs, dtype=int).reshape(-1, 2)


def ate_report(pred: Trajectory, gt: Trajectory, n=5, max_dt=0.02) -> AteReport:
    pairs = associate(pred, gt, max_dt)
    if len(pairs) < n:
        raise InvalidArgumentError(f"only {len(pairs)} associated samples; need at least {n}")
    p = Trajectory(pred.timestamps[pairs[:, 0]], pred.positions[pairs[:, 0]], pred.quaternions[pairs[:, 0]])
    g = Trajectory(gt.timestamps[pairs[:, 1]], gt.positions[pairs[:, 1]], gt.quaternions[pairs[:, 1]])
    errs = np.array(
        [ate_snippet(ps[0], gs[0]) for ps, gs in zip(split_snippets(p, n), split_snippets(g, n))]
    )
    return AteReport(float(errs.mean()), float(errs.std()), len(errs), errs)

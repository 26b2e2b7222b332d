"""Analytic gradients of the window loss and a finite-difference checker.

The differentiable variables are the full-resolution target depth and the
``n-1`` adjacent Pose6 vectors.  Coarser depth levels depend on the full
resolution grid through average pooling, and non-adjacent transforms depend
on every adjacent pose on their path; both are chain-ruled here.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .geometry import invert, poses_to_window, rotation_jacobians
from .losses import LossConfig, WindowProblem, downsample_adjoint, pyramid
from .warp import _cells, bilinear_sample, project_pixels


@dataclass
class GradientSet:
    depth: np.ndarray
    poses: np.ndarray


def _pose_matrix_grads(window, pair_grads, t):
    """Map ``dC/dT_{t->r}`` onto ``dC/dA_k`` for each adjacent transform."""
    A = window.adjacent
    B = [invert(a) for a in A]
    dA = [np.zeros((4, 4)) for _ in A]
    eye = np.eye(4)
    for r, G in pair_grads.items():
        if r > t:
            # T = A_{r-1} ... A_t
            for k in range(t, r):
                P, Q = eye, eye
                for m in range(r - 1, k, -1):
                    P = P @ A[m]
                for m in range(k - 1, t - 1, -1):
                    Q = Q @ A[m]
                dA[k] += P.T @ G @ Q.T
        else:
            # T = inv(A_{t-1} ... A_r) = B_r B_{r+1} ... B_{t-1}
            for k in range(r, t):
                P, Q = eye, eye
                for m in range(r, k):
                    P = P @ B[m]
                for m in range(k + 1, t):
                    Q = Q @ B[m]
                dB = P.T @ G @ Q.T
                dA[k] += -B[k].T @ dB @ B[k].T
    return dA


def _pose_param_grads(poses, dA):
    out = np.zeros((len(poses), 6))
    for k, (p, g) in enumerate(zip(poses, dA)):
        for j, J in enumerate(rotation_jacobians(p[:3])):
            out[k, j] = np.sum(g[:3, :3] * J)
        out[k, 3:] = g[:3, 3]
    return out


def loss_and_gradients(frames, depth, poses, K, cfg: LossConfig | None = None, problem=None):
    """Loss breakdown and exact gradients w.r.t. depth and adjacent poses.

    ``poses`` is an ``(n-1, 6)`` array.  Pass a prebuilt ``WindowProblem`` to
    skip pyramid construction on repeated calls.
    """
    cfg = cfg or LossConfig()
    problem = problem or WindowProblem(frames, K, cfg)
    poses = np.asarray(poses, dtype=float).reshape(-1, 6)
    window = poses_to_window(poses)
    depths = problem.depth_pyramid(depth)
    breakdown, level_grads, pair_grads = problem.evaluate(depths, window, grad=True)
    g = level_grads[-1]
    for s in range(len(level_grads) - 2, -1, -1):
        g = level_grads[s] + downsample_adjoint(g, depths[s].shape)
    dA = _pose_matrix_grads(window, pair_grads, problem.t)
    return breakdown, GradientSet(depth=g, poses=_pose_param_grads(poses, dA))


@dataclass
class FDConfig:
    h: float = 1e-5
    samples: int = 200
    seed: int = 0
    # components with |analytic| and |numeric| below this are not compared
    min_magnitude: float = 1e-8

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("finite-difference step must be positive")


@dataclass
class FDReport:
    max_rel_err: float
    worst: object
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["coordinate", "analytic", "numeric", "rel_err"])
        for coord, a, n, e in self.rows:
            w.writerow([coord, repr(float(a)), repr(float(n)), repr(float(e))])
        for coord, reason in self.skipped:
            w.writerow([coord, "", "", reason])
        return buf.getvalue()


def finite_difference_check(func, x0, grad, cfg: FDConfig | None = None, coords=None, signature=None, limit=None):
    """Central-difference check of ``grad`` (same shape as ``x0``) for ``func``.

    ``signature(x)`` optionally returns a hashable summary of the nonsmooth
    structure at ``x`` (active bilinear cells, residual signs, validity); a
    coordinate whose perturbation changes it is skipped as a nonsmooth point.
    Checking stops once ``limit`` coordinates have been compared.
    """
    cfg = cfg or FDConfig()
    x0 = np.asarray(x0, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if coords is None:
        rng = np.random.default_rng(cfg.seed)
        k = min(cfg.samples, x0.size)
        coords = np.sort(rng.choice(x0.size, size=k, replace=False))
    base_sig = signature(x0) if signature is not None else None
    rows, skipped = [], []
    worst, worst_err = None, 0.0
    for c in coords:
        if limit is not None and len(rows) >= limit:
            break
        xp = x0.copy().ravel()
        xm = x0.copy().ravel()
        xp[c] += cfg.h
        xm[c] -= cfg.h
        xp, xm = xp.reshape(x0.shape), xm.reshape(x0.shape)
        if signature is not None and not (signature(xp) == base_sig and signature(xm) == base_sig):
            skipped.append((int(c), "skipped: nonsmooth point"))
            continue
        numeric = (func(xp) - func(xm)) / (2 * cfg.h)
        analytic = grad.ravel()[c]
        scale = max(abs(analytic), abs(numeric))
        if scale < cfg.min_magnitude:
            continue
        err = abs(analytic - numeric) / scale
        rows.append((int(c), analytic, numeric, err))
        if err > worst_err or worst is None:
            worst, worst_err = int(c), err
    return FDReport(max_rel_err=worst_err, worst=worst, rows=rows, skipped=skipped)


def nonsmooth_signature(problem: WindowProblem, depth, poses):
    """Discrete state of every kink in the loss: bilinear cells, validity,
    residual signs, smoothness signs and pair exclusions."""
    window = poses_to_window(poses)
    depths = pyramid(depth, problem.cfg.num_scales)
    parts = []
    t = problem.t
    for s, d in enumerate(depths):
        target = problem.frames[t][s]
        for r in problem.sources:
            src = problem.frames[r][s]
            fld = project_pixels(d, problem.K[s], window.relative(t, r), src.shape[:2], rays=problem.rays[s])
            u = np.where(fld.valid, fld.u, 0.0)
            v = np.where(fld.valid, fld.v, 0.0)
            x0, y0, _, _ = _cells(u, v, src.shape[:2])
            recon, mask = bilinear_sample(src, fld)
            parts += [fld.valid.tobytes(), x0.tobytes(), y0.tobytes(), np.sign(target - recon).tobytes()]
        dxx = d[1:-1, :-2] - 2.0 * d[1:-1, 1:-1] + d[1:-1, 2:]
        dyy = d[:-2, 1:-1] - 2.0 * d[1:-1, 1:-1] + d[2:, 1:-1]
        parts += [np.sign(dxx).tobytes(), np.sign(dyy).tobytes()]
    return hash(tuple(parts))


def check_window_gradients(frames, depth, poses, K, cfg: LossConfig | None = None, fd: FDConfig | None = None):
    """Finite-difference report over ``fd.samples`` smooth coordinates.

    Every pose parameter is checked first; the rest of the budget goes to
    depth pixels in random order, skipping nonsmooth ones.
    """
    cfg = cfg or LossConfig()
    fd = fd or FDConfig()
    problem = WindowProblem(frames, K, cfg)
    depth = np.asarray(depth, dtype=float)
    poses = np.asarray(poses, dtype=float).reshape(-1, 6)
    _, grads = loss_and_gradients(frames, depth, poses, K, cfg, problem=problem)
    nd = depth.size
    x0 = np.concatenate([depth.ravel(), poses.ravel()])
    g = np.concatenate([grads.depth.ravel(), grads.poses.ravel()])

    def split(x):
        return x[:nd].reshape(depth.shape), x[nd:].reshape(poses.shape)

    def func(x):
        d, p = split(x)
        return problem.evaluate(d, poses_to_window(p)).total

    def sig(x):
        d, p = split(x)
        return nonsmooth_signature(problem, d, p)

    rng = np.random.default_rng(fd.seed)
    coords = np.concatenate([np.arange(nd, nd + poses.size), rng.permutation(nd)])
    return finite_difference_check(func, x0, g, fd, coords=coords, signature=sig, limit=fd.samples)

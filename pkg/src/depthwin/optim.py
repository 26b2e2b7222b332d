"""Adam-driven photometric optimisation of target depth and window poses."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateOverlapError, InvalidArgumentError
from .geometry import Intrinsics
from .gradients import loss_and_gradients
from .losses import LossConfig, WindowProblem, downsample


@dataclass
class OptimConfig:
    lr: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 2000
    # stop when the loss fell by less than this fraction over `patience` steps
    tol: float = 0.0
    patience: int = 50
    seed: int = 0
    pose_lr_scale: float = 1.0
    coarse_to_fine: bool = False
    coarse_steps: int = 500
    degenerate_limit: int = 10

    def __post_init__(self):
        if not (self.lr > 0 and self.pose_lr_scale > 0 and self.eps > 0):
            raise InvalidArgumentError("learning rates and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgumentError("beta1 and beta2 must lie in [0, 1)")
        if self.max_steps < 1:
            raise InvalidArgumentError("max_steps must be >= 1")


@dataclass
class AdamState:
    step: int
    m: list
    v: list

    @classmethod
    def zeros_like(cls, variables):
        return cls(0, [np.zeros_like(x) for x in variables], [np.zeros_like(x) for x in variables])


def adam_step(variables, gradients, state: AdamState, cfg: OptimConfig, lr_scales=None):
    """One bias-corrected Adam update; returns new variables and state."""
    lr_scales = lr_scales or [1.0] * len(variables)
    t = state.step + 1
    out, ms, vs = [], [], []
    for x, g, m, v, k in zip(variables, gradients, state.m, state.v, lr_scales):
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1**t)
        v_hat = v / (1 - cfg.beta2**t)
        out.append(x - cfg.lr * k * m_hat / (np.sqrt(v_hat) + cfg.eps))
        ms.append(m)
        vs.append(v)
    return out, AdamState(t, ms, vs)


@dataclass
class TraceRecord:
    step: int
    total: float
    per_scale: list
    grad_norm: float


@dataclass
class OptimTrace:
    records: list = field(default_factory=list)
    reason: str = "max-steps"
    depth: np.ndarray | None = None
    poses: np.ndarray | None = None

    def losses(self):
        return np.array([r.total for r in self.records])

    def to_csv(self, num_scales=None) -> str:
        num_scales = num_scales or max((len(r.per_scale) for r in self.records), default=0)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "C"] + [f"C_{s}" for s in range(num_scales)] + ["grad_norm"])
        for r in self.records:
            scales = [repr(float(c)) for c in r.per_scale] + [""] * (num_scales - len(r.per_scale))
            w.writerow([r.step, repr(float(r.total))] + scales + [repr(float(r.grad_norm))])
        return buf.getvalue()


def _run(frames, K, log_depth, poses, loss_cfg, cfg, steps, trace, step0=0):
    problem = WindowProblem(frames, K, loss_cfg)
    state = AdamState.zeros_like([log_depth, poses])
    history = []
    bad = 0
    for k in range(steps):
        depth = np.exp(log_depth)
        try:
            breakdown, grads = loss_and_gradients(frames, depth, poses, K, loss_cfg, problem=problem)
        except DegenerateOverlapError:
            bad += 1
            trace.records.append(TraceRecord(step0 + k, float("nan"), [], float("nan")))
            if bad >= cfg.degenerate_limit:
                return log_depth, poses, "degenerate"
            continue
        bad = 0
        g_log = grads.depth * depth
        gnorm = float(max(np.abs(g_log).max(), np.abs(grads.poses).max()))
        trace.records.append(TraceRecord(step0 + k, float(breakdown.total), [float(s.c_s) for s in breakdown.scales], gnorm))
        history.append(breakdown.total)
        (log_depth, poses), state = adam_step(
            [log_depth, poses], [g_log, grads.poses], state, cfg, [1.0, cfg.pose_lr_scale]
        )
        if cfg.tol > 0 and len(history) > cfg.patience:
            old = history[-cfg.patience - 1]
            if old > 0 and (old - history[-1]) / old < cfg.tol:
                return log_depth, poses, "converged"
    return log_depth, poses, "max-steps"


def _upsample(d, shape):
    """Nearest-neighbour expansion of a quarter-resolution grid, edge padded."""
    up = np.repeat(np.repeat(d, 4, axis=0), 4, axis=1)
    H, W = shape
    up = np.pad(up, ((0, max(0, H - up.shape[0])), (0, max(0, W - up.shape[1]))), mode="edge")
    return up[:H, :W]


def optimize_window(frames, K: Intrinsics, init_depth=None, init_poses=None, loss_cfg=None, cfg=None):
    """Optimise target depth (as log-depth) and adjacent poses.

    Returns ``(depth, poses, trace)``.  Poses are an ``(n-1, 6)`` array of
    Pose6 vectors ``T_{i->i+1}``.
    """
    loss_cfg = loss_cfg or LossConfig()
    cfg = cfg or OptimConfig()
    frames = [np.asarray(f, dtype=float) for f in frames]
    n = len(frames)
    if n < 2:
        raise InvalidArgumentError("window needs at least 2 frames")
    shape = frames[0].shape[:2]
    depth = np.ones(shape) if init_depth is None else np.broadcast_to(np.asarray(init_depth, dtype=float), shape)
    if not np.all(depth > 0):
        raise InvalidArgumentError("initial depth must be strictly positive")
    poses = np.zeros((n - 1, 6)) if init_poses is None else np.array(init_poses, dtype=float).reshape(n - 1, 6)
    log_depth = np.log(depth)
    trace = OptimTrace()
    steps = cfg.max_steps

    if cfg.coarse_to_fine:
        small = [downsample(downsample(f)) for f in frames]
        coarse_cfg = replace(loss_cfg, num_scales=1)
        c_steps = min(cfg.coarse_steps, steps)
        small_log = np.log(downsample(downsample(depth)))
        small_log, poses, reason = _run(small, K.at_scale(2), small_log, poses, coarse_cfg, cfg, c_steps, trace)
        if reason == "degenerate":
            trace.reason = reason
            trace.depth, trace.poses = np.exp(log_depth), poses
            return trace.depth, poses, trace
        log_depth = _upsample(small_log, shape)
        steps -= c_steps

    reason = "max-steps"
    if steps > 0:
        log_depth, poses, reason = _run(frames, K, log_depth, poses, loss_cfg, cfg, steps, trace, len(trace.records))
    trace.reason = reason
    trace.depth = np.exp(log_depth)
    trace.poses = poses
    return trace.depth, poses, trace

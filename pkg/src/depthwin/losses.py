"""Photometric reconstruction, depth smoothness and the multi-scale total loss."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateOverlapError, InvalidArgumentError
from .geometry import FrameWindow, Intrinsics
from .warp import bilinear_sample, pixel_rays, project_pixels


@dataclass
class LossConfig:
    lam: float = 0.5
    num_scales: int = 4
    min_valid_fraction: float = 0.25
    # index of the frame whose depth is optimised; None picks the centre frame
    target: int | None = None
    # quantity the second-difference penalty acts on: "depth" or "disparity"
    smooth_on: str = "depth"

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidArgumentError(f"lam must be >= 0, got {self.lam}")
        if self.num_scales < 1:
            raise InvalidArgumentError(f"num_scales must be >= 1, got {self.num_scales}")
        if not 0.0 <= self.min_valid_fraction <= 1.0:
            raise InvalidArgumentError("min_valid_fraction must lie in [0, 1]")
        if self.smooth_on not in ("depth", "disparity"):
            raise InvalidArgumentError(f"smooth_on must be 'depth' or 'disparity', got {self.smooth_on!r}")

    def target_index(self, n: int) -> int:
        t = n // 2 if self.target is None else self.target
        if not 0 <= t < n:
            raise InvalidArgumentError(f"target index {t} outside window of {n} frames")
        return t


@dataclass
class ScaleLoss:
    scale: int
    c_vr: float
    c_smooth: float
    c_s: float
    counts: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)


@dataclass
class LossBreakdown:
    scales: list
    total: float

    def csv_rows(self):
        rows = []
        for s in self.scales:
            for pair, count in s.counts.items():
                rows.append((s.scale, f"{pair[0]}-{pair[1]}", s.c_vr, s.c_smooth, s.c_s, count))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scale", "pair", "c_vr", "c_smooth", "c_s", "valid_count"])
        for scale, pair, c_vr, c_sm, c_s, count in self.csv_rows():
            w.writerow([scale, pair, repr(c_vr), repr(c_sm), repr(c_s), count])
        return buf.getvalue()


def photometric_loss(target, reconstructions):
    """Mean absolute intensity error over all valid pixels of all sources.

    ``reconstructions`` is a sequence of ``(image, mask)``.  Returns
    ``(loss, counts)`` where ``counts`` lists valid pixels per source.
    """
    target = np.asarray(target, dtype=float)
    channels = target.shape[2] if target.ndim == 3 else 1
    total = 0.0
    counts = []
    for recon, mask in reconstructions:
        mask = np.asarray(mask, dtype=bool)
        if np.asarray(recon).shape != target.shape or mask.shape != target.shape[:2]:
            raise InvalidArgumentError("reconstruction dimensions do not match the target")
        diff = np.abs(target[mask] - np.asarray(recon, dtype=float)[mask])
        total += diff.sum()
        counts.append(int(mask.sum()))
    n = sum(counts)
    if n == 0:
        raise DegenerateOverlapError("no valid pixels in any reconstruction")
    return total / (n * channels), counts


def _second_differences(d):
    dxx = d[1:-1, :-2] - 2.0 * d[1:-1, 1:-1] + d[1:-1, 2:]
    dyy = d[:-2, 1:-1] - 2.0 * d[1:-1, 1:-1] + d[2:, 1:-1]
    return dxx, dyy


def smoothness_loss(depth, with_grad=False):
    """Mean over interior pixels of the absolute horizontal plus vertical
    second differences of ``depth``."""
    d = np.asarray(depth, dtype=float)
    if d.ndim != 2 or min(d.shape) < 3:
        raise InvalidArgumentError(f"smoothness needs a depth map of at least 3x3, got {d.shape}")
    dxx, dyy = _second_differences(d)
    n = dxx.size
    value = (np.abs(dxx).sum() + np.abs(dyy).sum()) / n
    if not with_grad:
        return value
    sx, sy = np.sign(dxx) / n, np.sign(dyy) / n
    g = np.zeros_like(d)
    g[1:-1, :-2] += sx
    g[1:-1, 1:-1] -= 2.0 * sx
    g[1:-1, 2:] += sx
    g[:-2, 1:-1] += sy
    g[1:-1, 1:-1] -= 2.0 * sy
    g[2:, 1:-1] += sy
    return value, g


def downsample(img):
    """2x2 average pooling; an odd trailing row or column is dropped."""
    a = np.asarray(img, dtype=float)
    H, W = a.shape[:2]
    if H < 2 or W < 2:
        raise InvalidArgumentError(f"cannot downsample an image of shape {a.shape}")
    h, w = H // 2, W // 2
    a = a[: 2 * h, : 2 * w]
    return 0.25 * (a[0::2, 0::2] + a[0::2, 1::2] + a[1::2, 0::2] + a[1::2, 1::2])


def downsample_adjoint(grad, full_shape):
    """Transpose of :func:`downsample`: spreads each gradient over its block."""
    g = np.asarray(grad, dtype=float)
    out = np.zeros(tuple(full_shape[:2]) + g.shape[2:])
    q = 0.25 * g
    h, w = g.shape[:2]
    out[0 : 2 * h : 2, 0 : 2 * w : 2] = q
    out[0 : 2 * h : 2, 1 : 2 * w : 2] = q
    out[1 : 2 * h : 2, 0 : 2 * w : 2] = q
    out[1 : 2 * h : 2, 1 : 2 * w : 2] = q
    return out


def pyramid(img, levels):
    out = [np.asarray(img, dtype=float)]
    for _ in range(levels - 1):
        out.append(downsample(out[-1]))
    return out


class WindowProblem:
    """Precomputed image pyramids and rays for repeated loss evaluation.

    :func:`total_loss` and the gradient code both evaluate through
    :meth:`evaluate`, so their loss values are bitwise identical.
    """

    def __init__(self, frames, K: Intrinsics, cfg: LossConfig):
        frames = [np.asarray(f, dtype=float) for f in frames]
        if len(frames) < 2:
            raise InvalidArgumentError("window needs at least 2 frames")
        shape = frames[0].shape
        if any(f.shape != shape for f in frames):
            raise InvalidArgumentError("all frames in a window must share dimensions")
        self.cfg = cfg
        self.n = len(frames)
        self.t = cfg.target_index(self.n)
        self.shape = shape[:2]
        self.channels = shape[2] if len(shape) == 3 else 1
        S = cfg.num_scales
        H, W = self.shape
        if min(H, W) >> (S - 1) < 3:
            raise InvalidArgumentError(
                f"{H}x{W} frames are too small for {S} scales (coarsest level must be >= 3x3)"
            )
        self.frames = [pyramid(f, S) for f in frames]
        self.K = [K.at_scale(s) for s in range(S)]
        self.rays = [pixel_rays(self.frames[0][s].shape[:2], self.K[s]) for s in range(S)]
        self.sources = [r for r in range(self.n) if r != self.t]

    def depth_pyramid(self, depth):
        depth = np.asarray(depth, dtype=float)
        if depth.shape != self.shape:
            raise InvalidArgumentError(f"depth shape {depth.shape} does not match frames {self.shape}")
        return pyramid(depth, self.cfg.num_scales)

    def evaluate(self, depth, window: FrameWindow, grad=False):
        """Loss breakdown, plus per-level depth gradients and per-pair
        ``dC/dT_{t->r}`` (4x4) when ``grad`` is set."""
        cfg = self.cfg
        if window.n != self.n:
            raise InvalidArgumentError(f"pose graph has {window.n} frames, window has {self.n}")
        depths = depth if isinstance(depth, list) else self.depth_pyramid(depth)
        t = self.t
        transforms = {r: window.relative(t, r) for r in self.sources}
        scales = []
        depth_grads = []
        pose_grads = {r: np.zeros((4, 4)) for r in self.sources}
        for s in range(cfg.num_scales):
            target = self.frames[t][s]
            d = depths[s]
            K = self.K[s]
            npix = d.size
            recs, fields, counts, excluded, used = [], [], {}, [], []
            for r in self.sources:
                src = self.frames[r][s]
                fld = project_pixels(d, K, transforms[r], src.shape[:2], rays=self.rays[s])
                sampled = bilinear_sample(src, fld, with_grad=grad)
                count = int(fld.valid.sum())
                counts[(t, r)] = count
                if count < cfg.min_valid_fraction * npix or count == 0:
                    excluded.append((t, r))
                    continue
                recs.append(sampled[:2])
                fields.append((r, fld, sampled))
                used.append(r)
            if not recs:
                detail = ", ".join(f"{p}: {counts[p] / npix:.3f}" for p in counts)
                raise DegenerateOverlapError(
                    f"degenerate overlap at scale {s}; valid fractions {detail}",
                    scale=s,
                    pairs=list(counts),
                )
            c_vr, _ = photometric_loss(target, recs)
            field_ = 1.0 / d if cfg.smooth_on == "disparity" else d
            if grad:
                c_smooth, g_depth = smoothness_loss(field_, with_grad=True)
                g_depth = cfg.lam * g_depth
                if cfg.smooth_on == "disparity":
                    g_depth = -g_depth * field_ * field_
            else:
                c_smooth = smoothness_loss(field_)
            c_vr, c_smooth = float(c_vr), float(c_smooth)
            c_s = c_vr + cfg.lam * c_smooth
            scales.append(ScaleLoss(s, c_vr, c_smooth, c_s, counts, excluded))
            if grad:
                norm = sum(counts[(t, r)] for r in used) * self.channels
                for r, fld, (recon, mask, du, dv) in fields:
                    gd, G = _pair_gradient(target, recon, mask, du, dv, fld, d, K, transforms[r], norm)
                    g_depth += gd
                    pose_grads[r] += G
                depth_grads.append(g_depth)
        total = 0.0
        for rec in scales:
            total += rec.c_s
        breakdown = LossBreakdown(scales, total)
        if not grad:
            return breakdown
        return breakdown, depth_grads, pose_grads


def _pair_gradient(target, recon, mask, du, dv, fld, depth, K, T, norm):
    """Backpropagate one source's mean-absolute residual to depth and T."""
    g_img = np.where(mask[..., None] if target.ndim == 3 else mask, -np.sign(target - recon), 0.0) / norm
    if target.ndim == 3:
        g_u = (g_img * du).sum(axis=2).ravel()
        g_v = (g_img * dv).sum(axis=2).ravel()
    else:
        g_u = (g_img * du).ravel()
        g_v = (g_img * dv).ravel()
    Y = fld.points
    z = np.where(mask.ravel(), Y[2], 1.0)
    gu_z = g_u * K.fx / z
    gv_z = g_v * K.fy / z
    gY = np.stack([gu_z, gv_z, -(gu_z * Y[0] + gv_z * Y[1]) / z])
    R = T[:3, :3]
    rays = fld.rays
    g_depth = ((R.T @ gY) * rays).sum(axis=0).reshape(depth.shape)
    X = rays * depth.ravel()
    G = np.zeros((4, 4))
    G[:3, :3] = gY @ X.T
    G[:3, 3] = gY.sum(axis=1)
    return g_depth, G


def total_loss(frames, depth, window: FrameWindow, K: Intrinsics, cfg: LossConfig | None = None):
    """Multi-scale loss of reconstructing the target frame from every other
    frame of the window.  ``depth`` is the full-resolution target depth or a
    prebuilt pyramid list."""
    cfg = cfg or LossConfig()
    return WindowProblem(frames, K, cfg).evaluate(depth, window)

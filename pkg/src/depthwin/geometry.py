"""Pinhole intrinsics, 6-dof poses, SE(3) algebra and the windowed pose graph.

Conventions used throughout the package:

* Points are column vectors and a transform acts by left multiplication.
* A ``Pose6`` is a length-6 vector ``(rx, ry, rz, tx, ty, tz)``; the rotation
  is ``R = Rz(rz) @ Ry(ry) @ Rx(rx)`` and the translation is applied after it.
* ``T_{i->j}`` maps coordinates expressed in camera ``i`` into camera ``j``.
  ``compose(first, then)`` applies ``first`` and then ``then``, so
  ``T_{i->i+2} = compose(T_{i->i+1}, T_{i+1->i+2})``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateOrientationError, InvalidArgumentError

GIMBAL_EPS = 1e-6
REORTHO_EVERY = 32


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise InvalidArgumentError("principal point must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def at_scale(self, s: int) -> "Intrinsics":
        """Intrinsics for pyramid level ``s`` (every entry times ``2**-s``)."""
        k = 2.0 ** (-s)
        return Intrinsics(self.fx * k, self.fy * k, self.cx * k, self.cy * k)

    def resized(self, old_wh, new_wh) -> "Intrinsics":
        """Rescale for an image resized from ``old_wh`` to ``new_wh`` with
        :func:`depthwin.io.resize` (output pixel ``i`` covers input
        ``(i + 0.5) * w / w' - 0.5``)."""
        (w, h), (w2, h2) = old_wh, new_wh
        sx, sy = w2 / w, h2 / h
        return Intrinsics(
            self.fx * sx, self.fy * sy, (self.cx + 0.5) * sx - 0.5, (self.cy + 0.5) * sy - 0.5
        )

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(g):
    c, s = np.cos(g), np.sin(g)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _dry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drz(g):
    c, s = np.cos(g), np.sin(g)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def _as_pose(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape != (6,):
        raise InvalidArgumentError(f"pose must have 6 components, got {p.shape[0]}")
    if not np.all(np.isfinite(p)):
        raise InvalidArgumentError(f"pose has non-finite components: {p}")
    return p


def euler_to_rotation(rot) -> np.ndarray:
    a, b, g = rot
    return _rz(g) @ _ry(b) @ _rx(a)


def rotation_jacobians(rot):
    """Closed-form ``dR/drx, dR/dry, dR/drz`` for the ZYX parameterisation."""
    a, b, g = rot
    Rx, Ry, Rz = _rx(a), _ry(b), _rz(g)
    return (Rz @ Ry @ _drx(a), Rz @ _dry(b) @ Rx, _drz(g) @ Ry @ Rx)


def pose_to_se3(p) -> np.ndarray:
    p = _as_pose(p)
    T = np.eye(4)
    T[:3, :3] = euler_to_rotation(p[:3])
    T[:3, 3] = p[3:]
    return T


def se3_to_pose(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    R = T[:3, :3]
    cb = np.hypot(R[0, 0], R[1, 0])
    if cb < GIMBAL_EPS:
        raise DegenerateOrientationError(f"|cos(ry)| = {cb:.3e} is within gimbal-lock threshold")
    ry = np.arctan2(-R[2, 0], cb)
    rx = np.arctan2(R[2, 1], R[2, 2])
    rz = np.arctan2(R[1, 0], R[0, 0])
    return np.array([rx, ry, rz, T[0, 3], T[1, 3], T[2, 3]])


def translation(x, y, z) -> np.ndarray:
    T = np.eye(4)
    T[:3, 3] = (x, y, z)
    return T


def compose(first, then) -> np.ndarray:
    """Transform equivalent to applying ``first`` and then ``then``."""
    out = np.asarray(then, dtype=float) @ np.asarray(first, dtype=float)
    out[3] = (0.0, 0.0, 0.0, 1.0)
    return out


def invert(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    R, t = T[:3, :3], T[:3, 3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ t
    return out


def orthonormalize(R, tol=1e-15, max_iter=20) -> np.ndarray:
    """Nearest rotation by iterated averaging with the inverse transpose."""
    R = np.array(R, dtype=float)
    for _ in range(max_iter):
        nxt = 0.5 * (R + np.linalg.inv(R).T)
        if np.max(np.abs(nxt - R)) < tol:
            return nxt
        R = nxt
    return R


def compose_chain(transforms) -> np.ndarray:
    """Fold ``compose`` over a sequence; first element is applied first."""
    out = np.eye(4)
    for k, T in enumerate(transforms, start=1):
        out = compose(out, T)
        if k % REORTHO_EVERY == 0:
            out[:3, :3] = orthonormalize(out[:3, :3])
    return out


def is_se3(T, tol=1e-9) -> bool:
    T = np.asarray(T)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        return False
    R = T[:3, :3]
    return (
        np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0])
        and np.max(np.abs(R @ R.T - np.eye(3))) < tol
        and abs(np.linalg.det(R) - 1.0) < tol
    )


@dataclass
class FrameWindow:
    n: int
    adjacent: list
    pairs: dict = field(default_factory=dict)

    def relative(self, t: int, r: int) -> np.ndarray:
        """``T_{t->r}`` for any two distinct frames; uses inversion when r < t."""
        if t == r:
            return np.eye(4)
        if t < r:
            return self.pairs[(t, r)]
        return invert(self.pairs[(r, t)])


def build_pose_graph(adjacent, n=None) -> FrameWindow:
    adjacent = [np.asarray(T, dtype=float) for T in adjacent]
    if n is None:
        n = len(adjacent) + 1
    if n < 2:
        raise InvalidArgumentError(f"window needs at least 2 frames, got {n}")
    if len(adjacent) != n - 1:
        raise InvalidArgumentError(f"expected {n - 1} adjacent transforms, got {len(adjacent)}")
    pairs = {}
    for i in range(n - 1):
        acc = adjacent[i]
        pairs[(i, i + 1)] = acc
        for j in range(i + 2, n):
            acc = compose(acc, adjacent[j - 1])
            if (j - i) % REORTHO_EVERY == 0:
                acc[:3, :3] = orthonormalize(acc[:3, :3])
            pairs[(i, j)] = acc
    return FrameWindow(n=n, adjacent=adjacent, pairs=pairs)


def poses_to_window(poses) -> FrameWindow:
    """Pose graph from an ``(n-1, 6)`` array of adjacent Pose6 vectors."""
    poses = np.asarray(poses, dtype=float).reshape(-1, 6)
    return build_pose_graph([pose_to_se3(p) for p in poses], len(poses) + 1)


def relative_from_world(world_i, world_j) -> np.ndarray:
    """``T_{i->j}`` from camera-from-world transforms of frames i and j."""
    return compose(invert(world_i), world_j)

"""Depth-and-pose driven view synthesis.

Images are float arrays of shape ``(H, W)`` or ``(H, W, C)`` with values in
[0, 1]; depth maps are ``(H, W)`` arrays of positive depths.  Pixel ``(row v,
column u)`` sits at continuous coordinate ``(u, v)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

Z_MIN = 1e-6
SNAP_TOL = 1e-9


@dataclass
class WarpField:
    """Per-target-pixel source coordinates.

    ``u``, ``v`` and ``valid`` have the target's ``(H, W)`` shape; ``z`` is the
    depth of each point in the source camera and ``points`` the transformed
    3D points ``(3, H*W)``, kept for the gradient pass.
    """

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    z: np.ndarray
    points: np.ndarray | None = None
    rays: np.ndarray | None = None


def check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise InvalidArgumentError(f"image must be HxW or HxWx{{1,3}}, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min(initial=0.0) < 0.0 or img.max(initial=0.0) > 1.0:
        raise InvalidArgumentError("image values must be finite and within [0, 1]")
    return img


def check_depth(depth) -> np.ndarray:
    depth = np.asarray(depth, dtype=float)
    if depth.ndim != 2:
        raise InvalidArgumentError(f"depth map must be 2-D, got shape {depth.shape}")
    if not np.all(np.isfinite(depth)) or not np.all(depth > 0):
        raise InvalidArgumentError("depth values must be finite and positive")
    return depth


def pixel_rays(shape, K) -> np.ndarray:
    """Back-projected unit-depth rays ``K^-1 [u, v, 1]`` as a ``(3, H*W)`` array."""
    H, W = shape
    v, u = np.mgrid[0:H, 0:W].astype(float)
    return np.stack(
        [((u - K.cx) / K.fx).ravel(), ((v - K.cy) / K.fy).ravel(), np.ones(H * W)]
    )


def _snap(c):
    # round-off from K^-1 then K must not move an integral coordinate off its
    # cell or across the image border
    r = np.round(c)
    return np.where(np.abs(c - r) < SNAP_TOL, r, c)


def project_pixels(depth, K, T, source_shape=None, rays=None) -> WarpField:
    """Where each target pixel lands in the source image.

    ``T`` is ``T_{t->r}``.  A pixel is invalid when its transformed depth is at
    or below ``Z_MIN`` or the projection falls outside ``[0, W-1] x [0, H-1]``
    of the source image.
    """
    depth = np.asarray(depth, dtype=float)
    H, W = depth.shape
    Hs, Ws = source_shape if source_shape is not None else (H, W)
    if rays is None:
        rays = pixel_rays((H, W), K)
    T = np.asarray(T, dtype=float)
    X = rays * depth.ravel()
    Y = T[:3, :3] @ X + T[:3, 3:4]
    z = Y[2]
    front = z > Z_MIN
    zs = np.where(front, z, 1.0)
    u = _snap(K.fx * Y[0] / zs + K.cx)
    v = _snap(K.fy * Y[1] / zs + K.cy)
    valid = front & (u >= 0.0) & (u <= Ws - 1) & (v >= 0.0) & (v <= Hs - 1)
    return WarpField(
        u=u.reshape(H, W),
        v=v.reshape(H, W),
        valid=valid.reshape(H, W),
        z=z.reshape(H, W),
        points=Y,
        rays=rays,
    )


def _cells(u, v, shape):
    """Upper-left corner of the bilinear cell and fractional offsets.

    The cell is ``floor`` of the coordinate, pulled one step back on the last
    row/column so all four neighbours exist.
    """
    H, W = shape
    x0 = np.clip(np.floor(u), 0, max(W - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(v), 0, max(H - 2, 0)).astype(np.intp)
    return x0, y0, u - x0, v - y0


def bilinear_weights(u, v, shape):
    x0, y0, a, b = _cells(u, v, shape)
    return x0, y0, ((1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b)


def _neighbours(img, x0, y0):
    H, W = img.shape[:2]
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    return img[y0, x0], img[y0, x1], img[y1, x0], img[y1, x1]


def bilinear_sample(img, coords: WarpField, with_grad=False):
    """Sample ``img`` at the warp-field coordinates.

    Returns ``(image, mask)``; invalid pixels are zero.  With ``with_grad``
    also returns the image derivatives with respect to ``u`` and ``v``.
    """
    img = np.asarray(img, dtype=float)
    chan = img.ndim == 3
    valid = coords.valid
    u = np.where(valid, coords.u, 0.0)
    v = np.where(valid, coords.v, 0.0)
    x0, y0, a, b = _cells(u, v, img.shape[:2])
    i00, i01, i10, i11 = _neighbours(img, x0, y0)
    if chan:
        a, b = a[..., None], b[..., None]
    out = (1 - a) * (1 - b) * i00 + a * (1 - b) * i01 + (1 - a) * b * i10 + a * b * i11
    m = valid[..., None] if chan else valid
    out = np.where(m, out, 0.0)
    if not with_grad:
        return out, valid.copy()
    du = np.where(m, (1 - b) * (i01 - i00) + b * (i11 - i10), 0.0)
    dv = np.where(m, (1 - a) * (i10 - i00) + a * (i11 - i01), 0.0)
    return out, valid.copy(), du, dv


def reconstruct(target_depth, source, K, T_t_to_r):
    """Target image synthesised by sampling ``source`` through depth and pose."""
    source = np.asarray(source, dtype=float)
    field = project_pixels(target_depth, K, T_t_to_r, source_shape=source.shape[:2])
    return bilinear_sample(source, field)

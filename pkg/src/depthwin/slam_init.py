"""Feature-based map initialization with a depth-estimation fallback.

Consecutive frame pairs are matched until one yields at least ``M``
correspondences carrying depth at both ends.  When a pair falls short, the
fallback depth provider is queried once for that pair and the matching is
repeated with depth-gated candidate search.  The first pair that succeeds
fixes the relative pose by least-squares rigid alignment of the matched
3-D points.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateGeometryError, InvalidArgumentError
from .geometry import Intrinsics


@dataclass
class InitConfig:
    M: int = 100
    max_frames: int = 30
    corner_threshold: float = 3e-8  # Harris response on [0, 1] intensities
    harris_k: float = 0.04
    harris_sigma: float = 1.0
    nms_radius: int = 2
    patch_size: int = 7
    search_radius: int = 8
    max_ssd: float = 0.01  # mean squared patch difference accepted as a match
    depth_gate: float = 0.2

    def __post_init__(self):
        if self.M < 8:
            raise InvalidArgumentError(f"M must be >= 8, got {self.M}")
        if self.max_frames < 2:
            raise InvalidArgumentError(f"max_frames must be >= 2, got {self.max_frames}")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise InvalidArgumentError(f"patch_size must be odd and positive, got {self.patch_size}")
        if self.search_radius < 0 or self.nms_radius < 0:
            raise InvalidArgumentError("search and suppression radii must be >= 0")
        if not 0 < self.depth_gate:
            raise InvalidArgumentError("depth_gate must be positive")


@dataclass
class MatchResult:
    """Pixel correspondences ``(u, v)`` in frames A and B, with depth at
    each end when known."""

    pts_a: np.ndarray
    pts_b: np.ndarray
    depth_a: np.ndarray | None = None
    depth_b: np.ndarray | None = None

    def __post_init__(self):
        self.pts_a = np.asarray(self.pts_a, dtype=float).reshape(-1, 2)
        self.pts_b = np.asarray(self.pts_b, dtype=float).reshape(-1, 2)
        if len(self.pts_a) != len(self.pts_b):
            raise InvalidArgumentError("correspondence lists differ in length")
        for name in ("depth_a", "depth_b"):
            d = getattr(self, name)
            if d is not None:
                d = np.asarray(d, dtype=float).reshape(-1)
                if len(d) != len(self.pts_a):
                    raise InvalidArgumentError(f"{name} does not match the correspondence count")
                setattr(self, name, d)

    @property
    def count(self) -> int:
        return len(self.pts_a)

    def __len__(self):
        return self.count

    def with_depth(self) -> "MatchResult":
        """Only the correspondences with a positive depth at both ends."""
        if self.depth_a is None or self.depth_b is None:
            return MatchResult(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros(0))
        keep = (self.depth_a > 0) & (self.depth_b > 0)
        return MatchResult(self.pts_a[keep], self.pts_b[keep], self.depth_a[keep], self.depth_b[keep])


def harris_response(img, k=0.04, sigma=1.0):
    img = np.asarray(img, dtype=float)
    if img.ndim == 3:
        img = img.mean(axis=2)
    ix = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
    iy = ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    sxx = ndimage.gaussian_filter(ix * ix, sigma)
    syy = ndimage.gaussian_filter(iy * iy, sigma)
    sxy = ndimage.gaussian_filter(ix * iy, sigma)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_corners(img, cfg: InitConfig) -> np.ndarray:
    """Local maxima of the Harris response above threshold, as integer
    ``(u, v)`` rows in raster order.  Corners too close to the border for a
    full patch are dropped."""
    R = harris_response(img, cfg.harris_k, cfg.harris_sigma)
    size = 2 * cfg.nms_radius + 1
    peaks = (R == ndimage.maximum_filter(R, size=size, mode="nearest")) & (R > cfg.corner_threshold)
    m = cfg.patch_size // 2 + 1
    peaks[:m] = peaks[-m:] = False
    peaks[:, :m] = peaks[:, -m:] = False
    v, u = np.nonzero(peaks)
    return np.stack([u, v], axis=1)


def _patches(img, pts, half):
    offs = np.arange(-half, half + 1)
    rows = pts[:, 1, None, None] + offs[None, :, None]
    cols = pts[:, 0, None, None] + offs[None, None, :]
    return img[rows, cols].reshape(len(pts), -1)


def detect_and_match(a, b, cfg: InitConfig | None = None, depth_a=None, depth_b=None, gate=False) -> MatchResult:
    """Mutual-best patch-SSD matching of Harris corners within a search radius.

    With ``gate`` set, a candidate is admissible only if the two depths agree
    within ``cfg.depth_gate`` (relative); this needs both depth maps.
    """
    cfg = cfg or InitConfig()
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if gate and (depth_a is None or depth_b is None):
        raise InvalidArgumentError("depth-gated matching needs both depth maps")
    ga = a.mean(axis=2) if a.ndim == 3 else a
    gb = b.mean(axis=2) if b.ndim == 3 else b
    ca, cb = detect_corners(ga, cfg), detect_corners(gb, cfg)
    empty = MatchResult(np.zeros((0, 2)), np.zeros((0, 2)))
    if len(ca) == 0 or len(cb) == 0:
        return empty
    half = cfg.patch_size // 2
    pa, pb = _patches(ga, ca, half), _patches(gb, cb, half)
    ssd = (
        (pa * pa).sum(axis=1)[:, None] + (pb * pb).sum(axis=1)[None, :] - 2.0 * pa @ pb.T
    ) / pa.shape[1]
    offset = ca[:, None, :] - cb[None, :, :]
    allowed = (np.abs(offset) <= cfg.search_radius).all(axis=2) & (ssd <= cfg.max_ssd)
    if gate:
        za = np.asarray(depth_a, dtype=float)[ca[:, 1], ca[:, 0]][:, None]
        zb = np.asarray(depth_b, dtype=float)[cb[:, 1], cb[:, 0]][None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            allowed &= (za > 0) & (zb > 0) & (np.abs(zb - za) <= cfg.depth_gate * za)
    cost = np.where(allowed, ssd, np.inf)
    best_b = np.argmin(cost, axis=1)
    best_a = np.argmin(cost, axis=0)
    ia = np.arange(len(ca))
    keep = np.isfinite(cost[ia, best_b]) & (best_a[best_b] == ia)
    ia, ib = ia[keep], best_b[keep]
    ua, ub = ca[ia], cb[ib]

    def lookup(depth, pts):
        return None if depth is None else np.asarray(depth, dtype=float)[pts[:, 1], pts[:, 0]]

    return MatchResult(ua, ub, lookup(depth_a, ua), lookup(depth_b, ub))


def rigid_align(points_a, points_b) -> np.ndarray:
    """Rigid transform ``T`` minimising ``sum ||T a_i - b_i||^2``.

    Planar point sets are well posed (the reflection fix pins the normal),
    so only collinear or coincident sets are rejected.
    """
    A = np.asarray(points_a, dtype=float).reshape(-1, 3)
    B = np.asarray(points_b, dtype=float).reshape(-1, 3)
    if A.shape != B.shape:
        raise InvalidArgumentError(f"point sets differ in shape: {A.shape} vs {B.shape}")
    if len(A) < 3:
        raise DegenerateGeometryError(f"need at least 3 correspondences, got {len(A)}")
    ma, mb = A.mean(axis=0), B.mean(axis=0)
    H = (A - ma).T @ (B - mb)
    sv = np.linalg.svd(A - ma, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateGeometryError("correspondences are collinear or coincident")
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = mb - R @ ma
    return T


def backproject(pts, depth, K: Intrinsics):
    pts = np.asarray(pts, dtype=float)
    x = (pts[:, 0] - K.cx) / K.fx
    y = (pts[:, 1] - K.cy) / K.fy
    return np.stack([x, y, np.ones_like(x)], axis=1) * np.asarray(depth, dtype=float)[:, None]


class OracleDepth:
    """Depth provider backed by known depth maps, optionally degraded by a
    global scale error and seeded multiplicative noise."""

    def __init__(self, depths, scale=1.0, noise=0.0, seed=0):
        self.depths = [np.asarray(d, dtype=float) for d in depths]
        self.scale = scale
        self.noise = noise
        self.seed = seed
        self.calls = 0

    def __call__(self, index, image=None):
        self.calls += 1
        d = self.depths[index] * self.scale
        if self.noise > 0:
            rng = np.random.default_rng([self.seed, index])
            d = d * (1.0 + self.noise * rng.standard_normal(d.shape))
        return d


@dataclass
class PairRecord:
    pair: tuple
    matches: int
    fallback: bool = False
    fallback_matches: int | None = None


@dataclass
class InitOutcome:
    initialized: bool
    frames_consumed: int
    fallbacks: int
    pose: np.ndarray | None = None  # T_{a->b} of the initializing pair
    trace: list = field(default_factory=list)

    def to_dict(self):
        return {
            "initialized": self.initialized,
            "frames_consumed": self.frames_consumed,
            "fallbacks": self.fallbacks,
            "pose": None if self.pose is None else self.pose.tolist(),
            "trace": [
                {"pair": list(r.pair), "matches": r.matches, "fallback": r.fallback, "fallback_matches": r.fallback_matches}
                for r in self.trace
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def init_table_csv(scene, baseline: InitOutcome, fallback: InitOutcome) -> str:
    """One-row comparison of frames used to initialize without and with the
    depth fallback."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scene", "baseline_frames", "fallback_frames", "baseline_initialized", "fallback_initialized"])
    w.writerow([scene, baseline.frames_consumed, fallback.frames_consumed, int(baseline.initialized), int(fallback.initialized)])
    return buf.getvalue()


def initialize(frames, depths, depth_source=None, cfg: InitConfig | None = None, K: Intrinsics | None = None, matcher=None) -> InitOutcome:
    """Walk consecutive pairs until one yields ``cfg.M`` depth-carrying matches.

    ``depths`` holds the sensor depth per frame (``None`` when missing).
    ``depth_source(index, image)`` supplies re-estimated depth; pass ``None``
    to disable the fallback.  ``matcher`` defaults to :func:`detect_and_match`.
    """
    cfg = cfg or InitConfig()
    frames = list(frames)
    depths = list(depths) if depths is not None else [None] * len(frames)
    if len(frames) < 2:
        raise InvalidArgumentError("initialization needs at least 2 frames")
    if len(depths) != len(frames):
        raise InvalidArgumentError("one depth entry per frame is required")
    matcher = matcher or detect_and_match
    limit = min(cfg.max_frames, len(frames))
    trace = []
    fallbacks = 0
    for k in range(limit - 1):
        a, b = frames[k], frames[k + 1]
        res = matcher(a, b, cfg, depth_a=depths[k], depth_b=depths[k + 1], gate=False).with_depth()
        rec = PairRecord((k, k + 1), res.count)
        trace.append(rec)
        if res.count < cfg.M and depth_source is not None:
            fallbacks += 1
            da, db = depth_source(k, a), depth_source(k + 1, b)
            res = matcher(a, b, cfg, depth_a=da, depth_b=db, gate=True).with_depth()
            rec.fallback = True
            rec.fallback_matches = res.count
        if res.count < cfg.M:
            continue
        pose = None
        if K is not None:
            try:
                pose = rigid_align(backproject(res.pts_a, res.depth_a, K), backproject(res.pts_b, res.depth_b, K))
            except DegenerateGeometryError:
                continue
        return InitOutcome(True, k + 2, fallbacks, pose, trace)
    return InitOutcome(False, limit, fallbacks, None, trace)

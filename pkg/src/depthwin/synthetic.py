"""Analytic synthetic scenes with known depth and camera poses.

Scenes are planes textured with a seeded procedural pattern (value-noise
octaves plus sine bands).  Rendering intersects each pixel ray with the scene
analytically, so the returned depth is exact and every frame is a pure
function of the scene spec and the camera pose.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError, InvalidSceneError
from .geometry import Intrinsics, invert, pose_to_se3, relative_from_world
from .warp import pixel_rays

GEOMETRIES = ("fronto", "slanted", "step")
DEPTH_RANGE = (0.5, 100.0)


@dataclass
class TextureSpec:
    seed: int = 0
    octaves: int = 4
    base_frequency: float = 0.6  # lattice cells per scene unit at the coarsest octave
    noise_amplitude: float = 0.9
    band_amplitude: float = 0.12
    band_frequency: float = 1.3  # cycles per scene unit
    band_angle: float = 0.5
    contrast: float = 1.0


@dataclass
class SensorSpec:
    """Simulated RGB-D depth sensor: holes where the true depth exceeds
    ``max_range``, where the image is saturated, and at random."""

    max_range: float = 10.0
    dropout: float = 0.0
    seed: int = 0


@dataclass
class SceneSpec:
    geometry: str = "slanted"
    # plane n . X = offset in world coordinates (n normalised internally)
    normal: tuple = (0.0, 0.0, 1.0)
    offset: float = 3.0
    # step scene: near fronto-parallel plane covering world x < step_x
    near_depth: float = 2.0
    step_x: float = 0.0
    width: int = 128
    height: int = 64
    intrinsics: dict = field(default_factory=lambda: {"fx": 100.0, "fy": 100.0, "cx": 63.5, "cy": 31.5})
    texture: TextureSpec = field(default_factory=TextureSpec)
    # fraction of pixels driven into saturation by a lighting ramp (0 = off)
    saturation: float = 0.0
    sensor: SensorSpec | None = None

    def __post_init__(self):
        if isinstance(self.texture, dict):
            self.texture = TextureSpec(**self.texture)
        if isinstance(self.sensor, dict):
            self.sensor = SensorSpec(**self.sensor)
        if self.geometry not in GEOMETRIES:
            raise InvalidArgumentError(f"unknown geometry {self.geometry!r}; expected one of {GEOMETRIES}")
        self.normal = tuple(float(x) for x in self.normal)

    @property
    def K(self) -> Intrinsics:
        return Intrinsics.from_dict(self.intrinsics)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def weak_texture(spec: SceneSpec, contrast=0.67) -> SceneSpec:
    """Low-contrast variant; the default brings the standard texture's
    intensity variance from about 0.045 down to about 0.02."""
    return replace(spec, texture=replace(spec.texture, contrast=contrast))


def strong_lighting(spec: SceneSpec, fraction=0.2) -> SceneSpec:
    """Variant whose lighting ramp saturates ``fraction`` of the pixels."""
    return replace(spec, saturation=fraction)


class _Texture:
    def __init__(self, spec: TextureSpec):
        rng = np.random.default_rng(spec.seed)
        self.spec = spec
        self.perm = [rng.permutation(256) for _ in range(spec.octaves)]
        self.values = [rng.random(256) for _ in range(spec.octaves)]
        self.phase = rng.uniform(0, 2 * np.pi)

    @staticmethod
    def _fade(t):
        return t * t * t * (t * (t * 6 - 15) + 10)

    def _noise(self, a, b, o):
        perm, vals = self.perm[o], self.values[o]
        ia, ib = np.floor(a), np.floor(b)
        fa, fb = self._fade(a - ia), self._fade(b - ib)
        ia = ia.astype(np.int64)
        ib = ib.astype(np.int64)

        def h(i, j):
            return vals[perm[(perm[i & 255] + j) & 255]]

        top = h(ia, ib) * (1 - fa) + h(ia + 1, ib) * fa
        bot = h(ia, ib + 1) * (1 - fa) + h(ia + 1, ib + 1) * fa
        return top * (1 - fb) + bot * fb

    def __call__(self, a, b):
        s = self.spec
        acc = np.zeros_like(a)
        amp, freq, norm = 1.0, s.base_frequency, 0.0
        for o in range(s.octaves):
            acc += amp * (self._noise(a * freq, b * freq, o) - 0.5)
            norm += amp
            amp *= 0.6
            freq *= 2.0
        signal = s.noise_amplitude * acc / norm * 2.0
        d = a * np.cos(s.band_angle) + b * np.sin(s.band_angle)
        signal += s.band_amplitude * np.sin(2 * np.pi * s.band_frequency * d + self.phase)
        return np.clip(0.5 + s.contrast * signal, 0.0, 1.0)


def _plane_basis(n):
    n = np.asarray(n, dtype=float)
    up = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(up, n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


@dataclass
class RenderedFrame:
    image: np.ndarray
    depth: np.ndarray
    pose: np.ndarray  # camera-from-world


def _intersect(center, dirs, n, c):
    denom = n @ dirs
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = (c - n @ center) / denom
    lam[~np.isfinite(lam)] = -1.0
    return lam


def render(spec: SceneSpec, pose) -> RenderedFrame:
    """Render the scene seen by a camera with camera-from-world ``pose``."""
    W = np.asarray(pose, dtype=float)
    if W.shape == (6,):
        W = pose_to_se3(W)
    K = spec.K
    H, Wd = spec.height, spec.width
    rays = pixel_rays((H, Wd), K)
    cam_to_world = invert(W)
    R, center = cam_to_world[:3, :3], cam_to_world[:3, 3]
    dirs = R @ rays
    tex = _Texture(spec.texture)

    if spec.geometry in ("fronto", "slanted"):
        n = np.asarray(spec.normal if spec.geometry == "slanted" else (0.0, 0.0, 1.0))
        n = n / np.linalg.norm(n)
        lam = _intersect(center, dirs, n, spec.offset)
        pts = center[:, None] + lam * dirs
        e1, e2 = _plane_basis(n)
        a, b = e1 @ pts, e2 @ pts
    else:
        n = np.array([0.0, 0.0, 1.0])
        lam_near = _intersect(center, dirs, n, spec.near_depth)
        lam_far = _intersect(center, dirs, n, spec.offset)
        near_pts = center[:, None] + lam_near * dirs
        use_near = (lam_near > 0) & (near_pts[0] < spec.step_x)
        lam = np.where(use_near, lam_near, lam_far)
        pts = center[:, None] + lam * dirs
        a = pts[0]
        b = np.where(use_near, pts[1], pts[1] + 37.0)

    if np.any(lam <= 0):
        raise InvalidSceneError(f"{int(np.sum(lam <= 0))} rays miss every surface")
    depth = lam.reshape(H, Wd)
    if depth.min() < DEPTH_RANGE[0] or depth.max() > DEPTH_RANGE[1]:
        raise InvalidSceneError(
            f"scene depth range [{depth.min():.3f}, {depth.max():.3f}] outside {DEPTH_RANGE}"
        )
    image = tex(a, b).reshape(H, Wd)
    if spec.saturation > 0:
        image = _saturate(image, spec.saturation)
    return RenderedFrame(image=image, depth=depth, pose=W)


def _saturate(image, fraction):
    """Add a left-to-right brightness ramp offset so ``fraction`` of the
    pixels clip at 1."""
    H, W = image.shape
    ramp = 0.6 * np.linspace(0.0, 1.0, W)[None, :]
    lit = image + ramp
    shift = 1.0 - np.quantile(lit, 1.0 - fraction)
    return np.clip(lit + shift, 0.0, 1.0)


def render_window(spec: SceneSpec, poses):
    """Render frames for camera-from-world ``poses`` and return them with
    the ground-truth adjacent relative transforms ``T_{i->i+1}``."""
    frames = [render(spec, p) for p in poses]
    adjacent = [relative_from_world(a.pose, b.pose) for a, b in zip(frames[:-1], frames[1:])]
    return frames, adjacent


def sensor_depth(frame: RenderedFrame, sensor: SensorSpec, index=0):
    """Depth as a range sensor would report it; holes are 0."""
    d = frame.depth.copy()
    holes = (d > sensor.max_range) | (frame.image >= 1.0)
    if sensor.dropout > 0:
        rng = np.random.default_rng([sensor.seed, index])
        holes |= rng.random(d.shape) < sensor.dropout
    d[holes] = 0.0
    return d


def camera_track(n, baseline=0.1, direction=(1.0, 0.0, 0.0), rotation_step=(0.0, 0.0, 0.0), start=(0.0, 0.0, 0.0)):
    """Camera-from-world poses for a camera moving ``baseline`` per frame."""
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    out = []
    for i in range(n):
        c = np.asarray(start, dtype=float) + i * baseline * direction
        cam_to_world = pose_to_se3(np.concatenate([i * np.asarray(rotation_step, dtype=float), c]))
        out.append(invert(cam_to_world))
    return out


def slanted_spec(width=128, height=64, seed=0, slope=0.35, depth=3.0, axis="vertical", **kw) -> SceneSpec:
    """Tilted plane at ``depth`` on the optical axis.

    ``axis="vertical"`` tilts about the image x axis so depth grows towards
    the top rows (a ground-plane-like layout); ``"horizontal"`` tilts about
    the y axis so depth grows left to right.
    """
    n = np.array([-slope, 0.0, 1.0]) if axis == "horizontal" else np.array([0.0, slope, 1.0])
    n /= np.linalg.norm(n)
    f = 100.0 * width / 128.0
    intr = {"fx": f, "fy": f, "cx": (width - 1) / 2.0, "cy": (height - 1) / 2.0}
    return SceneSpec(
        geometry="slanted",
        normal=tuple(n),
        offset=float(n[2] * depth),
        width=width,
        height=height,
        intrinsics=intr,
        texture=TextureSpec(seed=seed),
        **kw,
    )


def synthetic_window(n=3, width=128, height=64, seed=0, baseline=0.1, spec=None, rotation_step=(0.0, 0.004, 0.0)):
    """Standard oracle window: slanted plane, camera sliding sideways.

    Returns ``(frames, adjacent, spec)``.
    """
    spec = spec or slanted_spec(width=width, height=height, seed=seed)
    start = (-(n - 1) / 2.0 * baseline, 0.0, 0.0)
    poses = camera_track(n, baseline=baseline, rotation_step=rotation_step, start=start)
    frames, adjacent = render_window(spec, poses)
    return frames, adjacent, spec


INIT_SCENES = ("rich", "weak", "strong-light")


@dataclass
class InitSequence:
    images: list
    sensor_depths: list
    depths: list
    adjacent: list
    spec: SceneSpec


def init_sequence(kind="rich", n=20, seed=0, width=160, height=120) -> InitSequence:
    """Forward-moving camera over a fine-grained slanted plane, rendered for
    initialization studies.

    ``"rich"`` has full sensor coverage.  ``"weak"`` lowers the texture
    contrast and ``"strong-light"`` saturates part of the image; both pair
    that with a short-range, lossy depth sensor.
    """
    if kind not in INIT_SCENES:
        raise InvalidArgumentError(f"unknown init scene {kind!r}; expected one of {INIT_SCENES}")
    spec = slanted_spec(width=width, height=height, seed=seed, slope=0.6, depth=3.0)
    spec = replace(spec, texture=replace(spec.texture, base_frequency=2.0, octaves=5))
    if kind == "rich":
        sensor = SensorSpec(max_range=10.0, seed=seed)
    elif kind == "weak":
        spec = weak_texture(spec)
        sensor = SensorSpec(max_range=2.9, dropout=0.3, seed=seed)
    else:
        spec = strong_lighting(spec)
        sensor = SensorSpec(max_range=3.0, dropout=0.2, seed=seed)
    spec = replace(spec, sensor=sensor)
    frames, adjacent = render_window(spec, camera_track(n, baseline=0.05, direction=(0.1, 0.0, 1.0)))
    return InitSequence(
        images=[f.image for f in frames],
        sensor_depths=[sensor_depth(f, sensor, i) for i, f in enumerate(frames)],
        depths=[f.depth for f in frames],
        adjacent=adjacent,
        spec=spec,
    )

"""Bit-exact readers and writers for images, depth maps, trajectories and
window manifests.

Binary PGM (P5) and PPM (P6) are the only image formats.  Header comments are
accepted on read and never written, so ``write(read(f))`` equals ``f`` for
files without comments.  Readers reject anything outside the grammar.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyTrajectoryError,
    FormatError,
    InvalidArgumentError,
    UnsupportedFormatError,
)
from .geometry import Intrinsics
from .metrics import Trajectory

TUM_DEPTH_DIVISOR = 5000.0
_WS = b" \t\n\r\v\f"


def _header(data: bytes):
    """Parse a netpbm header; returns (magic, width, height, maxval, offset)."""
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"bad magic {data[:2]!r} at byte 0; expected P5 or P6", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise FormatError(f"header truncated at byte {pos}", offset=pos)
        c = data[pos : pos + 1]
        if c in (b" ", b"\t", b"\n", b"\r", b"\v", b"\f"):
            pos += 1
        elif c == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise FormatError(f"unterminated comment at byte {pos}", offset=pos)
            pos = end + 1
        else:
            m = re.match(rb"[0-9]+", data[pos:])
            if not m:
                raise FormatError(f"expected a decimal number at byte {pos}, found {c!r}", offset=pos)
            end = pos + m.end()
            if end < len(data) and data[end : end + 1] not in (b" ", b"\t", b"\n", b"\r", b"\v", b"\f", b"#"):
                raise FormatError(f"malformed number at byte {pos}", offset=pos)
            fields.append(int(m.group()))
            pos = end
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError(f"expected a single whitespace after maxval at byte {pos}", offset=pos)
    pos += 1
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise FormatError(f"invalid dimensions {w}x{h}", offset=2)
    if maxval not in (255, 65535):
        raise UnsupportedFormatError(f"unsupported maxval {maxval}; only 255 and 65535 are accepted", offset=pos)
    return data[:2].decode(), w, h, maxval, pos


def _decode(data: bytes, path):
    magic, w, h, maxval, off = _header(data)
    ch = 3 if magic == "P6" else 1
    bpp = 1 if maxval == 255 else 2
    expected = w * h * ch * bpp
    actual = len(data) - off
    if actual != expected:
        kind = "truncated" if actual < expected else "trailing bytes in"
        raise FormatError(
            f"{kind} {path}: expected {expected} bytes of pixel data, got {actual}", offset=off + min(actual, expected)
        )
    raw = np.frombuffer(data, dtype=">u2" if bpp == 2 else np.uint8, count=w * h * ch, offset=off)
    raw = raw.reshape(h, w, ch) if ch == 3 else raw.reshape(h, w)
    return raw.astype(np.int64), maxval


def read_image(path) -> np.ndarray:
    """Read a P5/P6 file into floats in [0, 1]."""
    raw, maxval = _decode(Path(path).read_bytes(), path)
    return raw / maxval


def _encode(raw: np.ndarray, maxval: int) -> bytes:
    magic = b"P6" if raw.ndim == 3 else b"P5"
    h, w = raw.shape[:2]
    body = raw.astype(">u2" if maxval == 65535 else np.uint8).tobytes()
    return magic + f"\n{w} {h}\n{maxval}\n".encode() + body


def write_image(path, img, maxval=255):
    img = np.asarray(img, dtype=float)
    if maxval not in (255, 65535):
        raise UnsupportedFormatError(f"unsupported maxval {maxval}")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise InvalidArgumentError(f"cannot write image of shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise InvalidArgumentError("image values must lie in [0, 1]")
    Path(path).write_bytes(_encode(np.rint(img * maxval).astype(np.int64), maxval))


def read_depth(path, divisor=TUM_DEPTH_DIVISOR) -> np.ndarray:
    """16-bit P5 depth; zeros (no measurement) stay 0 and mark invalid pixels."""
    data = Path(path).read_bytes()
    raw, maxval = _decode(data, path)
    if raw.ndim != 2 or maxval != 65535:
        raise UnsupportedFormatError(f"{path}: depth maps must be 16-bit P5")
    return raw / divisor


def depth_divisor_for(depth, preferred=TUM_DEPTH_DIVISOR) -> float:
    """``preferred`` unless the deepest pixel would overflow 16 bits, in which
    case the largest integer divisor that fits."""
    top = float(np.max(np.where(np.isfinite(depth), depth, 0.0), initial=0.0))
    if top * preferred <= 65535:
        return float(preferred)
    return float(max(1, int(65535 // top)))


def write_depth(path, depth, divisor=TUM_DEPTH_DIVISOR):
    d = np.asarray(depth, dtype=float)
    if d.ndim != 2:
        raise InvalidArgumentError(f"depth map must be 2-D, got {d.shape}")
    d = np.where(np.isfinite(d) & (d > 0), d, 0.0)
    raw = np.rint(d * divisor)
    if raw.max(initial=0) > 65535:
        raise InvalidArgumentError(f"depth {d.max():.3f} exceeds the 16-bit range at divisor {divisor}")
    Path(path).write_bytes(_encode(raw.astype(np.int64), 65535))


def read_trajectory(path) -> Trajectory:
    """TUM trajectory: ``timestamp tx ty tz qx qy qz qw`` per line."""
    ts, pos, quat = [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 8:
            raise FormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}", offset=lineno)
        try:
            vals = [float(x) for x in parts]
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}", offset=lineno) from None
        if not all(np.isfinite(vals)):
            raise FormatError(f"{path}:{lineno}: non-finite value", offset=lineno)
        if ts and vals[0] <= ts[-1]:
            raise FormatError(f"{path}:{lineno}: timestamp {vals[0]} is not increasing", offset=lineno)
        q = np.array(vals[4:])
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) >= 1e-3:
            raise FormatError(f"{path}:{lineno}: quaternion norm {norm:.6f} is not unit", offset=lineno)
        # below file precision the quaternion is kept verbatim so rewrites are byte-exact
        if abs(norm - 1.0) > 1e-8:
            q = q / norm
        ts.append(vals[0])
        pos.append(vals[1:4])
        quat.append(q)
    if not ts:
        raise EmptyTrajectoryError(f"{path}: no trajectory samples")
    return Trajectory(np.array(ts), np.array(pos), np.array(quat))


def write_trajectory(path, traj: Trajectory):
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for t, p, q in zip(traj.timestamps, traj.positions, traj.quaternions):
        lines.append(" ".join(f"{x:.9f}" for x in (t, *p, *q)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path) -> np.ndarray:
    """Pose text file: ``rx ry rz tx ty tz`` per line, '#' comments."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split()
        if len(parts) != 6:
            raise FormatError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}", offset=lineno)
        try:
            rows.append([float(x) for x in parts])
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}", offset=lineno) from None
    return np.array(rows, dtype=float).reshape(-1, 6)


def write_poses(path, poses):
    poses = np.asarray(poses, dtype=float).reshape(-1, 6)
    text = "# rx ry rz tx ty tz\n" + "".join(" ".join(repr(float(x)) for x in p) + "\n" for p in poses)
    Path(path).write_text(text)


def resize(img, width, height) -> np.ndarray:
    """Bilinear resize; output pixel ``i`` samples input coordinate
    ``(i + 0.5) * in/out - 0.5`` so that halving reproduces 2x2 averaging."""
    img = np.asarray(img, dtype=float)
    if width < 1 or height < 1:
        raise InvalidArgumentError(f"target size must be positive, got {width}x{height}")
    H, W = img.shape[:2]

    def coords(n_out, n_in):
        c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        c = np.clip(c, 0.0, n_in - 1)
        i0 = np.minimum(np.floor(c).astype(np.intp), max(n_in - 2, 0))
        return i0, np.minimum(i0 + 1, n_in - 1), c - i0

    x0, x1, a = coords(width, W)
    y0, y1, b = coords(height, H)
    if img.ndim == 3:
        a = a[None, :, None]
        b = b[:, None, None]
    else:
        a = a[None, :]
        b = b[:, None]
    top = img[y0][:, x0] * (1 - a) + img[y0][:, x1] * a
    bot = img[y1][:, x0] * (1 - a) + img[y1][:, x1] * a
    return top * (1 - b) + bot * b


@dataclass
class WindowManifest:
    images: list
    intrinsics: Intrinsics
    depths: list | None = None
    sensor_depths: list | None = None
    trajectory: str | None = None
    n: int = field(default=0)
    depth_divisor: float = TUM_DEPTH_DIVISOR

    def __post_init__(self):
        if not self.n:
            self.n = len(self.images)
        if self.n != len(self.images):
            raise InvalidArgumentError(f"manifest n={self.n} but {len(self.images)} images listed")
        if not 2 <= self.n <= 16:
            raise InvalidArgumentError(f"window length must be within 2..16, got {self.n}")
        for name in ("depths", "sensor_depths"):
            lst = getattr(self, name)
            if lst is not None and len(lst) != self.n:
                raise InvalidArgumentError(f"manifest lists {len(lst)} {name} for {self.n} images")

    def to_dict(self):
        d = {"n": self.n, "images": list(self.images), "intrinsics": self.intrinsics.to_dict()}
        if self.depth_divisor != TUM_DEPTH_DIVISOR:
            d["depth_divisor"] = self.depth_divisor
        for key in ("depths", "sensor_depths", "trajectory"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        return d


_MANIFEST_KEYS = {"n", "images", "intrinsics", "depths", "sensor_depths", "trajectory", "depth_divisor"}


def read_manifest(path) -> WindowManifest:
    """Load a manifest; relative paths resolve against its directory."""
    path = Path(path)
    d = json.loads(path.read_text())
    if not isinstance(d, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    unknown = set(d) - _MANIFEST_KEYS
    if unknown:
        raise FormatError(f"{path}: unknown manifest keys {sorted(unknown)}")
    for key in ("images", "intrinsics"):
        if key not in d:
            raise FormatError(f"{path}: missing required key {key!r}")
    base = path.parent

    def res(p):
        return str(base / p)

    return WindowManifest(
        images=[res(p) for p in d["images"]],
        intrinsics=Intrinsics.from_dict(d["intrinsics"]),
        depths=[res(p) for p in d["depths"]] if d.get("depths") else None,
        sensor_depths=[res(p) for p in d["sensor_depths"]] if d.get("sensor_depths") else None,
        trajectory=res(d["trajectory"]) if d.get("trajectory") else None,
        n=int(d.get("n", len(d["images"]))),
        depth_divisor=float(d.get("depth_divisor", TUM_DEPTH_DIVISOR)),
    )


def write_manifest(path, manifest: WindowManifest):
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")

"""Recover depth and camera motion for a rendered 3-frame window.

Run from the repository root:

    python demos/window_recovery.py [outdir]

The script renders a slanted textured plane seen by a camera sliding
sideways, then hands the frames to the optimizer with a flat depth guess and
identity poses.  Afterwards it compares the result with the known answer and
writes a loss-curve SVG.
"""

import math
import sys
from pathlib import Path

import numpy as np

from depthwin import LossConfig, OptimConfig, depth_metrics, optimize_window, se3_to_pose
from depthwin.plotting import plot
from depthwin.synthetic import slanted_spec, synthetic_window

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

frames, adjacent, spec = synthetic_window(3, spec=slanted_spec(slope=0.9, seed=0), baseline=0.05)
images = [f.image for f in frames]
truth = frames[1].depth
print(f"rendered {len(images)} frames of {spec.width}x{spec.height}; true depth {truth.min():.2f}..{truth.max():.2f}")

# A weak smoothness weight lets per-pixel depth move; the default is tuned
# for network training, where depth is a function of the image.
depth, poses, trace = optimize_window(
    images, spec.K, init_depth=np.median(truth), loss_cfg=LossConfig(lam=0.003), cfg=OptimConfig(max_steps=2000)
)
losses = trace.losses()
print(f"loss {losses[0]:.4f} -> {losses[-1]:.4f} after {len(losses)} steps ({trace.reason})")

scaled = depth * np.median(truth) / np.median(depth)
m = depth_metrics(scaled, truth, cap=1e6)
print(f"median-scaled depth: abs_rel={m.abs_rel:.4f} a1={m.a1:.3f}")

for k, T in enumerate(adjacent):
    t_true = se3_to_pose(T)[3:]
    t_est = poses[k, 3:]
    cos = t_est @ t_true / (np.linalg.norm(t_est) * np.linalg.norm(t_true))
    print(f"pose {k}->{k + 1}: translation direction off by {math.degrees(math.acos(min(1.0, cos))):.2f} deg")

(out / "trace.csv").write_text(trace.to_csv())
plot(out / "trace.csv", out / "loss.svg")
print(f"wrote {out / 'loss.svg'}")

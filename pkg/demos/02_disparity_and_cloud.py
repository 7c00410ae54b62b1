"""One frame through matching and triangulation, checked against ground truth.

Shows the block matcher's coverage and accuracy on a rendered pair, the
depth error after reprojection, and writes the cloud as a PLY file that
point-cloud viewers can open.

    python3 demos/02_disparity_and_cloud.py [out.ply]
"""

from __future__ import annotations

import sys

import numpy as np

from breathscope.calib import compute_rectification
from breathscope.cloud import denoise_statistical, remove_invalid, reproject
from breathscope.ply import write_ply
from breathscope.stereo import MatchParams, compute_disparity, filter_disparity
from breathscope.synthchest import ChestModel, render_stereo, synthetic_rig

out = sys.argv[1] if len(sys.argv) > 1 else "frame0.ply"
model = ChestModel()
rig = synthetic_rig()
frame, truth = render_stereo(model, rig, (320, 240), t=0.0, noise_sigma=2.0)

params = MatchParams(min_disparity=40, max_disparity=56)
raw = compute_disparity(frame.left, frame.right, params)
dmap = filter_disparity(raw)
print(f"valid pixels: {raw.valid_fraction():.1%} raw, {dmap.valid_fraction():.1%} after filtering")

err = np.abs(dmap.values - truth.disparity)[dmap.valid]
print(f"disparity error: median {np.median(err):.3f} px, 95th percentile {np.percentile(err, 95):.3f} px")

maps = compute_rectification(rig, (320, 240))
cloud = denoise_statistical(remove_invalid(reproject(dmap, maps)))
u, v = cloud.source_pixel.T
z_err = cloud.points[:, 2] - truth.depth[v, u]
print(f"{len(cloud)} points; depth error median {np.median(np.abs(z_err)):.2f} mm at ~1 m")

write_ply(out, cloud.points)
print(f"wrote {out}")

"""Find the cutting seam of an open cylinder from unoriented points.

A cylinder is developable but only after one axial cut. The model has
to discover that cut on its own: the displacement net tears the tube
open, and the seam extractor then flags the points whose UV neighbor
spread jumps across the tear.

Run:  python3 demos/02_cylinder_seams.py
"""

import numpy as np

import neuraluv as nv
from neuraluv.geometry import PointSet, normalize_points
from neuraluv.model import extract_seams_auto

mesh = nv.open_cylinder(24, 16, radius=1.0, height=2.0)
normalized, _ = normalize_points(PointSet(mesh.vertices))

# unoriented point-cloud mode: no normal supervision
model = nv.CycleMapper(hidden_width=64, latent_width=32, seed=1)
cfg = nv.TrainConfig(n_points=324, iterations=1200, lr=1e-3, seed=1,
                     use_normals=False)
model, history = nv.train(model, normalized, cfg)
print(f"stopped after {len(history)} iterations")

uv = nv.parameterize(model, normalized.positions)
seams = extract_seams_auto(normalized.positions, uv, cfg)
print(f"seam points: {len(seams)} of {len(normalized)}")

if len(seams):
    angles = np.degrees(np.arctan2(
        normalized.positions[seams.indices, 1],
        normalized.positions[seams.indices, 0],
    ))
    print("seam angular positions (deg), should cluster:")
    print(np.round(np.sort(angles), 1))

"""Quality metrics on hand-built UV maps, no training involved.

Conformality measures the mean absolute difference between 3D corner
angles and their UV images; the self-intersection rate counts
overlapping UV triangle pairs. Both are exercised here on maps whose
scores are known in advance.

Run:  python3 demos/04_quality_metrics.py
"""

import numpy as np

import neuraluv as nv
from neuraluv.metrics import conformality_metric, self_intersection_rate

mesh = nv.plane_grid(10, 10)

# a similarity transform preserves every angle: score is exactly 0
uv_similar = mesh.vertices[:, :2] * 3.0 + [10.0, -4.0]
print("similarity map conformality:",
      conformality_metric(mesh.with_uv(uv_similar)))

# an anisotropic squeeze distorts angles in a predictable direction
uv_squeezed = mesh.vertices[:, :2] * [3.0, 1.0]
print("3:1 squeeze conformality   :",
      f"{conformality_metric(mesh.with_uv(uv_squeezed)):.4f} rad")

# folding the right half back over the left creates real overlaps
uv_folded = mesh.vertices[:, :2].copy()
right = uv_folded[:, 0] > 0
uv_folded[right, 0] *= -1
rate = self_intersection_rate(mesh.with_uv(uv_folded))
print(f"folded-map self-intersection rate: {rate:.4f}")

# sphere: no flat map of a sphere can be angle-perfect everywhere
sphere = nv.icosphere(2)
theta = np.arctan2(sphere.vertices[:, 1], sphere.vertices[:, 0])
z = np.clip(sphere.vertices[:, 2], -1, 1)
uv_equirect = np.column_stack([theta, np.arcsin(z)])
print(f"naive equirectangular sphere map : "
      f"{conformality_metric(sphere.with_uv(uv_equirect)):.4f} rad "
      f"(distortion is unavoidable without cuts)")

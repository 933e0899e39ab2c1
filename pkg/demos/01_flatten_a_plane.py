"""Train the cycle-mapping model on a small planar grid and inspect it.

A developable surface needs no cutting, so this is the friendliest
possible input: the learned UV map should be nearly angle-preserving
and the seam detector should stay quiet.

Run:  python3 demos/01_flatten_a_plane.py
"""

import numpy as np

import neuraluv as nv
from neuraluv.geometry import PointSet, normalize_points
from neuraluv.metrics import evaluate_mesh
from neuraluv.model import extract_seams_auto

# a modest grid keeps this demo in the ~1 minute range on a laptop core
mesh = nv.plane_grid(20, 20)
normalized, transform = normalize_points(PointSet(mesh.vertices))
train_mesh = nv.TriMesh(normalized.positions, mesh.faces)

model = nv.CycleMapper(hidden_width=64, latent_width=32, seed=0)
cfg = nv.TrainConfig(n_points=400, iterations=600, lr=1e-3, seed=0)
model, history = nv.train(model, train_mesh, cfg)
print(f"stopped after {len(history)} iterations "
      f"(total loss {history.total[0]:.3f} -> {history.total[-1]:.4f})")

uv = nv.parameterize(model, train_mesh.vertices)
seams = extract_seams_auto(train_mesh.vertices, uv, cfg)
report = evaluate_mesh(mesh.with_uv(uv), seam_count=len(seams))
print(f"conformality        : {report.conformality:.4f} rad")
print(f"self-intersections  : {report.self_intersection_rate:.6f}")
print(f"seam points         : {report.seam_count} (expected 0 for a plane)")

# the UV map of a plane should be close to a similarity transform of it
corners = nv.parameterize(model, train_mesh.vertices[[0, 19, 380, 399]])
print("corner UVs:\n", np.round(corners, 3))

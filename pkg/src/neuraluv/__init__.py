"""Global free-boundary neural UV parameterization.

Per-model training of a bi-directional cycle-mapping network that maps
discrete 3D surface points (mesh vertices or raw point clouds) to 2D UV
coordinates, discovers cutting seams, and reports quality metrics.
"""

from .geometry import (
    NormalizationTransform,
    PointSet,
    TriMesh,
    add_gaussian_noise,
    chamfer_distance,
    knn,
    normalize_points,
    sample_points,
    sample_vertices,
    triangle_angles,
    uv_bbox_side,
    vertex_normals,
)
from .autodiff import Tape, backward
from .nets import (
    AdamState,
    NetSpec,
    ParamStore,
    adam_step,
    init_params,
    jvp,
    load_checkpoint,
    mlp_forward,
    save_checkpoint,
)
from .model import (
    ABLATION_MODES,
    BranchOutputs,
    CycleMapper,
    LossHistory,
    SeamSet,
    TrainConfig,
    cut_net,
    deform_net,
    eigen_gap,
    evaluate_branches,
    extract_seams,
    extract_seams_auto,
    forward_branch_a,
    forward_branch_b,
    jacobian_uv,
    loss_conformal,
    loss_cycle,
    loss_unwrap,
    loss_wrap,
    make_grid,
    match_uv_by_nn,
    parameterize,
    total_loss,
    train,
    unwrap_net,
    wrap_net,
)
from .metrics import MetricsReport, conformality_metric, noise_robustness_run, \
    self_intersection_rate
from .shapes import icosphere, open_cylinder, plane_grid

__version__ = "0.1.0"

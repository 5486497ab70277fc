"""Lane-segment perception toolkit.

Data model and validation (core), polyline/polygon primitives (geometry),
Hungarian matching and costs (assignment), training losses (losses),
benchmark metrics (metrics), the lane attention kernel with verified
gradients (attention, refine, verify), prediction heads (predictor), label
preprocessing (preprocess), synthetic scenes (scenegen), and file I/O plus
the CLI (sceneio, cli).
"""

from .core import (
    LaneClass,
    LaneGraph,
    LaneSegment,
    LineType,
    Point3,
    Polyline3,
    Scene,
    Violation,
    from_center_and_offset,
    polygon_of,
    validate_scene,
)
from .geometry import (
    BinaryMask,
    GridSpec,
    chamfer,
    frechet_discrete,
    principal_axis,
    rasterize_polygon,
    resample_polyline,
)
from .assignment import Assignment, PredictedSegment, assign, hungarian, matching_cost
from .losses import LossParts, LossWeights, ce_linetype, focal, l1_vec, mask_loss, \
    topology_loss, total_loss
from .metrics import (
    EvalReport,
    average_precision,
    d_ls,
    evaluate_centerline,
    evaluate_laneseg,
    evaluate_mapele,
    top_metric,
)
from .attention import (
    AttentionParams,
    BevGrid,
    Gradients,
    bilinear,
    distribute_reference_points,
    distributed_init,
    identical_init,
    init_sampling_offsets,
    lane_attn_backward,
    lane_attn_forward,
)
from .predictor import (
    HeadParams,
    MlpParams,
    Prediction,
    mask_from_embedding,
    mlp_apply,
    mlp_backward,
    predict_heads,
    topology_scores,
)
from .preprocess import (
    LanePiece,
    MapElement,
    MapElementClass,
    decompose_to_map_elements,
    dfs_merge,
    extract_centerlines,
    normalize_ped_crossing,
)
from .refine import FitResult, RefineParams, RefineResult, fit_demo, refine_iterate
from .scenegen import PerturbSpec, corpus, generate, perturb
from .sceneio import load_scene, load_scenes, render_svg, save_scene, save_scenes

__version__ = "0.1.0"

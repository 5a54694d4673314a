"""Training-free keypoint detection on dense descriptor maps.

Any network (or handcrafted process) that emits a dense descriptor map can
be turned into a keypoint detector: an absolute saliency score measures how
informative each descriptor is on its own, a relative score measures how
much it stands out from its neighbourhood, and their product ranks cells
for top-K selection. The package also ships a reference dense descriptor,
a mutual-NN matcher, and a homography-based evaluation harness.
"""

__version__ = "0.1.0"

from .detect import KeypointSet, extract_topk, filter_maxima, load_keypoints, nms, rescale_threshold, save_keypoints
from .errors import (
    D2DKitError,
    DataError,
    DegenerateInputError,
    FormatError,
    NotFoundError,
    PreconditionError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    RepeatabilityTable,
    ablation_run,
    evaluate_pair,
    evaluate_sequences,
    mma,
    project,
    repeatability,
    repeatability_table,
)
from .match import MatchSet, load_matches, mutual_nn, save_matches
from .refdesc import describe_dense
from .saliency import (
    RsWindow,
    SaliencyMap,
    absolute_saliency,
    compute_score_map,
    d2d_score,
    load_saliency_map,
    relative_saliency,
    save_saliency_map,
    ssd_autocorrelation,
)
from .tensor_io import (
    DescriptorMap,
    GridGeometry,
    default_geometry,
    load_descriptor_map,
    load_hpatches_sequence,
    load_image,
    save_descriptor_map,
    to_grayscale,
)
from .viz import heatmap_views, render_heatmaps

__all__ = [
    "__version__",
    "D2DKitError",
    "DataError",
    "DegenerateInputError",
    "DescriptorMap",
    "EvalReport",
    "FormatError",
    "GridGeometry",
    "KeypointSet",
    "MatchSet",
    "NotFoundError",
    "PreconditionError",
    "RepeatabilityTable",
    "RsWindow",
    "SaliencyMap",
    "ValidationError",
    "ablation_run",
    "absolute_saliency",
    "compute_score_map",
    "d2d_score",
    "default_geometry",
    "describe_dense",
    "evaluate_pair",
    "evaluate_sequences",
    "extract_topk",
    "filter_maxima",
    "heatmap_views",
    "load_descriptor_map",
    "load_hpatches_sequence",
    "load_image",
    "load_keypoints",
    "load_matches",
    "load_saliency_map",
    "mma",
    "mutual_nn",
    "nms",
    "project",
    "relative_saliency",
    "render_heatmaps",
    "repeatability",
    "repeatability_table",
    "rescale_threshold",
    "save_descriptor_map",
    "save_keypoints",
    "save_matches",
    "save_saliency_map",
    "ssd_autocorrelation",
    "to_grayscale",
]

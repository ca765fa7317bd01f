"""Motion-based anomaly detection for robot task executions.

The library compares three kinds of observed motion against their
expectations: camera-induced image motion (kinematics vs frequency-domain
registration), robot-body motion (rendered-silhouette flow vs observed
flow), and full-frame optical flow (a probabilistic U-Net trained on
nominal executions).  Per-frame errors are fused into an anomaly score and
evaluated with AUC-ROC / AUC-PR.
"""

from .imaging import (
    FlowField,
    Image,
    Mask,
    SimilarityTransform,
    masked_median,
    read_flo,
    resize_center_crop,
    warp_by_similarity,
    write_flo,
)

__version__ = "0.1.0"

__all__ = [
    "FlowField",
    "Image",
    "Mask",
    "SimilarityTransform",
    "masked_median",
    "read_flo",
    "resize_center_crop",
    "warp_by_similarity",
    "write_flo",
    "__version__",
]

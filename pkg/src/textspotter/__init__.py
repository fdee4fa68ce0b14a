"""Non-learned machinery of a segmentation-based text spotter.

Mask-branch target generation, segmentation losses with analytic gradients,
pixel-voting decoding, polygon extraction, weighted-edit-distance lexicon
matching, detection / end-to-end evaluation, and a synthetic score-map
generator that exercises the whole inference chain without a network.
"""

__version__ = "0.1.0"

from .decode import ProbTable, SpottedInstance, pixel_voting, run_pipeline, spot
from .geometry import Rect, ScoredBox, nms, polygon_iou, rect_iou
from .lexicon import Lexicon, best_match, edit_distance, weighted_edit_distance
from .maps import CHARSET, MaskStack, load_map_stack, save_map_stack

__all__ = [
    "CHARSET",
    "Lexicon",
    "MaskStack",
    "ProbTable",
    "Rect",
    "ScoredBox",
    "SpottedInstance",
    "best_match",
    "edit_distance",
    "load_map_stack",
    "nms",
    "pixel_voting",
    "polygon_iou",
    "rect_iou",
    "run_pipeline",
    "save_map_stack",
    "spot",
    "weighted_edit_distance",
]

"""Training-target generation: anchors, anchor matching, box deltas and the
mask-branch global / character target maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    GeometryError,
    Rect,
    as_polygon,
    as_rect,
    bounding_rect,
    iou_matrix,
    rasterize_polygon,
)
from .maps import char_index, fold

MAP_H = 32
MAP_W = 128

# match_anchors labels; values >= 0 are gt indices
NEGATIVE = -1
IGNORE = -2


@dataclass(frozen=True)
class CharBox:
    box: Rect
    label: str

    def __post_init__(self):
        object.__setattr__(self, "box", as_rect(self.box))
        if len(self.label) != 1:
            raise ValueError(f"character label must be one symbol, got {self.label!r}")
        char_index(self.label)  # raises on non-charset labels
        object.__setattr__(self, "label", fold(self.label))

    @property
    def index(self) -> int:
        return char_index(self.label)


@dataclass(frozen=True)
class GtInstance:
    polygon: np.ndarray
    transcription: Optional[str] = None
    char_boxes: Optional[tuple[CharBox, ...]] = None

    def __post_init__(self):
        poly = as_polygon(self.polygon)
        object.__setattr__(self, "polygon", poly)
        if self.char_boxes is None:
            return
        boxes = tuple(self.char_boxes)
        object.__setattr__(self, "char_boxes", boxes)
        r = bounding_rect(poly)
        dx, dy = 0.1 * r.width, 0.1 * r.height
        for cb in boxes:
            b = cb.box
            if (
                b.xmin < r.xmin - dx
                or b.ymin < r.ymin - dy
                or b.xmax > r.xmax + dx
                or b.ymax > r.ymax + dy
            ):
                raise GeometryError(
                    f"character box {tuple(b)} lies outside the instance polygon bounds"
                )


@dataclass(frozen=True)
class TargetMaps:
    global_map: np.ndarray  # float {0, 1}
    char_labels: np.ndarray  # int {-1, 0, 1..36}


@dataclass(frozen=True)
class AnchorConfig:
    strides: tuple[int, ...] = (4, 8, 16, 32, 64)
    areas: tuple[float, ...] = (32.0**2, 64.0**2, 128.0**2, 256.0**2, 512.0**2)
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)  # height / width

    def __post_init__(self):
        if len(self.strides) != len(self.areas):
            raise ValueError("one anchor area per stage is required")
        if any(r <= 0 for r in self.ratios):
            raise ValueError("aspect ratios must be positive")


@dataclass(frozen=True)
class BoxDelta:
    tx: float
    ty: float
    tw: float
    th: float


def anchor_shape(area: float, ratio: float) -> tuple[float, float]:
    """(width, height) of an anchor with the given area and height/width ratio."""
    w = math.sqrt(area / ratio)
    return w, ratio * w


def generate_anchors(cfg: AnchorConfig, image_h: int, image_w: int, stage: int) -> np.ndarray:
    """Anchors of one pyramid stage (1-based) as an ``(K, 4)`` array.

    Ordered row-major over feature cells, then by ratio. Anchors crossing the
    image border are kept; see :func:`anchors_inside`.
    """
    if not 1 <= stage <= len(cfg.strides):
        raise ValueError(f"stage must be in 1..{len(cfg.strides)}, got {stage}")
    stride = cfg.strides[stage - 1]
    area = cfg.areas[stage - 1]
    gh = math.ceil(image_h / stride)
    gw = math.ceil(image_w / stride)
    cy, cx = np.meshgrid(
        (np.arange(gh) + 0.5) * stride, (np.arange(gw) + 0.5) * stride, indexing="ij"
    )
    cx = cx.reshape(-1, 1)
    cy = cy.reshape(-1, 1)
    sizes = np.array([anchor_shape(area, r) for r in cfg.ratios])
    hw = sizes[None, :, 0] / 2
    hh = sizes[None, :, 1] / 2
    boxes = np.stack([cx - hw, cy - hh, cx + hw, cy + hh], axis=-1)
    return boxes.reshape(-1, 4)


def anchors_inside(anchors, image_h: int, image_w: int) -> np.ndarray:
    a = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    return (a[:, 0] >= 0) & (a[:, 1] >= 0) & (a[:, 2] <= image_w) & (a[:, 3] <= image_h)


def match_anchors(
    anchors,
    gts,
    pos_iou: float = 0.7,
    neg_iou: float = 0.3,
    allow_low_quality: bool = True,
) -> np.ndarray:
    """Assign every anchor to a gt index, ``NEGATIVE`` or ``IGNORE``.

    With ``allow_low_quality`` each gt's highest-IoU anchor(s) become positive
    even below ``pos_iou``. Positives always carry their best-IoU gt (lowest
    index on ties).
    """
    if not 0.0 <= neg_iou <= pos_iou <= 1.0:
        raise ValueError("thresholds must satisfy 0 <= neg_iou <= pos_iou <= 1")
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    labels = np.full(len(anchors), NEGATIVE, dtype=np.int64)
    if len(gts) == 0 or len(anchors) == 0:
        return labels
    ious = iou_matrix(anchors, gts)
    best_gt = ious.argmax(axis=1)
    best_iou = ious.max(axis=1)
    labels[best_iou >= neg_iou] = IGNORE
    pos = best_iou >= pos_iou
    labels[pos] = best_gt[pos]
    if allow_low_quality:
        gt_best = ious.max(axis=0)
        forced = np.any((ious == gt_best[None, :]) & (gt_best[None, :] > 0), axis=1)
        labels[forced] = best_gt[forced]
    return labels


def encode_box_delta(anchor: Rect, gt: Rect) -> BoxDelta:
    aw, ah = anchor[2] - anchor[0], anchor[3] - anchor[1]
    gw, gh = gt[2] - gt[0], gt[3] - gt[1]
    acx, acy = anchor[0] + 0.5 * aw, anchor[1] + 0.5 * ah
    gcx, gcy = gt[0] + 0.5 * gw, gt[1] + 0.5 * gh
    return BoxDelta((gcx - acx) / aw, (gcy - acy) / ah, math.log(gw / aw), math.log(gh / ah))


def decode_box_delta(anchor: Rect, d: BoxDelta) -> Rect:
    aw, ah = anchor[2] - anchor[0], anchor[3] - anchor[1]
    cx = anchor[0] + 0.5 * aw + d.tx * aw
    cy = anchor[1] + 0.5 * ah + d.ty * ah
    w = aw * math.exp(d.tw)
    h = ah * math.exp(d.th)
    return Rect(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


def _proposal_extent(proposal) -> Rect:
    r = Rect(*(float(v) for v in proposal))
    if not (r.xmax > r.xmin and r.ymax > r.ymin):
        raise GeometryError(f"proposal {tuple(r)} has zero extent")
    return r


def normalize_to_roi(points, proposal, map_h: int = MAP_H, map_w: int = MAP_W) -> np.ndarray:
    """Map image-space points into the H x W frame of ``proposal``."""
    r = _proposal_extent(proposal)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    out = np.empty_like(pts)
    out[:, 0] = (pts[:, 0] - r.xmin) * map_w / (r.xmax - r.xmin)
    out[:, 1] = (pts[:, 1] - r.ymin) * map_h / (r.ymax - r.ymin)
    return out


def denormalize_from_roi(points, proposal, map_h: int = MAP_H, map_w: int = MAP_W) -> np.ndarray:
    r = _proposal_extent(proposal)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    out = np.empty_like(pts)
    out[:, 0] = pts[:, 0] * (r.xmax - r.xmin) / map_w + r.xmin
    out[:, 1] = pts[:, 1] * (r.ymax - r.ymin) / map_h + r.ymin
    return out


def rasterize_global_target(polygon, map_h: int = MAP_H, map_w: int = MAP_W) -> np.ndarray:
    poly = as_polygon(polygon)
    bounding_rect(poly)  # rejects zero-extent input
    return rasterize_polygon(poly, map_h, map_w).astype(np.float32)


def shrink_char_box(b: Rect, factor: float = 4.0) -> Rect:
    cx, cy = 0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3])
    hw = 0.5 * (b[2] - b[0]) / factor
    hh = 0.5 * (b[3] - b[1]) / factor
    return Rect(cx - hw, cy - hh, cx + hw, cy + hh)


def rasterize_char_target(
    char_boxes: Optional[Sequence[CharBox]], map_h: int = MAP_H, map_w: int = MAP_W
) -> np.ndarray:
    """Label grid: charset index + 1 inside each box, 0 elsewhere.

    Boxes are filled as given (pass already-shrunk boxes); a pixel belongs to
    a box when its center lies in ``[xmin, xmax) x [ymin, ymax)``. Later boxes
    overwrite earlier ones. ``None`` means "no character annotation" and
    yields an all ``-1`` grid.
    """
    if char_boxes is None:
        return np.full((map_h, map_w), -1, dtype=np.int64)
    labels = np.zeros((map_h, map_w), dtype=np.int64)
    ys = np.arange(map_h) + 0.5
    xs = np.arange(map_w) + 0.5
    for cb in char_boxes:
        b = cb.box
        rows = (ys >= b.ymin) & (ys < b.ymax)
        cols = (xs >= b.xmin) & (xs < b.xmax)
        labels[np.ix_(rows, cols)] = cb.index + 1
    return labels


def build_mask_targets(
    instance: GtInstance, proposal, map_h: int = MAP_H, map_w: int = MAP_W
) -> TargetMaps:
    poly = normalize_to_roi(instance.polygon, proposal, map_h, map_w)
    global_map = rasterize_global_target(poly, map_h, map_w)
    if instance.char_boxes is None:
        chars = None
    else:
        chars = []
        for cb in instance.char_boxes:
            s = shrink_char_box(cb.box)
            corners = normalize_to_roi([[s.xmin, s.ymin], [s.xmax, s.ymax]], proposal, map_h, map_w)
            chars.append(CharBox(Rect(*corners[0], *corners[1]), cb.label))
    return TargetMaps(global_map, rasterize_char_target(chars, map_h, map_w))

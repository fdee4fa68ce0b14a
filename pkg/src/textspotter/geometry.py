"""Rectangles, polygons, raster IoU and greedy NMS.

Polygons are ``(n, 2)`` float arrays of ``(x, y)`` vertices, closed
implicitly. Point-in-polygon tests use the even-odd rule; rasterization
samples pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np


class GeometryError(ValueError):
    pass


class Rect(NamedTuple):
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    def corners(self) -> np.ndarray:
        """Clockwise (in image coordinates) corner polygon."""
        return np.array(
            [
                [self.xmin, self.ymin],
                [self.xmax, self.ymin],
                [self.xmax, self.ymax],
                [self.xmin, self.ymax],
            ],
            dtype=np.float64,
        )

    def is_valid(self) -> bool:
        return bool(
            np.all(np.isfinite(self)) and self.xmin < self.xmax and self.ymin < self.ymax
        )


def as_rect(r) -> Rect:
    rect = Rect(*(float(v) for v in r))
    if not rect.is_valid():
        raise GeometryError(f"invalid rectangle {tuple(rect)}")
    return rect


@dataclass(frozen=True)
class ScoredBox:
    rect: Rect
    score: float
    key: Optional[str] = None  # opaque id carried through NMS to map providers

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def as_polygon(points) -> np.ndarray:
    """Validate and return a polygon as an ``(n, 2)`` float64 array."""
    poly = np.asarray(points, dtype=np.float64)
    if poly.ndim == 1 and poly.size % 2 == 0:
        poly = poly.reshape(-1, 2)
    if poly.ndim != 2 or poly.shape[1] != 2:
        raise GeometryError(f"polygon must be an (n, 2) array, got shape {poly.shape}")
    if len(poly) < 3:
        raise GeometryError(f"polygon needs at least 3 vertices, got {len(poly)}")
    if not np.all(np.isfinite(poly)):
        raise GeometryError("polygon has non-finite coordinates")
    return poly


def polygon_area(points) -> float:
    poly = as_polygon(points)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def bounding_rect(points) -> Rect:
    poly = as_polygon(points)
    lo = poly.min(axis=0)
    hi = poly.max(axis=0)
    if lo[0] >= hi[0] or lo[1] >= hi[1]:
        raise GeometryError("degenerate polygon: zero extent along an axis")
    return Rect(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def rect_iou(a: Rect, b: Rect) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between two ``(n, 4)`` / ``(m, 4)`` rect arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def points_in_polygon(xs, ys, points) -> np.ndarray:
    """Even-odd containment of sample points (broadcast ``xs``/``ys``)."""
    poly = as_polygon(points)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    xs, ys = np.broadcast_arrays(xs, ys)
    inside = np.zeros(xs.shape, dtype=bool)
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        if ay == by:
            continue
        # half-open in y so shared vertices are counted once
        straddles = (ay > ys) != (by > ys)
        x_cross = ax + (ys - ay) * (bx - ax) / (by - ay)
        inside ^= straddles & (xs < x_cross)
    return inside


def rasterize_polygon(points, height: int, width: int) -> np.ndarray:
    """Boolean H x W mask of pixel centers inside the polygon."""
    ys = np.arange(height, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(width, dtype=np.float64)[None, :] + 0.5
    return points_in_polygon(xs, ys, points)


def polygon_iou(a, b, resolution: float = 4.0) -> float:
    """Raster IoU of two (possibly non-convex) polygons.

    Both polygons are sampled on a shared grid covering their joint bounding
    box with ``resolution`` samples per pixel along each axis.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    pa, pb = as_polygon(a), as_polygon(b)
    ra, rb = bounding_rect(pa), bounding_rect(pb)
    if rect_iou(ra, rb) == 0.0:
        return 0.0
    x0, y0 = min(ra.xmin, rb.xmin), min(ra.ymin, rb.ymin)
    x1, y1 = max(ra.xmax, rb.xmax), max(ra.ymax, rb.ymax)
    nx = max(1, int(np.ceil((x1 - x0) * resolution)))
    ny = max(1, int(np.ceil((y1 - y0) * resolution)))
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    ma = points_in_polygon(xs[None, :], ys[:, None], pa)
    mb = points_in_polygon(xs[None, :], ys[:, None], pb)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 0.0
    return np.count_nonzero(ma & mb) / union


def nms_indices(rects, scores: Sequence[float], iou_threshold: float) -> list[int]:
    """Indices kept by greedy NMS, in descending score order.

    Equal scores are visited in input order. A box is suppressed when its
    IoU with an already kept box exceeds ``iou_threshold``.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return []
    order = np.argsort(-scores, kind="stable")
    ious = iou_matrix(rects, rects)
    suppressed = np.zeros(len(scores), dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= ious[i] > iou_threshold
    return keep


def nms(boxes: Sequence[ScoredBox], iou_threshold: float) -> list[ScoredBox]:
    if not boxes:
        return []
    rects = np.array([b.rect for b in boxes], dtype=np.float64)
    keep = nms_indices(rects, [b.score for b in boxes], iou_threshold)
    return [boxes[i] for i in keep]

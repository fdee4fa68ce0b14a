"""Inference post-processing: character regions, pixel voting, text polygons
and the proposal-to-instance pipeline."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage
from shapely.geometry import Polygon as ShapelyPolygon

from .geometry import Rect, ScoredBox, nms
from .maps import CHARSET, NUM_CHARS, MaskStack, char_index
from .targets import denormalize_from_roi

log = logging.getLogger(__name__)

BG_THRESHOLD = 192 / 255
GLOBAL_THRESHOLD = 0.5
SIMPLIFY_EPSILON = 1.0

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProbTable:
    """Decoded symbols and their voted per-character probability vectors."""

    text: str
    probs: np.ndarray  # (len(text), 36)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64).reshape(len(self.text), NUM_CHARS)
        for i, c in enumerate(self.text):
            if probs[i, char_index(c)] < probs[i].max():
                raise ValueError(f"symbol {c!r} at {i} is not the argmax of its vector")
        object.__setattr__(self, "probs", probs)

    def __len__(self):
        return len(self.text)

    def __getitem__(self, i):
        return self.text[i], self.probs[i]

    def prob(self, i: int, symbol: str) -> float:
        """Voted probability of ``symbol`` at position ``i``; 0 outside the charset."""
        try:
            return float(self.probs[i, char_index(symbol)])
        except KeyError:
            return 0.0

    @classmethod
    def one_hot(cls, text: str) -> "ProbTable":
        probs = np.zeros((len(text), NUM_CHARS))
        for i, c in enumerate(text):
            probs[i, char_index(c)] = 1.0
        return cls(text.lower(), probs)

    @classmethod
    def from_dicts(cls, text: str, rows: Sequence[dict]) -> "ProbTable":
        probs = np.zeros((len(rows), NUM_CHARS))
        for i, row in enumerate(rows):
            for c, p in row.items():
                probs[i, char_index(c)] = p
        return cls(text, probs)


@dataclass(frozen=True)
class CharRegion:
    pixels: np.ndarray  # (k, 2) rows/cols
    centroid: tuple[float, float]  # (x, y), pixel-center convention
    prob_vector: np.ndarray

    @property
    def symbol(self) -> str:
        return CHARSET[int(np.argmax(self.prob_vector))]


@dataclass(frozen=True)
class SpottedInstance:
    polygon: np.ndarray
    text: str
    probs: ProbTable
    det_score: float
    word: Optional[str] = None  # lexicon match, if any

    @property
    def output_text(self) -> str:
        return self.word if self.word is not None else self.text


def binarize(score_map, threshold: float) -> np.ndarray:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return np.asarray(score_map) >= threshold


def connected_components(binary, connectivity: int = 4) -> list[np.ndarray]:
    """Maximal connected sets of true cells as ``(k, 2)`` (row, col) arrays.

    Regions are ordered by their minimum row, then minimum column.
    """
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 4 or 8")
    labels, count = ndimage.label(np.asarray(binary, dtype=bool), structure=_STRUCTURES[connectivity])
    if count == 0:
        return []
    regions = [np.argwhere(labels == k) for k in range(1, count + 1)]
    # argwhere is row-major, so region[0] holds the min row
    regions.sort(key=lambda r: (int(r[0, 0]), int(r[:, 1].min())))
    return regions


def char_regions(
    stack: MaskStack,
    bg_threshold: float = BG_THRESHOLD,
    connectivity: int = 4,
    min_region_pixels: int = 1,
) -> list[CharRegion]:
    """Voted character regions in reading order (centroid x, then y)."""
    mask = np.asarray(stack.background) < bg_threshold
    chars = np.asarray(stack.char_maps, dtype=np.float64)
    out = []
    for pix in connected_components(mask, connectivity):
        if len(pix) < min_region_pixels:
            continue
        rows, cols = pix[:, 0], pix[:, 1]
        votes = chars[:, rows, cols].mean(axis=1)
        centroid = (float(cols.mean() + 0.5), float(rows.mean() + 0.5))
        out.append(CharRegion(pix, centroid, votes))
    out.sort(key=lambda r: (r.centroid[0], r.centroid[1]))
    return out


def pixel_voting(
    stack: MaskStack,
    bg_threshold: float = BG_THRESHOLD,
    connectivity: int = 4,
    min_region_pixels: int = 1,
) -> tuple[str, ProbTable]:
    regions = char_regions(stack, bg_threshold, connectivity, min_region_pixels)
    text = "".join(r.symbol for r in regions)
    probs = np.array([r.prob_vector for r in regions]).reshape(len(regions), NUM_CHARS)
    return text, ProbTable(text, probs)


def trace_outer_boundary(mask) -> np.ndarray:
    """Outer boundary of a 4-connected, hole-free pixel set along pixel edges.

    Returns vertices in pixel-corner coordinates ``(x, y)``, without
    collinear points.
    """
    mask = np.pad(np.asarray(mask, dtype=bool), 1)
    # directed edges keep the foreground on the right (y axis pointing down)
    nxt = {}
    r, c = np.nonzero(mask[1:-1, 1:-1])
    r = r + 1
    c = c + 1
    for rr, cc in zip(r.tolist(), c.tolist()):
        x, y = cc - 1, rr - 1
        if not mask[rr - 1, cc]:
            nxt[(x, y)] = (x + 1, y)
        if not mask[rr, cc + 1]:
            nxt[(x + 1, y)] = (x + 1, y + 1)
        if not mask[rr + 1, cc]:
            nxt[(x + 1, y + 1)] = (x, y + 1)
        if not mask[rr, cc - 1]:
            nxt[(x, y + 1)] = (x, y)
    if not nxt:
        raise ValueError("empty mask has no boundary")
    start = (int(c[0]) - 1, int(r[0]) - 1)  # top-left corner of the first raster pixel
    ring = [start]
    cur = nxt[start]
    while cur != start:
        ring.append(cur)
        cur = nxt[cur]
    pts = np.array(ring, dtype=np.float64)
    prev = np.roll(pts, 1, axis=0)
    after = np.roll(pts, -1, axis=0)
    cross = (pts[:, 0] - prev[:, 0]) * (after[:, 1] - pts[:, 1]) - (pts[:, 1] - prev[:, 1]) * (
        after[:, 0] - pts[:, 0]
    )
    return pts[cross != 0]


def simplify_polygon(points, epsilon: float = SIMPLIFY_EPSILON) -> np.ndarray:
    if epsilon <= 0:
        return np.asarray(points, dtype=np.float64)
    simplified = ShapelyPolygon(points).simplify(epsilon, preserve_topology=True)
    coords = np.asarray(simplified.exterior.coords, dtype=np.float64)[:-1]
    if len(coords) < 3:
        return np.asarray(points, dtype=np.float64)
    return coords


def extract_text_polygon(
    global_map, threshold: float = GLOBAL_THRESHOLD, epsilon: float = SIMPLIFY_EPSILON
) -> Optional[np.ndarray]:
    """Contour of the largest foreground region, or ``None`` when there is none.

    Holes are filled before tracing, so only the outer boundary is returned.
    Coordinates are in map units with pixel ``(r, c)`` spanning
    ``[c, c+1] x [r, r+1]``.
    """
    fg = binarize(global_map, threshold)
    labels, count = ndimage.label(fg, structure=_STRUCTURES[4])
    if count == 0:
        return None
    sizes = np.bincount(labels.ravel())[1:]
    largest = labels == (int(np.argmax(sizes)) + 1)
    largest = ndimage.binary_fill_holes(largest, structure=_STRUCTURES[4])
    return simplify_polygon(trace_outer_boundary(largest), epsilon)


def spot(
    stack: MaskStack,
    proposal,
    det_score: float,
    *,
    bg_threshold: float = BG_THRESHOLD,
    global_threshold: float = GLOBAL_THRESHOLD,
    epsilon: float = SIMPLIFY_EPSILON,
    connectivity: int = 4,
    min_region_pixels: int = 1,
) -> Optional[SpottedInstance]:
    poly = extract_text_polygon(stack.global_map, global_threshold, epsilon)
    if poly is None:
        return None
    image_poly = denormalize_from_roi(poly, proposal, stack.height, stack.width)
    text, probs = pixel_voting(stack, bg_threshold, connectivity, min_region_pixels)
    return SpottedInstance(image_poly, text, probs, float(det_score))


MapProvider = Callable[[ScoredBox], MaskStack]


def run_pipeline(
    candidates: Sequence[ScoredBox],
    map_provider: MapProvider,
    nms_threshold: float = 0.5,
    score_threshold: float = 0.0,
    workers: int = 1,
    **spot_kwargs,
) -> list[SpottedInstance]:
    """Score filter, NMS, then decode every surviving proposal.

    Output is sorted by descending detection score regardless of ``workers``.
    """
    kept = [b for b in candidates if b.score >= score_threshold]
    kept = nms(kept, nms_threshold)

    def run_one(box: ScoredBox):
        try:
            stack = map_provider(box)
        except Exception as exc:
            name = box.key if box.key is not None else tuple(box.rect)
            raise PipelineError(f"map provider failed for proposal {name}: {exc}") from exc
        return spot(stack, box.rect, box.score, **spot_kwargs)

    if workers > 1 and len(kept) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, kept))
    else:
        results = [run_one(b) for b in kept]
    out = [r for r in results if r is not None]
    log.debug("pipeline: %d candidates, %d after nms, %d instances", len(candidates), len(kept), len(out))
    # nms output is already score-sorted; the stable sort keeps tie order
    out.sort(key=lambda s: -s.det_score)
    return out

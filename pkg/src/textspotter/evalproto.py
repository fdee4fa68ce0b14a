"""Detection and end-to-end / word-spotting evaluation (IoU 0.5 matching)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .decode import SpottedInstance
from .geometry import as_polygon, polygon_iou
from .maps import in_charset

END_TO_END = "end_to_end"
WORD_SPOTTING = "word_spotting"
MIN_SPOTTING_LENGTH = 3


@dataclass(frozen=True)
class GtLabel:
    polygon: np.ndarray
    transcription: str = ""
    care: bool = True

    def __post_init__(self):
        object.__setattr__(self, "polygon", as_polygon(self.polygon))
        if self.care and not self.transcription:
            raise ValueError("a care ground truth needs a transcription")


@dataclass(frozen=True)
class EvalReport:
    tp: int
    n_dets: int  # detections counted (don't-care hits excluded)
    n_gts: int  # care ground truths
    matches: tuple[tuple[int, int], ...] = ()  # (det index, gt index)

    @property
    def precision(self) -> float:
        if self.n_dets == 0:
            return 1.0 if self.n_gts == 0 else 0.0
        return self.tp / self.n_dets

    @property
    def recall(self) -> float:
        return 1.0 if self.n_gts == 0 else self.tp / self.n_gts

    @property
    def fmeasure(self) -> float:
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "fmeasure": self.fmeasure,
            "tp": self.tp,
            "detections": self.n_dets,
            "ground_truths": self.n_gts,
        }


def merge_reports(reports: Iterable[EvalReport]) -> EvalReport:
    """Dataset-level report: counts summed over scenes, matches dropped."""
    tp = n_dets = n_gts = 0
    for r in reports:
        tp += r.tp
        n_dets += r.n_dets
        n_gts += r.n_gts
    return EvalReport(tp, n_dets, n_gts)


def _texts_equal(a: str, b: str) -> bool:
    return a.lower() == b.lower()


def _match(dets, gts, iou_threshold, resolution, text_check) -> EvalReport:
    order = sorted(range(len(dets)), key=lambda i: -dets[i].det_score)
    ious = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            ious[i, j] = polygon_iou(d.polygon, g.polygon, resolution)
    taken = np.zeros(len(gts), dtype=bool)
    tp = counted = 0
    matches = []
    for i in order:
        best_j, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if not g.care or taken[j] or ious[i, j] < iou_threshold:
                continue
            if text_check and not _texts_equal(dets[i].output_text, g.transcription):
                continue
            if ious[i, j] > best_iou:
                best_j, best_iou = j, ious[i, j]
        if best_j >= 0:
            taken[best_j] = True
            matches.append((i, best_j))
            tp += 1
            counted += 1
            continue
        hits_dont_care = any(not g.care and ious[i, j] >= iou_threshold for j, g in enumerate(gts))
        if not hits_dont_care:
            counted += 1
    n_care = sum(1 for g in gts if g.care)
    return EvalReport(tp, counted, n_care, tuple(matches))


def eval_detection(
    dets: Sequence[SpottedInstance],
    gts: Sequence[GtLabel],
    iou_threshold: float = 0.5,
    resolution: float = 4.0,
) -> EvalReport:
    """Greedy score-ordered one-to-one matching at ``iou_threshold``.

    Each detection takes the free care ground truth of highest IoU; an
    unmatched detection that hits a don't-care region is not counted.
    """
    return _match(list(dets), list(gts), iou_threshold, resolution, text_check=False)


def spotting_care(gt: GtLabel) -> bool:
    t = gt.transcription
    return gt.care and len(t) >= MIN_SPOTTING_LENGTH and in_charset(t)


def eval_end_to_end(
    spots: Sequence[SpottedInstance],
    gts: Sequence[GtLabel],
    mode: str = END_TO_END,
    iou_threshold: float = 0.5,
    resolution: float = 4.0,
) -> EvalReport:
    """Like :func:`eval_detection` but a match also needs equal text.

    Text comparison is case-insensitive and uses the lexicon word when one
    was matched. In ``word_spotting`` mode ground truths shorter than three
    symbols or with non-charset symbols become don't-care.
    """
    if mode not in (END_TO_END, WORD_SPOTTING):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    gts = list(gts)
    if mode == WORD_SPOTTING:
        gts = [g if spotting_care(g) else replace(g, care=False) for g in gts]
    return _match(list(spots), gts, iou_threshold, resolution, text_check=True)

"""Deterministic synthetic scenes and mask stacks.

Stands in for a trained mask branch: words are laid out as axis-aligned
boxes, each proposal is rendered into a clean 38-channel stack, and stacks can
be corrupted with Gaussian noise and character-channel swaps. All randomness
comes from counter-based Philox streams keyed by explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .decode import BG_THRESHOLD, connected_components
from .evalproto import GtLabel
from .geometry import Rect, ScoredBox, rect_iou
from .maps import BACKGROUND_CHANNEL, CHARSET, GLOBAL_CHANNEL, NUM_CHANNELS, NUM_CHARS, MaskStack, in_charset
from .targets import (
    MAP_H,
    MAP_W,
    CharBox,
    normalize_to_roi,
    rasterize_char_target,
    rasterize_global_target,
    shrink_char_box,
)

CHAR_GAP = 0.1  # gap between characters, as a fraction of character width
PROPOSAL_MARGIN = 0.1  # proposal padding around the word, fraction of word size
LETTERS = CHARSET[10:]


class PlacementError(RuntimeError):
    pass


def make_rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    swap_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0.0 <= self.swap_prob <= 1.0:
            raise ValueError("swap_prob must lie in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return self.sigma == 0 and self.swap_prob == 0


@dataclass(frozen=True)
class SynthWord:
    word: str
    rect: Rect
    proposal: Rect
    char_boxes: tuple[CharBox, ...]

    @property
    def polygon(self) -> np.ndarray:
        return self.rect.corners()


def layout_chars(word: str, rect: Rect) -> tuple[CharBox, ...]:
    """Equal-width character boxes left to right with a 10% gap."""
    n = len(word)
    cw = rect.width / (n + CHAR_GAP * (n - 1))
    boxes = []
    for k, c in enumerate(word):
        x0 = rect.xmin + k * cw * (1 + CHAR_GAP)
        boxes.append(CharBox(Rect(x0, rect.ymin, x0 + cw, rect.ymax), c))
    return tuple(boxes)


def padded(rect: Rect, margin: float = PROPOSAL_MARGIN) -> Rect:
    dx, dy = margin * rect.width, margin * rect.height
    return Rect(rect.xmin - dx, rect.ymin - dy, rect.xmax + dx, rect.ymax + dy)


def make_word(word: str, rect: Rect, margin: float = PROPOSAL_MARGIN) -> SynthWord:
    if not word:
        raise ValueError("cannot render an empty word")
    if not in_charset(word):
        raise ValueError(f"word {word!r} has symbols outside the charset")
    word = word.lower()
    return SynthWord(word, Rect(*rect), padded(Rect(*rect), margin), layout_chars(word, Rect(*rect)))


def render_stack(
    entry: SynthWord, proposal: Optional[Rect] = None, map_h: int = MAP_H, map_w: int = MAP_W
) -> MaskStack:
    """Clean stack for ``entry`` as seen through ``proposal`` (default: its own)."""
    proposal = entry.proposal if proposal is None else proposal
    data = np.zeros((NUM_CHANNELS, map_h, map_w), dtype=np.float32)
    data[GLOBAL_CHANNEL] = rasterize_global_target(
        normalize_to_roi(entry.polygon, proposal, map_h, map_w), map_h, map_w
    )
    shrunk = []
    for cb in entry.char_boxes:
        s = shrink_char_box(cb.box)
        lo, hi = normalize_to_roi([[s.xmin, s.ymin], [s.xmax, s.ymax]], proposal, map_h, map_w)
        shrunk.append(CharBox(Rect(lo[0], lo[1], hi[0], hi[1]), cb.label))
    labels = rasterize_char_target(shrunk, map_h, map_w)
    for k in range(NUM_CHARS):
        data[k + 1] = labels == k + 1
    data[BACKGROUND_CHANNEL] = 1.0 - data[1 : 1 + NUM_CHARS].max(axis=0)
    return MaskStack(np.clip(data, 0.0, 1.0))


def corrupt(stack: MaskStack, noise: NoiseSpec, *key: int) -> MaskStack:
    """Swap dominant channels per character region, then add Gaussian noise.

    Regions are the character regions of the input stack. Extra ``key``
    integers select an independent stream under the same ``noise.seed``.
    """
    if noise.is_identity:
        return stack
    rng = make_rng(noise.seed, *key)
    data = np.array(stack.data, dtype=np.float64)
    if noise.swap_prob > 0:
        regions = connected_components(stack.background < BG_THRESHOLD)
        for pix in regions:
            if rng.random() >= noise.swap_prob:
                continue
            rows, cols = pix[:, 0], pix[:, 1]
            dominant = int(np.argmax(data[1 : 1 + NUM_CHARS, rows, cols].mean(axis=1)))
            other = int(rng.integers(NUM_CHARS - 1))
            if other >= dominant:
                other += 1
            a, b = dominant + 1, other + 1
            va = data[a, rows, cols].copy()
            data[a, rows, cols] = data[b, rows, cols]
            data[b, rows, cols] = va
    if noise.sigma > 0:
        data += rng.normal(0.0, noise.sigma, size=data.shape)
    return MaskStack(np.clip(data, 0.0, 1.0))


def random_lexicon(seed: int, size: int = 500, min_len: int = 3, max_len: int = 10) -> list[str]:
    """Distinct pseudo-words over lowercase letters."""
    rng = make_rng(seed, 0x1E1C)
    words: list[str] = []
    seen = set()
    while len(words) < size:
        n = int(rng.integers(min_len, max_len + 1))
        w = "".join(LETTERS[i] for i in rng.integers(len(LETTERS), size=n))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass
class SynthScene:
    seed: int
    width: int
    height: int
    words: list[SynthWord]
    candidates: list[ScoredBox]
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    map_h: int = MAP_H
    map_w: int = MAP_W

    @property
    def gts(self) -> list[GtLabel]:
        return [GtLabel(w.polygon, w.word) for w in self.words]

    def _owner(self, box: ScoredBox) -> tuple[int, int]:
        if box.key is not None and box.key.startswith("w"):
            word, _, dup = box.key[1:].partition("d")
            return int(word), int(dup or 0)
        ious = [rect_iou(box.rect, w.proposal) for w in self.words]
        if not ious or max(ious) == 0:
            return -1, 0
        return int(np.argmax(ious)), 0

    def stack_for(self, box: ScoredBox) -> MaskStack:
        idx, dup = self._owner(box)
        if idx < 0:
            return MaskStack.empty(self.map_h, self.map_w)
        clean = render_stack(self.words[idx], box.rect, self.map_h, self.map_w)
        return corrupt(clean, self.noise, self.seed, idx, dup)

    def map_provider(self, box: ScoredBox) -> MaskStack:
        return self.stack_for(box)


def build_scene(
    seed: int,
    n_words: int,
    lexicon: Sequence[str],
    image_size: tuple[int, int] = (512, 512),
    duplicates: int = 0,
    noise: Optional[NoiseSpec] = None,
    max_retries: int = 200,
) -> SynthScene:
    """Scene of ``n_words`` non-overlapping words drawn from ``lexicon``.

    Each word gets one proposal (its padded box) plus ``duplicates`` jittered
    lower-scored copies that NMS should suppress.
    """
    if len(lexicon) == 0:
        raise ValueError("lexicon is empty")
    height, width = image_size
    rng = make_rng(seed, 0x5CE)
    words: list[SynthWord] = []
    occupied: list[Rect] = []
    for _ in range(n_words):
        text = lexicon[int(rng.integers(len(lexicon)))]
        for _attempt in range(max_retries):
            ch = float(rng.uniform(16, 40))
            cw = ch * float(rng.uniform(0.5, 0.8))
            w = min(cw * len(text), (width - 4) / (1 + 2 * PROPOSAL_MARGIN))
            h = min(ch, (height - 4) / (1 + 2 * PROPOSAL_MARGIN))
            pw, ph = w * (1 + 2 * PROPOSAL_MARGIN), h * (1 + 2 * PROPOSAL_MARGIN)
            px = float(rng.uniform(1, width - pw - 1))
            py = float(rng.uniform(1, height - ph - 1))
            prop = Rect(px, py, px + pw, py + ph)
            gap = 4.0
            if any(
                prop.xmin < o.xmax + gap
                and o.xmin < prop.xmax + gap
                and prop.ymin < o.ymax + gap
                and o.ymin < prop.ymax + gap
                for o in occupied
            ):
                continue
            rect = Rect(px + PROPOSAL_MARGIN * w, py + PROPOSAL_MARGIN * h, px + PROPOSAL_MARGIN * w + w, py + PROPOSAL_MARGIN * h + h)
            words.append(make_word(text, rect))
            occupied.append(prop)
            break
        else:
            raise PlacementError(f"could not place word {len(words)} without overlap after {max_retries} tries")

    candidates = []
    for i, sw in enumerate(words):
        score = float(rng.uniform(0.6, 1.0))
        candidates.append(ScoredBox(sw.proposal, score, f"w{i}"))
        p = sw.proposal
        for d in range(1, duplicates + 1):
            jx, jy = rng.uniform(-0.03, 0.03, size=2)
            shifted = Rect(
                p.xmin + jx * p.width, p.ymin + jy * p.height, p.xmax + jx * p.width, p.ymax + jy * p.height
            )
            candidates.append(ScoredBox(shifted, score * float(rng.uniform(0.8, 0.99)), f"w{i}d{d}"))
    return SynthScene(seed, width, height, words, candidates, noise or NoiseSpec())

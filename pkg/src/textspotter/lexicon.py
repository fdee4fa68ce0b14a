"""Edit distance, probability-weighted edit distance and lexicon lookup."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .decode import ProbTable
from .maps import CHARSET, NUM_CHARS, char_index, charset_filter


class ContractError(ValueError):
    pass


class Lexicon(Sequence[str]):
    """Ordered word list, case-folded, restricted to charset symbols."""

    def __init__(self, words: Iterable[str]):
        cleaned = (charset_filter(w) for w in words)
        self.words = [w for w in cleaned if w]
        self._encoded = None

    def encoded(self) -> tuple[np.ndarray, np.ndarray]:
        """``(codes, lengths)``: words as padded charset-index rows."""
        if self._encoded is None:
            lengths = np.array([len(w) for w in self.words], dtype=np.int64)
            codes = np.zeros((len(self.words), int(lengths.max(initial=0))), dtype=np.int64)
            for k, w in enumerate(self.words):
                codes[k, : len(w)] = [char_index(c) for c in w]
            self._encoded = (codes, lengths)
        return self._encoded

    @classmethod
    def load(cls, path) -> "Lexicon":
        text = Path(path).read_text(encoding="utf-8")
        return cls(line.strip() for line in text.splitlines())

    def save(self, path) -> None:
        Path(path).write_text("".join(w + "\n" for w in self.words), encoding="utf-8")

    def __getitem__(self, i):
        return self.words[i]

    def __len__(self):
        return len(self.words)

    def __repr__(self):
        return f"Lexicon({len(self.words)} words)"


def _clamp(v: float) -> float:
    return min(1.0, max(0.0, v))


class UnitCost:
    """Standard edit distance: every operation costs 1."""

    def delete_cost(self, i: int, probs: ProbTable) -> float:
        return 1.0

    def insert_cost(self, symbol: str) -> float:
        return 1.0

    def replace_cost(self, i: int, symbol: str, probs: ProbTable) -> float:
        return 1.0


class VotedCost:
    """Costs driven by the voted character probabilities.

    Deleting the character at ``i`` costs its own voted probability;
    replacing it with ``symbol`` costs ``1 - p_i(symbol)``; inserting costs 1.
    """

    def delete_cost(self, i: int, probs: ProbTable) -> float:
        return _clamp(probs.prob(i, probs.text[i]))

    def insert_cost(self, symbol: str) -> float:
        return 1.0

    def replace_cost(self, i: int, symbol: str, probs: ProbTable) -> float:
        return _clamp(1.0 - probs.prob(i, symbol))


DEFAULT_COSTS = VotedCost()
UNIT_COSTS = UnitCost()


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def weighted_edit_distance(pred: str, probs: ProbTable, candidate: str, costs=DEFAULT_COSTS) -> float:
    """Distance from ``pred`` to ``candidate`` with probability-aware costs.

    Row/column zero of the table hold ``max(i, j)``; interior cells take the
    cheapest of delete (``C_d``), insert (``C_i``) and replace
    (``C_r`` when symbols differ, free otherwise).
    """
    if len(probs) != len(pred):
        raise ContractError(f"prob table has {len(probs)} entries for a {len(pred)}-symbol prediction")
    m, n = len(pred), len(candidate)
    dele = [costs.delete_cost(i, probs) for i in range(m)]
    ins = [costs.insert_cost(c) for c in candidate]
    prev = [float(j) for j in range(n + 1)]
    for i in range(1, m + 1):
        a = pred[i - 1]
        cd = dele[i - 1]
        cur = [float(i)]
        for j in range(1, n + 1):
            b = candidate[j - 1]
            sub = prev[j - 1] if a == b else prev[j - 1] + costs.replace_cost(i - 1, b, probs)
            cur.append(min(prev[j] + cd, cur[j - 1] + ins[j - 1], sub))
        prev = cur
    return prev[-1]


def lexicon_distances(pred: str, probs: ProbTable, lex: Lexicon, costs=DEFAULT_COSTS) -> np.ndarray:
    """Weighted edit distance from ``pred`` to every lexicon word at once.

    Same recurrence as :func:`weighted_edit_distance`, run column by column
    over the whole padded word matrix.
    """
    if len(probs) != len(pred):
        raise ContractError(f"prob table has {len(probs)} entries for a {len(pred)}-symbol prediction")
    codes, lengths = lex.encoded()
    m, width = len(pred), codes.shape[1]
    dele = [costs.delete_cost(i, probs) for i in range(m)]
    ins = np.array([costs.insert_cost(c) for c in CHARSET])[codes]
    rep = np.array([[costs.replace_cost(i, c, probs) for c in CHARSET] for i in range(m)]).reshape(m, NUM_CHARS)
    pred_codes = [CHARSET.find(c) for c in pred]  # -1 never equals a word code

    prev = np.broadcast_to(np.arange(width + 1, dtype=np.float64), (len(codes), width + 1)).copy()
    for i in range(1, m + 1):
        cur = np.empty_like(prev)
        cur[:, 0] = float(i)
        same = codes == pred_codes[i - 1]
        sub = np.where(same, prev[:, :-1], prev[:, :-1] + rep[i - 1][codes])
        via_delete = prev[:, 1:] + dele[i - 1]
        for j in range(1, width + 1):
            cur[:, j] = np.minimum(np.minimum(via_delete[:, j - 1], cur[:, j - 1] + ins[:, j - 1]), sub[:, j - 1])
        prev = cur
    return prev[np.arange(len(codes)), lengths]


def best_match(
    pred: str,
    probs: ProbTable,
    lex: Sequence[str],
    costs=DEFAULT_COSTS,
    max_distance: Optional[float] = None,
) -> Optional[tuple[str, float]]:
    """Lexicon word nearest to ``pred``, or ``None`` beyond ``max_distance``.

    Ties on distance go to the smaller plain edit distance, then to the
    earlier lexicon entry.
    """
    if not isinstance(lex, Lexicon):
        lex = Lexicon(lex)
    if len(lex) == 0:
        raise ContractError("lexicon is empty")
    dist = lexicon_distances(pred, probs, lex, costs)
    best_d = float(dist.min())
    if max_distance is not None and best_d > max_distance:
        return None
    tied = np.flatnonzero(dist == best_d)
    k = min(tied, key=lambda t: (edit_distance(pred, lex[t]), t))
    return lex[int(k)], best_d

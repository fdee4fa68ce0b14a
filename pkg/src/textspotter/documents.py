"""JSON document schemas: annotations, proposals and spotting results.

Every document carries ``"version": 1``. Polygons are flat ``[x0, y0, x1,
y1, ...]`` lists in image pixels; boxes are ``[xmin, ymin, xmax, ymax]``.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .decode import ProbTable, SpottedInstance
from .evalproto import GtLabel
from .geometry import Rect, ScoredBox
from .maps import NUM_CHARS, char_index
from .targets import CharBox, GtInstance

SCHEMA_VERSION = 1


class DocumentError(ValueError):
    pass


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _check_box(v: List[float]) -> List[float]:
    if len(v) != 4:
        raise ValueError(f"box needs 4 numbers, got {len(v)}")
    if not (v[0] < v[2] and v[1] < v[3]):
        raise ValueError(f"box {v} has non-positive extent")
    return v


def _check_polygon(v: List[float]) -> List[float]:
    if len(v) % 2:
        raise ValueError("polygon needs an even number of coordinates")
    if len(v) < 6:
        raise ValueError(f"polygon needs at least 3 vertices, got {len(v) // 2}")
    return v


class CharBoxRecord(_Model):
    box: List[float]
    label: str

    _box = field_validator("box")(_check_box)

    @field_validator("label")
    @classmethod
    def _label(cls, v: str) -> str:
        if len(v) != 1:
            raise ValueError(f"label must be a single symbol, got {v!r}")
        char_index(v)
        return v.lower()


class InstanceRecord(_Model):
    id: Optional[str] = None
    polygon: List[float]
    transcription: str = ""
    care: bool = True
    char_boxes: Optional[List[CharBoxRecord]] = None

    @model_validator(mode="before")
    @classmethod
    def _polygon(cls, data):
        if isinstance(data, dict) and "polygon" in data:
            try:
                _check_polygon(list(data["polygon"]))
            except (ValueError, TypeError) as exc:
                raise ValueError(f"instance {data.get('id')!r}: {exc}") from None
        return data

    def to_instance(self) -> GtInstance:
        boxes = None
        if self.char_boxes is not None:
            boxes = tuple(CharBox(Rect(*c.box), c.label) for c in self.char_boxes)
        return GtInstance(np.reshape(self.polygon, (-1, 2)), self.transcription, boxes)

    def to_label(self) -> GtLabel:
        return GtLabel(np.reshape(self.polygon, (-1, 2)), self.transcription, self.care)


class ImageAnnotation(_Model):
    id: str
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    instances: List[InstanceRecord] = []


class AnnotationDocument(_Model):
    version: Literal[1] = SCHEMA_VERSION
    images: List[ImageAnnotation] = []


class ProposalRecord(_Model):
    box: List[float]
    score: float = Field(ge=0.0, le=1.0)
    stack: Optional[str] = None  # MTSR file name relative to the stacks directory

    _box = field_validator("box")(_check_box)


class ImageProposals(_Model):
    id: str
    proposals: List[ProposalRecord] = []

    def stack_name(self, k: int) -> str:
        rec = self.proposals[k]
        return rec.stack if rec.stack is not None else f"{self.id}_{k}.mtsr"

    def scored_boxes(self) -> list[ScoredBox]:
        return [ScoredBox(Rect(*p.box), p.score, self.stack_name(k)) for k, p in enumerate(self.proposals)]


class ProposalsDocument(_Model):
    version: Literal[1] = SCHEMA_VERSION
    images: List[ImageProposals] = []


class SpotRecord(_Model):
    polygon: List[float]
    text: str
    score: float = Field(ge=0.0, le=1.0)
    word: Optional[str] = None
    probs: List[List[float]] = []

    _poly = field_validator("polygon")(_check_polygon)

    @model_validator(mode="after")
    def _probs(self):
        if len(self.probs) != len(self.text):
            raise ValueError(f"{len(self.probs)} prob rows for text {self.text!r}")
        if any(len(row) != NUM_CHARS for row in self.probs):
            raise ValueError(f"prob rows must have {NUM_CHARS} entries")
        return self

    @classmethod
    def from_instance(cls, s: SpottedInstance) -> "SpotRecord":
        return cls(
            polygon=[float(v) for v in np.asarray(s.polygon).ravel()],
            text=s.text,
            score=s.det_score,
            word=s.word,
            probs=s.probs.probs.tolist(),
        )

    def to_instance(self) -> SpottedInstance:
        probs = ProbTable(self.text, np.array(self.probs, dtype=np.float64).reshape(len(self.text), NUM_CHARS))
        return SpottedInstance(np.reshape(self.polygon, (-1, 2)), self.text, probs, self.score, self.word)


class ImageResults(_Model):
    id: str
    instances: List[SpotRecord] = []


class ResultsDocument(_Model):
    version: Literal[1] = SCHEMA_VERSION
    images: List[ImageResults] = []


def _describe(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<document>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_document(model, text: str, source: str = "<string>"):
    if not text.strip():
        return model()
    try:
        return model.model_validate_json(text)
    except ValidationError as exc:
        raise DocumentError(f"{source}: {_describe(exc)}") from None


def load_document(model, path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DocumentError(f"{path}: {exc}") from None
    return parse_document(model, text, str(path))


def dump_document(doc: BaseModel) -> str:
    return doc.model_dump_json(indent=1) + "\n"


def save_document(doc: BaseModel, path) -> None:
    Path(path).write_text(dump_document(doc), encoding="utf-8")

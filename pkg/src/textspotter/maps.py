"""Score-map containers, the 36-symbol charset and the MTSR tensor format.

A mask stack always has 38 channels laid out as::

    0        global text instance map
    1..36    character maps, channel = charset index + 1
    37       background map of characters

Values are normalized to [0, 1]; an 8-bit threshold ``t`` corresponds to
``t / 255`` here.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

CHARSET = "0123456789abcdefghijklmnopqrstuvwxyz"
NUM_CHARS = len(CHARSET)
NUM_CHANNELS = NUM_CHARS + 2
GLOBAL_CHANNEL = 0
BACKGROUND_CHANNEL = NUM_CHANNELS - 1

_INDEX = {c: i for i, c in enumerate(CHARSET)}

MAGIC = b"MTSR"
VERSION = 1

PathOrFile = Union[str, Path, BinaryIO]


class FormatError(ValueError):
    """Malformed MTSR payload. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def fold(symbol: str) -> str:
    return symbol.lower()


def char_index(symbol: str) -> int:
    """Charset index of ``symbol`` after case folding; KeyError if unknown."""
    try:
        return _INDEX[symbol.lower()]
    except KeyError:
        raise KeyError(f"symbol {symbol!r} is not in the charset") from None


def char_symbol(index: int) -> str:
    if not 0 <= index < NUM_CHARS:
        raise IndexError(f"charset index {index} out of range")
    return CHARSET[index]


def in_charset(text: str) -> bool:
    return all(c.lower() in _INDEX for c in text)


def charset_filter(text: str) -> str:
    """Case-fold and drop every symbol outside the charset."""
    return "".join(c for c in text.lower() if c in _INDEX)


def as_score_map(values) -> np.ndarray:
    """Validate a 2-D grid of values in [0, 1] and return it as float64."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"score map must be a non-empty 2-D grid, got shape {arr.shape}")
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise ValueError("score map values must lie in [0, 1]")
    return arr


class MaskStack:
    """Immutable 38 x H x W float32 stack of score maps."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float32, copy=True)
        if arr.ndim != 3 or arr.shape[0] != NUM_CHANNELS:
            raise ValueError(
                f"mask stack needs shape ({NUM_CHANNELS}, H, W), got {arr.shape}"
            )
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError("mask stack maps must be at least 1x1")
        if not np.all((arr >= 0.0) & (arr <= 1.0)):
            raise ValueError("mask stack values must lie in [0, 1]")
        arr.flags.writeable = False
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def height(self) -> int:
        return self._data.shape[1]

    @property
    def width(self) -> int:
        return self._data.shape[2]

    @property
    def global_map(self) -> np.ndarray:
        return self._data[GLOBAL_CHANNEL]

    @property
    def char_maps(self) -> np.ndarray:
        """The 36 character channels, indexed by charset index."""
        return self._data[1 : 1 + NUM_CHARS]

    @property
    def background(self) -> np.ndarray:
        return self._data[BACKGROUND_CHANNEL]

    def char_map(self, symbol: str) -> np.ndarray:
        return self._data[char_index(symbol) + 1]

    @classmethod
    def empty(cls, height: int = 32, width: int = 128) -> "MaskStack":
        """A stack with no text: global 0, characters 0, background 1."""
        data = np.zeros((NUM_CHANNELS, height, width), dtype=np.float32)
        data[BACKGROUND_CHANNEL] = 1.0
        return cls(data)

    def __eq__(self, other):
        if not isinstance(other, MaskStack):
            return NotImplemented
        return np.array_equal(self._data, other._data)

    def __repr__(self):
        return f"MaskStack(height={self.height}, width={self.width})"


# -- MTSR tensor format ------------------------------------------------------


def write_tensor(array, sink: PathOrFile) -> None:
    """Write an arbitrary-rank array as little-endian float32 MTSR."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + bytes([VERSION]) + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = header + arr.tobytes(order="C")
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(payload)
    else:
        sink.write(payload)


def read_tensor(source: PathOrFile) -> np.ndarray:
    if isinstance(source, (str, Path)):
        raw = Path(source).read_bytes()
    else:
        raw = source.read()
    return parse_tensor(raw)


def parse_tensor(raw: bytes) -> np.ndarray:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", 0)
    if len(raw) < 5:
        raise FormatError("missing version byte", 4)
    if raw[4] != VERSION:
        raise FormatError(f"unsupported version {raw[4]}", 4)
    if len(raw) < 9:
        raise FormatError("truncated rank field", 5)
    (rank,) = struct.unpack_from("<I", raw, 5)
    dims_end = 9 + 4 * rank
    if len(raw) < dims_end:
        raise FormatError(f"truncated dimensions for rank {rank}", 9)
    shape = struct.unpack_from(f"<{rank}I", raw, 9)
    count = int(np.prod(shape, dtype=np.int64))
    expected = dims_end + 4 * count
    if len(raw) < expected:
        raise FormatError(
            f"truncated payload: need {4 * count} bytes, have {len(raw) - dims_end}",
            len(raw),
        )
    if len(raw) > expected:
        raise FormatError(f"{len(raw) - expected} trailing bytes after payload", expected)
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=dims_end)
    return values.reshape(shape).astype(np.float32)


def save_map_stack(stack: MaskStack, destination: PathOrFile) -> None:
    if not isinstance(stack, MaskStack):
        stack = MaskStack(stack)
    write_tensor(stack.data, destination)


def load_map_stack(source: PathOrFile) -> MaskStack:
    arr = read_tensor(source)
    if arr.ndim != 3:
        raise FormatError(f"mask stack must have rank 3, got {arr.ndim}", 5)
    if arr.shape[0] != NUM_CHANNELS:
        raise FormatError(f"channel count {arr.shape[0]} != {NUM_CHANNELS}", 9)
    return MaskStack(arr)


def stack_to_bytes(stack: MaskStack) -> bytes:
    buf = io.BytesIO()
    save_map_stack(stack, buf)
    return buf.getvalue()

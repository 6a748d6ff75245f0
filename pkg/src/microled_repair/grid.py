"""Binary chip arrays, random instances, defect metrics and the JSON grid format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DONOR_FILL = 0
TARGET_FILL = 1


class GridFormatError(ValueError):
    """Raised for malformed grid files; the message carries the offending location."""


class ChipArray:
    """Immutable binary occupancy grid.

    ``cells[i, j]`` is row ``i`` (y) and column ``j`` (x).  Coordinates outside
    the grid read as ``oob_fill``: 0 for donors, 1 for targets, so a target
    never asks for chips it cannot hold.
    """

    __slots__ = ("_cells", "oob_fill")

    def __init__(self, cells, oob_fill: int = DONOR_FILL):
        arr = np.asarray(cells)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"cells must be a non-empty 2D grid, got shape {arr.shape}")
        if oob_fill not in (0, 1):
            raise ValueError(f"oob_fill must be 0 or 1, got {oob_fill!r}")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("cells must be binary (0 or 1)")
        cells_u8 = arr.astype(np.uint8)
        cells_u8.setflags(write=False)
        self._cells = cells_u8
        self.oob_fill = int(oob_fill)

    @classmethod
    def donor(cls, cells) -> "ChipArray":
        return cls(cells, DONOR_FILL)

    @classmethod
    def target(cls, cells) -> "ChipArray":
        return cls(cells, TARGET_FILL)

    @property
    def cells(self) -> np.ndarray:
        return self._cells

    @property
    def height(self) -> int:
        return self._cells.shape[0]

    @property
    def width(self) -> int:
        return self._cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._cells.shape

    @property
    def role(self) -> str:
        return "target" if self.oob_fill == TARGET_FILL else "donor"

    def at(self, i: int, j: int) -> int:
        if 0 <= i < self.height and 0 <= j < self.width:
            return int(self._cells[i, j])
        return self.oob_fill

    def to_float(self) -> np.ndarray:
        return self._cells.astype(np.float64)

    def chip_count(self) -> int:
        return int(self._cells.sum(dtype=np.int64))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChipArray):
            return NotImplemented
        return self.oob_fill == other.oob_fill and np.array_equal(self._cells, other._cells)

    def __hash__(self):
        return hash((self.oob_fill, self.shape, self._cells.tobytes()))

    def __repr__(self) -> str:
        return f"ChipArray({self.role}, {self.width}x{self.height}, defects={defect_count(self)})"


@dataclass(frozen=True)
class InstanceSpec:
    donor_dims: tuple[int, int]
    target_dims: tuple[int, int]
    d1: float
    d2: float
    seed: int = 0

    def __post_init__(self):
        for name, dims in (("donor_dims", self.donor_dims), ("target_dims", self.target_dims)):
            if len(dims) != 2 or min(dims) < 1:
                raise ValueError(f"{name} must be a (width, height) pair of positive ints, got {dims}")
        for name, rate in (("d1", self.d1), ("d2", self.d2)):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {rate}")

    @classmethod
    def square(cls, size: int, d1: float, d2: float, seed: int = 0) -> "InstanceSpec":
        return cls((size, size), (size, size), d1, d2, seed)


def generate_instance(spec: InstanceSpec) -> tuple[ChipArray, ChipArray]:
    """Draw an independent Bernoulli defect pattern for donor and target.

    The donor is drawn first from the seeded stream, then the target.
    """
    rng = np.random.default_rng(int(spec.seed) & 0xFFFF_FFFF_FFFF_FFFF)
    w1, h1 = spec.donor_dims
    w2, h2 = spec.target_dims
    donor = rng.random((h1, w1)) >= spec.d1
    target = rng.random((h2, w2)) >= spec.d2
    return ChipArray.donor(donor), ChipArray.target(target)


def defect_count(a: ChipArray | np.ndarray) -> int:
    cells = a.cells if isinstance(a, ChipArray) else np.asarray(a)
    return int(cells.size - np.count_nonzero(cells))


def defect_rate(a: ChipArray | np.ndarray) -> float:
    cells = a.cells if isinstance(a, ChipArray) else np.asarray(a)
    return defect_count(cells) / cells.size


def array_to_dict(a: ChipArray) -> dict:
    return {
        "width": a.width,
        "height": a.height,
        "oob_fill": a.oob_fill,
        "cells": a.cells.ravel().tolist(),
    }


def array_from_dict(data, source: str = "<dict>") -> ChipArray:
    if not isinstance(data, dict):
        raise GridFormatError(f"{source}: top level must be an object")
    for key in ("width", "height", "oob_fill", "cells"):
        if key not in data:
            raise GridFormatError(f"{source}: missing field '{key}'")
    width, height, fill, cells = data["width"], data["height"], data["oob_fill"], data["cells"]
    for key, val in (("width", width), ("height", height)):
        if type(val) is not int or val < 1:
            raise GridFormatError(f"{source}: field '{key}' must be a positive integer, got {val!r}")
    if type(fill) is not int or fill not in (0, 1):
        raise GridFormatError(f"{source}: field 'oob_fill' must be 0 or 1, got {fill!r}")
    if not isinstance(cells, list):
        raise GridFormatError(f"{source}: field 'cells' must be a list")
    if len(cells) != width * height:
        raise GridFormatError(
            f"{source}: dimension mismatch, 'cells' has {len(cells)} entries "
            f"but width*height = {width * height}"
        )
    for k, val in enumerate(cells):
        if type(val) is not int or val not in (0, 1):
            raise GridFormatError(
                f"{source}: non-binary value {val!r} at cells[{k}] (row {k // width}, col {k % width})"
            )
    return ChipArray(np.array(cells, dtype=np.uint8).reshape(height, width), fill)


def write_array(a: ChipArray, path) -> None:
    Path(path).write_text(json.dumps(array_to_dict(a), separators=(",", ":")) + "\n")


def read_array(path) -> ChipArray:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return array_from_dict(data, source=str(path))

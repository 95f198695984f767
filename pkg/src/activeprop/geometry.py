"""Axis-aligned box geometry and overlap computation for proposal sets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in continuous corner coordinates.

    ``(x1, y1)`` is the top-left corner and ``(x2, y2)`` the bottom-right;
    area is ``(x2 - x1) * (y2 - y1)`` with no pixel discretization. Boxes
    with non-positive area or non-finite coordinates are rejected at
    construction so downstream overlap math never sees NaN.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        raw = (self.x1, self.y1, self.x2, self.y2)
        try:
            coords = tuple(float(c) for c in raw)
        except (TypeError, ValueError) as exc:
            raise InputError(f"box coordinates must be numbers, got {raw}") from exc
        if not all(math.isfinite(c) for c in coords):
            raise InputError(f"box coordinates must be finite, got {coords}")
        if not (coords[2] > coords[0] and coords[3] > coords[1]):
            raise InputError(f"box must have strictly positive area, got {coords}")
        for name, value in zip(("x1", "y1", "x2", "y2"), coords):
            object.__setattr__(self, name, value)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def contains(self, other: "Box") -> bool:
        """True if ``other`` lies fully inside this box (edges may touch)."""
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and self.x2 >= other.x2
            and self.y2 >= other.y2
        )

    def to_list(self) -> list[float]:
        return [float(self.x1), float(self.y1), float(self.x2), float(self.y2)]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Box":
        if len(values) != 4:
            raise InputError(f"box needs exactly 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class ProposalSet:
    """Ordered candidate boxes for one image; index identity is stable."""

    boxes: tuple[Box, ...]
    image_id: object = 0

    def __post_init__(self):
        if not isinstance(self.boxes, tuple):
            object.__setattr__(self, "boxes", tuple(self.boxes))
        if len(self.boxes) == 0:
            raise InputError("proposal set must be non-empty")

    def __len__(self) -> int:
        return len(self.boxes)

    def __getitem__(self, index: int) -> Box:
        return self.boxes[index]

    @cached_property
    def array(self) -> np.ndarray:
        """(R, 4) float64 view of the boxes; cached, do not mutate."""
        return boxes_to_array(self.boxes)

    def subset(self, indices: Iterable[int], image_id: object = None) -> "ProposalSet":
        """New set holding boxes[i] for each i, duplicates allowed."""
        ident = self.image_id if image_id is None else image_id
        return ProposalSet(tuple(self.boxes[int(i)] for i in indices), ident)


def boxes_to_array(boxes: Sequence[Box]) -> np.ndarray:
    return np.array([[b.x1, b.y1, b.x2, b.y2] for b in boxes], dtype=np.float64)


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area of two boxes, in [0, 1].

    Symmetric; exactly 1.0 for identical boxes and 0.0 for disjoint ones.
    """
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(rows: ProposalSet, cols: Sequence[Box]) -> np.ndarray:
    """Pairwise IoU, entry (i, j) = iou(rows[i], cols[j]); shape (|rows|, |cols|)."""
    if len(cols) == 0:
        raise InputError("iou_matrix needs at least one column box")
    a = rows.array
    b = boxes_to_array(cols)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)

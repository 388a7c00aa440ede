"""Bounding-box arithmetic, centers, and the left/right spatial-relation rule.

All functions are pure and operate on plain values; boxes use the
``[x, y, w, h]`` convention (top-left corner plus size, y growing downward).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

__all__ = [
    "BBox",
    "Center",
    "SpatialRelation",
    "CanvasSpec",
    "Violation",
    "center",
    "relation_of",
    "validate_box",
    "boxes_overlap",
]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: left edge, top edge, width, height (pixels).

    The constructor performs no validation so that invalid candidate boxes
    (e.g. straight from a language model) can be represented and then
    *reported on* by :func:`validate_box`.
    """

    x: float
    y: float
    w: float
    h: float

    def as_int_list(self) -> list[int]:
        """Serialized form: a 4-element integer array ``[x, y, w, h]``."""
        return [int(self.x), int(self.y), int(self.w), int(self.h)]

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Center:
    """Box center in real (unrounded) pixel coordinates."""

    cx: float
    cy: float


class SpatialRelation(enum.Enum):
    """Horizontal relation of one box with respect to another."""

    LEFT = "left"
    RIGHT = "right"
    NA = "n/a"

    @property
    def word(self) -> str:
        """The lowercase word used in rendered instructions and JSONL."""
        return self.value

    @classmethod
    def from_word(cls, word: str) -> "SpatialRelation":
        for member in cls:
            if member.value == word:
                return member
        raise ValueError(f"unknown spatial relation {word!r}")


@dataclass(frozen=True)
class CanvasSpec:
    """Canvas dimensions and the per-box size cap (strict upper bound)."""

    width: int = 512
    height: int = 512
    max_box_dim: int = 350


class Violation(enum.Enum):
    """Validation findings for boxes and layouts; data, not exceptions."""

    NONPOSITIVE_DIM = "NONPOSITIVE_DIM"
    OUT_OF_BOUNDS = "OUT_OF_BOUNDS"
    DIM_TOO_LARGE = "DIM_TOO_LARGE"
    OVERLAP = "OVERLAP"
    FOREGROUND_IN_BACKGROUND = "FOREGROUND_IN_BACKGROUND"
    OBJECT_COUNT = "OBJECT_COUNT"


def center(b: BBox) -> Center:
    """Center of a box: ``(x + w/2, y + h/2)`` in exact real arithmetic."""
    return Center(b.x + b.w / 2, b.y + b.h / 2)


def relation_of(b_b: BBox, b_a: BBox) -> SpatialRelation:
    """Relation of box B with respect to box A, decided on center x.

    LEFT if B's center is strictly left of A's, RIGHT if strictly right,
    NA on exact equality (no epsilon band: serialized boxes are integers,
    so ties are meaningful).
    """
    cx_b = center(b_b).cx
    cx_a = center(b_a).cx
    if cx_b < cx_a:
        return SpatialRelation.LEFT
    if cx_b > cx_a:
        return SpatialRelation.RIGHT
    return SpatialRelation.NA


def validate_box(b: BBox, c: CanvasSpec = CanvasSpec()) -> list[Violation]:
    """Check one box against a canvas; an empty list means valid.

    A box is valid exactly on the set
    ``{x >= 0, y >= 0, x+w <= W, y+h <= H, 0 < w < maxdim, 0 < h < maxdim}``.
    """
    violations: list[Violation] = []
    if not all(math.isfinite(v) for v in (b.x, b.y, b.w, b.h)):
        violations.append(Violation.OUT_OF_BOUNDS)
        if not (b.w > 0 and b.h > 0):
            violations.append(Violation.NONPOSITIVE_DIM)
        return violations
    if b.w <= 0 or b.h <= 0:
        violations.append(Violation.NONPOSITIVE_DIM)
    if b.x < 0 or b.y < 0 or b.x + b.w > c.width or b.y + b.h > c.height:
        violations.append(Violation.OUT_OF_BOUNDS)
    if b.w >= c.max_box_dim or b.h >= c.max_box_dim:
        violations.append(Violation.DIM_TOO_LARGE)
    return violations


def boxes_overlap(a: BBox, b: BBox) -> bool:
    """True iff the closed rectangles intersect with positive area.

    Edge or corner contact (zero-area intersection) does not count.
    """
    return (
        a.x < b.x + b.w
        and b.x < a.x + a.w
        and a.y < b.y + b.h
        and b.y < a.y + a.h
    )

"""Synthetic scene rendering and an oracle detector.

Layouts are rasterized onto an integer label grid (0 = background, k = the
category with vocabulary id k).  The oracle detector reads tight bounding
boxes straight back off the grid with score 1.0, which makes the full
generate → render → detect → score loop exact and lets perturbation
experiments dial evaluation outcomes deterministically.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Union

import numpy as np

from .cooccur import CategoryVocab
from .errors import ArityError, InvalidInputError, LayoutValidationError
from .evaluator import Detection, DetectionRecord
from .geometry import BBox, CanvasSpec
from .layout import Layout, ObjectAnnotation, head_noun, validate_layout

__all__ = [
    "LabelGrid",
    "rasterize",
    "oracle_detect",
    "DropObject",
    "SwapPositions",
    "Jitter",
    "Perturbation",
    "perturb",
    "export_pgm",
]


@dataclass(frozen=True)
class LabelGrid:
    """A height × width grid of category ids (0 where nothing was drawn)."""

    cells: np.ndarray

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells)
        if cells.ndim != 2 or cells.size == 0:
            raise InvalidInputError(f"label grid must be a non-empty 2-D array, got shape {cells.shape}")
        if not np.issubdtype(cells.dtype, np.integer):
            raise InvalidInputError(f"label grid must hold integers, got dtype {cells.dtype}")
        if cells.min() < 0:
            raise InvalidInputError("label grid ids must be non-negative")
        object.__setattr__(self, "cells", cells)

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    def present_ids(self) -> list[int]:
        """Category ids present on the grid, ascending, background excluded."""
        return [int(i) for i in np.unique(self.cells) if i != 0]


def rasterize(layout: Layout, vocab: CategoryVocab) -> LabelGrid:
    """Draw each object's box onto the grid, later objects painting over earlier.

    Objects map to vocabulary ids through their caption head noun.  The
    layout must be valid; violations abort rendering.
    """
    violations = validate_layout(layout)
    if violations:
        raise LayoutValidationError(violations)
    cells = np.zeros((layout.canvas.height, layout.canvas.width), dtype=np.int32)
    for obj in layout.objects:
        noun = head_noun(obj.caption)
        category_id = vocab.id_of(noun)  # raises UnknownCategoryError
        x, y = int(obj.bbox.x), int(obj.bbox.y)
        w, h = int(obj.bbox.w), int(obj.bbox.h)
        cells[y : y + h, x : x + w] = category_id
    return LabelGrid(cells=cells)


def oracle_detect(grid: LabelGrid, vocab: CategoryVocab, image_id: str = "") -> DetectionRecord:
    """Perfect detector: one tight box per category present, score 1.0."""
    detections = []
    for category_id in grid.present_ids():
        name = vocab.name(category_id)  # raises UnknownCategoryError for stray ids
        rows, cols = np.where(grid.cells == category_id)
        x = int(cols.min())
        y = int(rows.min())
        w = int(cols.max()) - x + 1
        h = int(rows.max()) - y + 1
        detections.append(Detection(label=name, bbox=BBox(x, y, w, h), score=1.0))
    return DetectionRecord(image_id=image_id or "grid", detections=tuple(detections))


@dataclass(frozen=True)
class DropObject:
    """Remove the object at ``index`` from the layout."""

    index: int


@dataclass(frozen=True)
class SwapPositions:
    """Exchange the two objects' bounding boxes (captions stay put)."""


@dataclass(frozen=True)
class Jitter:
    """Translate each object by a seeded offset in [−max_px, max_px] per axis,
    clamped to the canvas."""

    max_px: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_px < 0:
            raise InvalidInputError(f"max_px must be >= 0, got {self.max_px}")


Perturbation = Union[DropObject, SwapPositions, Jitter]


def _clamp_translation(bbox: BBox, dx: int, dy: int, canvas: CanvasSpec) -> BBox:
    x = min(max(bbox.x + dx, 0.0), canvas.width - bbox.w)
    y = min(max(bbox.y + dy, 0.0), canvas.height - bbox.h)
    return BBox(x, y, bbox.w, bbox.h)


def _jitter_layout(layout: Layout, spec: Jitter) -> Layout:
    rng = random.Random(spec.seed)
    moved: list[ObjectAnnotation] = []
    for obj in layout.objects:
        candidate = obj
        # Translation keeps sizes, so only overlap can break validity; redraw
        # a few times before falling back to leaving the object in place.
        for _ in range(8):
            dx = rng.randint(-spec.max_px, spec.max_px)
            dy = rng.randint(-spec.max_px, spec.max_px)
            shifted = ObjectAnnotation(
                caption=obj.caption,
                bbox=_clamp_translation(obj.bbox, dx, dy, layout.canvas),
            )
            trial = Layout(
                objects=tuple(moved) + (shifted,) + layout.objects[len(moved) + 1 :],
                background_prompt=layout.background_prompt,
                canvas=layout.canvas,
            )
            if not validate_layout(trial):
                candidate = shifted
                break
        moved.append(candidate)
    return Layout(objects=tuple(moved), background_prompt=layout.background_prompt, canvas=layout.canvas)


def perturb(layout: Layout, perturbation: Perturbation) -> Layout:
    """Apply one perturbation, returning a new, still-valid layout."""
    if isinstance(perturbation, DropObject):
        if not 0 <= perturbation.index < len(layout.objects):
            raise IndexError(
                f"drop index {perturbation.index} outside [0, {len(layout.objects)})"
            )
        remaining = tuple(
            obj for i, obj in enumerate(layout.objects) if i != perturbation.index
        )
        if not remaining:
            raise ArityError("dropping the only object would leave an empty layout")
        result = Layout(objects=remaining, background_prompt=layout.background_prompt, canvas=layout.canvas)
    elif isinstance(perturbation, SwapPositions):
        if len(layout.objects) != 2:
            raise ArityError(f"position swap needs exactly 2 objects, got {len(layout.objects)}")
        first, second = layout.objects
        result = Layout(
            objects=(
                ObjectAnnotation(caption=first.caption, bbox=second.bbox),
                ObjectAnnotation(caption=second.caption, bbox=first.bbox),
            ),
            background_prompt=layout.background_prompt,
            canvas=layout.canvas,
        )
    elif isinstance(perturbation, Jitter):
        result = _jitter_layout(layout, perturbation)
    else:
        raise InvalidInputError(f"unknown perturbation {perturbation!r}")
    violations = validate_layout(result)
    if violations:
        raise LayoutValidationError(violations)
    return result


def export_pgm(grid: LabelGrid) -> bytes:
    """Binary PGM (P5) rendering of the grid for quick visual inspection.

    Background is white; categories darken with id so adjacent ids remain
    distinguishable for small vocabularies.
    """
    cells = grid.cells
    shade = np.where(cells == 0, 255, np.maximum(0, 225 - cells * 25)).astype(np.uint8)
    header = f"P5 {grid.width} {grid.height} 255\n".encode("ascii")
    return header + shade.tobytes()

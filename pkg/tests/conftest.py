"""Shared fixtures: the canonical two-object layout, a tiny instances file,
and a scrubbed environment so PLACEKIT_* variables never leak into tests."""

from __future__ import annotations

import pytest

from placekit.config import load_config
from placekit.layout import parse_layout_response

# The canonical two-object layout used across the suite: a 512x512 garden
# scene with a cat on the left and a dog on the right.
GARDEN_LAYOUT_TEXT = (
    "Objects: [('a gray cat', [51, 67, 271, 324]), ('an orange dog', [302, 119, 211, 228])]\n"
    "Background prompt: A realistic photo of a garden with"
)

GARDEN_CAPTION = (
    "A realistic photo of a garden with a gray cat on the left and an orange dog on the right."
)


@pytest.fixture(autouse=True)
def _clean_placekit_env(monkeypatch):
    """Remove ambient PLACEKIT_* variables so config tests see only their own."""
    import os

    for name in [n for n in os.environ if n.startswith("PLACEKIT_")]:
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def garden_layout():
    return parse_layout_response(GARDEN_LAYOUT_TEXT)


@pytest.fixture
def coco_instances():
    """Three images: {cat, dog}, {cat}, {cat, dog, book}; one duplicate cat
    instance to exercise per-image dedup."""
    return {
        "images": [{"id": 1}, {"id": 2}, {"id": 3}],
        "categories": [
            {"id": 1, "name": "cat"},
            {"id": 2, "name": "dog"},
            {"id": 3, "name": "book"},
        ],
        "annotations": [
            {"image_id": 1, "category_id": 1},
            {"image_id": 1, "category_id": 1},
            {"image_id": 1, "category_id": 2},
            {"image_id": 2, "category_id": 1},
            {"image_id": 3, "category_id": 1},
            {"image_id": 3, "category_id": 2},
            {"image_id": 3, "category_id": 3},
        ],
    }


@pytest.fixture
def default_config():
    return load_config()

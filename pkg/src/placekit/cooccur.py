"""Category co-occurrence statistics over COCO-style instance annotations.

The matrix counts, per unordered category pair, how many distinct images
contain at least one instance of each category.  Pair sampling draws
commonly co-occurring pairs from it, either proportionally to the counts
(default) or uniformly over pairs above a count floor.
"""

from __future__ import annotations

import importlib.resources
import itertools
import json
import random
from dataclasses import dataclass
from typing import Any, Mapping

from .errors import EmptySupportError, SchemaError, UnknownCategoryError

__all__ = [
    "CategoryVocab",
    "CooccurrenceMatrix",
    "PairSample",
    "build_matrix",
    "sample_pairs",
    "load_matrix",
    "load_default_matrix",
]


@dataclass(frozen=True)
class CategoryVocab:
    """Immutable id -> name map of object categories."""

    id_to_name: Mapping[int, str]

    def __post_init__(self) -> None:
        names = list(self.id_to_name.values())
        if any(not isinstance(n, str) or not n.strip() for n in names):
            raise SchemaError("category names must be non-empty strings")
        if len(set(names)) != len(names):
            raise SchemaError("category names must be unique")
        object.__setattr__(self, "id_to_name", dict(self.id_to_name))

    @property
    def name_to_id(self) -> dict[str, int]:
        return {name: cid for cid, name in self.id_to_name.items()}

    def name(self, category_id: int) -> str:
        try:
            return self.id_to_name[category_id]
        except KeyError:
            raise UnknownCategoryError(f"unknown category id {category_id}") from None

    def id_of(self, name: str) -> int:
        try:
            return self.name_to_id[name]
        except KeyError:
            raise UnknownCategoryError(f"unknown category name {name!r}") from None

    def __len__(self) -> int:
        return len(self.id_to_name)


@dataclass(frozen=True)
class CooccurrenceMatrix:
    """Symmetric image-level pair counts; the diagonal is unused and zero.

    ``counts`` maps name pairs ``(a, b)`` with ``a < b`` to positive counts;
    absent pairs have count zero.
    """

    vocab: CategoryVocab
    counts: Mapping[tuple[str, str], int]

    def __post_init__(self) -> None:
        normalized: dict[tuple[str, str], int] = {}
        known = self.vocab.name_to_id
        for (a, b), count in self.counts.items():
            if a not in known or b not in known:
                raise UnknownCategoryError(f"pair ({a!r}, {b!r}) uses a name outside the vocabulary")
            if a == b:
                raise SchemaError(f"diagonal entry for {a!r} is not allowed")
            if not isinstance(count, int) or count < 0:
                raise SchemaError(f"pair count for ({a!r}, {b!r}) must be a non-negative integer")
            key = (a, b) if a < b else (b, a)
            if count:
                normalized[key] = normalized.get(key, 0) + count
        object.__setattr__(self, "counts", normalized)

    def count(self, a: str, b: str) -> int:
        if a == b:
            return 0
        key = (a, b) if a < b else (b, a)
        return self.counts.get(key, 0)

    def to_json_dict(self) -> dict[str, Any]:
        """Artifact form: ``{"vocab": {...}, "pairs": [["cat", "dog", 2], ...]}``."""
        return {
            "vocab": {str(cid): name for cid, name in sorted(self.vocab.id_to_name.items())},
            "pairs": [[a, b, c] for (a, b), c in sorted(self.counts.items())],
        }

    @classmethod
    def from_json_dict(cls, data: Any) -> "CooccurrenceMatrix":
        if not isinstance(data, dict) or "vocab" not in data or "pairs" not in data:
            raise SchemaError("co-occurrence artifact must have 'vocab' and 'pairs'")
        if not isinstance(data["vocab"], dict) or not isinstance(data["pairs"], list):
            raise SchemaError("'vocab' must be an object and 'pairs' a list")
        try:
            id_to_name = {int(cid): name for cid, name in data["vocab"].items()}
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"vocab keys must be integer category ids: {exc}") from exc
        counts: dict[tuple[str, str], int] = {}
        for entry in data["pairs"]:
            if not isinstance(entry, list) or len(entry) != 3:
                raise SchemaError(f"each pair must be [name, name, count], got {entry!r}")
            a, b, c = entry
            if not isinstance(a, str) or not isinstance(b, str) or not isinstance(c, int):
                raise SchemaError(f"each pair must be [name, name, count], got {entry!r}")
            counts[(a, b)] = c
        return cls(vocab=CategoryVocab(id_to_name), counts=counts)


@dataclass(frozen=True)
class PairSample:
    """One sampled category pair with its co-occurrence count at sampling time."""

    category_a: str
    category_b: str
    weight: int


def build_matrix(annotations: Any) -> CooccurrenceMatrix:
    """Count image-level category co-occurrences from COCO-style instances.

    Only ``images[].id``, ``annotations[].{image_id, category_id}``, and
    ``categories[].{id, name}`` are read.  Multiple instances of a category
    in one image count once.
    """
    if not isinstance(annotations, dict):
        raise SchemaError("instances file must hold a JSON object")
    for key in ("images", "annotations", "categories"):
        if key not in annotations or not isinstance(annotations[key], list):
            raise SchemaError(f"instances file must hold a {key!r} array")

    id_to_name: dict[int, str] = {}
    for cat in annotations["categories"]:
        if not isinstance(cat, dict) or "id" not in cat or "name" not in cat:
            raise SchemaError(f"each category needs 'id' and 'name', got {cat!r}")
        if not isinstance(cat["id"], int):
            raise SchemaError(f"category id must be an integer, got {cat['id']!r}")
        id_to_name[cat["id"]] = cat["name"]
    vocab = CategoryVocab(id_to_name)

    for img in annotations["images"]:
        if not isinstance(img, dict) or "id" not in img:
            raise SchemaError(f"each image needs an 'id', got {img!r}")

    categories_per_image: dict[Any, set[int]] = {}
    for ann in annotations["annotations"]:
        if not isinstance(ann, dict) or "image_id" not in ann or "category_id" not in ann:
            raise SchemaError(f"each annotation needs 'image_id' and 'category_id', got {ann!r}")
        cid = ann["category_id"]
        if cid not in id_to_name:
            raise UnknownCategoryError(f"annotation references unknown category id {cid!r}")
        categories_per_image.setdefault(ann["image_id"], set()).add(cid)

    counts: dict[tuple[str, str], int] = {}
    for present in categories_per_image.values():
        names = sorted(vocab.name(cid) for cid in present)
        for a, b in itertools.combinations(names, 2):
            counts[(a, b)] = counts.get((a, b), 0) + 1
    return CooccurrenceMatrix(vocab=vocab, counts=counts)


def sample_pairs(
    m: CooccurrenceMatrix,
    n: int,
    seed: int,
    min_count: int = 10,
    weighting: str = "proportional",
) -> list[PairSample]:
    """Draw ``n`` unordered pairs with replacement, deterministically.

    Eligible pairs are those with count >= ``min_count``; the draw
    probability is proportional to the count (``weighting="proportional"``)
    or uniform over eligible pairs (``weighting="uniform"``).
    """
    if n < 0:
        raise ValueError(f"sample count must be non-negative, got {n}")
    if weighting not in ("proportional", "uniform"):
        raise ValueError(f"weighting must be 'proportional' or 'uniform', got {weighting!r}")
    eligible = [(a, b, c) for (a, b), c in sorted(m.counts.items()) if c >= min_count]
    if not eligible:
        raise EmptySupportError(f"no category pair has co-occurrence count >= {min_count}")
    weights = [c for _, _, c in eligible] if weighting == "proportional" else None
    rng = random.Random(seed)
    drawn = rng.choices(eligible, weights=weights, k=n)
    return [PairSample(category_a=a, category_b=b, weight=c) for a, b, c in drawn]


def load_matrix(path: str) -> CooccurrenceMatrix:
    """Read the co-occurrence artifact JSON from disk."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    return CooccurrenceMatrix.from_json_dict(data)


def load_default_matrix() -> CooccurrenceMatrix:
    """The packaged fallback matrix (12 everyday categories, all pairs >= 10)."""
    resource = importlib.resources.files("placekit").joinpath("data/default_cooccurrence.json")
    return CooccurrenceMatrix.from_json_dict(json.loads(resource.read_text(encoding="utf-8")))

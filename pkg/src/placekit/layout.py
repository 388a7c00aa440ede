"""Layout data model, text grammars, derivations, and edit instructions.

A layout couples a background prompt with one or two captioned bounding
boxes.  This module owns:

* the caption grammar ``<background> with <obj> on the left and <obj> on
  the right.`` and its parser;
* the two-line layout grammar ``Objects: [('<caption>', [x, y, w, h]), ...]``
  / ``Background prompt: <text>``, parser and renderer;
* derivation of the one-object source layout from a two-object layout;
* edit-instruction construction ``Place X on the left/right of Y.``;
* layout validation and the JSONL record schema for training triplets.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import (
    ArityError,
    CaptionParseError,
    LayoutParseError,
    LayoutValidationError,
    NARelationError,
    TripletInvariantError,
)
from .geometry import (
    BBox,
    CanvasSpec,
    SpatialRelation,
    Violation,
    boxes_overlap,
    relation_of,
    validate_box,
)

__all__ = [
    "ObjectAnnotation",
    "Layout",
    "CaptionSpec",
    "EditInstruction",
    "TrainingTriplet",
    "head_noun",
    "parse_caption",
    "parse_layout_response",
    "render_layout",
    "derive_source_layout",
    "make_edit_instruction",
    "validate_layout",
    "layout_to_json",
    "layout_from_json",
    "triplet_to_json",
    "triplet_from_json",
]


@dataclass(frozen=True)
class ObjectAnnotation:
    """One captioned box, e.g. ``('a gray cat', [51, 67, 271, 324])``."""

    caption: str
    bbox: BBox

    def __post_init__(self) -> None:
        if not self.caption.strip():
            raise LayoutParseError("object caption must be non-empty")
        if "\n" in self.caption:
            raise LayoutParseError("object caption must not contain newlines")


@dataclass(frozen=True)
class Layout:
    """Background prompt plus an ordered list of captioned boxes."""

    objects: tuple[ObjectAnnotation, ...]
    background_prompt: str
    canvas: CanvasSpec = CanvasSpec()

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))


@dataclass(frozen=True)
class CaptionSpec:
    """Parsed two-object caption: background plus left/right object phrases."""

    background: str
    left_object: str
    right_object: str

    def __post_init__(self) -> None:
        for name in ("background", "left_object", "right_object"):
            if not getattr(self, name).strip():
                raise CaptionParseError(f"caption field {name} must be non-empty")


@dataclass(frozen=True)
class EditInstruction:
    """``Place {placed} on the {left|right} of {anchor}.``"""

    placed_caption: str
    relation: SpatialRelation
    anchor_caption: str
    rendered: str = field(init=False)

    def __post_init__(self) -> None:
        if self.relation not in (SpatialRelation.LEFT, SpatialRelation.RIGHT):
            raise NARelationError("an edit instruction requires a left or right relation")
        object.__setattr__(
            self,
            "rendered",
            f"Place {self.placed_caption} on the {self.relation.word} of {self.anchor_caption}.",
        )


@dataclass(frozen=True)
class TrainingTriplet:
    """One dataset record: source layout, edit instruction, target layout.

    The constructor enforces the record invariants: the source holds exactly
    one object, the target exactly two, the source object appears verbatim in
    the target, background prompts are identical, and the instruction places
    the object that is present in the target but absent from the source.
    """

    id: str
    source_layout: Layout
    instruction: EditInstruction
    target_layout: Layout
    generation_seed: int

    def __post_init__(self) -> None:
        if len(self.source_layout.objects) != 1:
            raise TripletInvariantError(f"{self.id}: source layout must hold exactly one object")
        if len(self.target_layout.objects) != 2:
            raise TripletInvariantError(f"{self.id}: target layout must hold exactly two objects")
        if self.source_layout.background_prompt != self.target_layout.background_prompt:
            raise TripletInvariantError(f"{self.id}: source and target background prompts differ")
        kept = self.source_layout.objects[0]
        if kept not in self.target_layout.objects:
            raise TripletInvariantError(
                f"{self.id}: the source object is not present verbatim in the target layout"
            )
        missing = [o for o in self.target_layout.objects if o != kept]
        if len(missing) != 1:
            raise TripletInvariantError(
                f"{self.id}: target layout must add exactly one object to the source"
            )
        if self.instruction.placed_caption != missing[0].caption:
            raise TripletInvariantError(
                f"{self.id}: instruction places {self.instruction.placed_caption!r} "
                f"but the added object is {missing[0].caption!r}"
            )
        if self.instruction.anchor_caption != kept.caption:
            raise TripletInvariantError(
                f"{self.id}: instruction anchors on {self.instruction.anchor_caption!r} "
                f"but the source object is {kept.caption!r}"
            )


# --------------------------------------------------------------------------
# Grammars
# --------------------------------------------------------------------------

_CAPTION_RE = re.compile(
    r"^(?P<bg>.+?) with (?P<first>.+?) on the (?P<r1>left|right) "
    r"and (?P<second>.+?) on the (?P<r2>left|right)\.?$",
    re.DOTALL,
)

_LABEL_RE = re.compile(r"^\s*\[?(?P<label>Caption|Objects|Background prompt)\]?\s*:+\s*", re.IGNORECASE)


def _strip_label(text: str, *labels: str) -> str:
    """Remove a leading ``[Label]:`` or ``Label:`` marker if present."""
    m = _LABEL_RE.match(text)
    if m and m.group("label").lower() in {l.lower() for l in labels}:
        return text[m.end():]
    return text


def parse_caption(text: str) -> CaptionSpec:
    """Parse a two-object caption into background and left/right phrases.

    Tolerates a leading ``[Caption]:`` marker, surrounding whitespace, a
    missing final period, and the mirrored phrase order (``... on the right
    and ... on the left``), which is normalized into left/right slots.
    """
    cleaned = _strip_label(text.strip(), "Caption").strip()
    m = _CAPTION_RE.match(cleaned)
    if m is None:
        raise CaptionParseError(f"caption does not match the two-object grammar: {text!r}")
    if m.group("r1") == m.group("r2"):
        raise CaptionParseError(
            f"caption must mention each of left and right exactly once: {text!r}"
        )
    slots = {m.group("r1"): m.group("first"), m.group("r2"): m.group("second")}
    return CaptionSpec(
        background=m.group("bg").strip(),
        left_object=slots["left"].strip(),
        right_object=slots["right"].strip(),
    )


def _coerce_pixel(value: Any) -> int:
    if isinstance(value, bool):
        raise LayoutParseError(f"bounding-box entries must be integers, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise LayoutParseError(f"bounding-box entries must be integers, got {value!r}")


def _parse_object_entry(entry: Any) -> ObjectAnnotation:
    if not isinstance(entry, tuple) or len(entry) != 2:
        raise LayoutParseError(f"each object must be a (caption, [x, y, w, h]) pair, got {entry!r}")
    caption, box = entry
    if not isinstance(caption, str) or not caption.strip():
        raise LayoutParseError(f"object caption must be a non-empty string, got {caption!r}")
    if not isinstance(box, (list, tuple)) or len(box) != 4:
        raise LayoutParseError(f"bounding box must be a 4-element array, got {box!r}")
    x, y, w, h = (_coerce_pixel(v) for v in box)
    return ObjectAnnotation(caption=caption.strip(), bbox=BBox(x, y, w, h))


def parse_layout_response(text: str, canvas: CanvasSpec = CanvasSpec()) -> Layout:
    """Parse the two-line layout grammar into a :class:`Layout`.

    Accepts ``Objects:`` / ``[Objects]:`` and ``Background prompt:`` /
    ``[Background prompt]:`` line markers (extra colons tolerated), single or
    double quotes around captions, and leading/trailing whitespace.  Raises
    :class:`LayoutParseError` for malformed text and
    :class:`LayoutValidationError` (with the violations attached) when the
    object count is outside 1..2.

    Geometric findings (bounds, size caps, overlap, background leakage) do
    *not* fail the parse: language models emit slightly-off boxes routinely,
    and callers that need strict geometry run :func:`validate_layout` on the
    result — the dataset pipeline does, and rejects such layouts there.
    """
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    objects_lines: list[str] = []
    background: str | None = None
    section: str | None = None
    for line in lines:
        m = _LABEL_RE.match(line)
        label = m.group("label").lower() if m else None
        if label == "objects":
            section = "objects"
            objects_lines.append(line[m.end():])
        elif label == "background prompt":
            section = "background"
            background = line[m.end():].strip()
        elif label == "caption":
            section = None
        elif section == "objects":
            objects_lines.append(line)
        elif section == "background" and background is not None:
            background = f"{background} {line.strip()}".strip()
    if not objects_lines:
        raise LayoutParseError(f"no 'Objects:' line found in layout response: {text!r}")
    if background is None:
        raise LayoutParseError(f"no 'Background prompt:' line found in layout response: {text!r}")
    if not background:
        raise LayoutParseError("background prompt must be non-empty")

    list_text = " ".join(objects_lines).strip()
    try:
        parsed = ast.literal_eval(list_text)
    except (ValueError, SyntaxError) as exc:
        raise LayoutParseError(f"objects list is not a literal list of tuples: {list_text!r}") from exc
    if not isinstance(parsed, (list, tuple)):
        raise LayoutParseError(f"objects must form a list, got {parsed!r}")

    annotations = tuple(_parse_object_entry(entry) for entry in parsed)
    layout = Layout(objects=annotations, background_prompt=background, canvas=canvas)
    if not 1 <= len(layout.objects) <= 2:
        raise LayoutValidationError([Violation.OBJECT_COUNT])
    return layout


def render_layout(l: Layout) -> str:
    """Render the canonical two-line layout text (round-trips with the parser)."""
    entries = ", ".join(
        f"({obj.caption!r}, {obj.bbox.as_int_list()})" for obj in l.objects
    )
    return f"Objects: [{entries}]\nBackground prompt: {l.background_prompt}"


# --------------------------------------------------------------------------
# Derivations
# --------------------------------------------------------------------------


def derive_source_layout(l2: Layout, removed_index: int) -> Layout:
    """Drop one annotation from a two-object layout, keeping the rest verbatim."""
    if len(l2.objects) != 2:
        raise ArityError(f"source derivation requires exactly two objects, got {len(l2.objects)}")
    if removed_index not in (0, 1):
        raise IndexError(f"removed_index must be 0 or 1, got {removed_index}")
    kept = tuple(obj for i, obj in enumerate(l2.objects) if i != removed_index)
    return Layout(objects=kept, background_prompt=l2.background_prompt, canvas=l2.canvas)


def make_edit_instruction(l2: Layout, removed_index: int) -> EditInstruction:
    """Build the instruction that re-places the removed object.

    The placed object is the one absent from the derived source layout; the
    relation is computed from the removed box with respect to the kept box.
    """
    if len(l2.objects) != 2:
        raise ArityError(f"instruction derivation requires exactly two objects, got {len(l2.objects)}")
    if removed_index not in (0, 1):
        raise IndexError(f"removed_index must be 0 or 1, got {removed_index}")
    removed = l2.objects[removed_index]
    kept = l2.objects[1 - removed_index]
    relation = relation_of(removed.bbox, kept.bbox)
    if relation is SpatialRelation.NA:
        raise NARelationError(
            f"objects {removed.caption!r} and {kept.caption!r} have tied center-x; "
            "no left/right instruction exists"
        )
    return EditInstruction(
        placed_caption=removed.caption,
        relation=relation,
        anchor_caption=kept.caption,
    )


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


def head_noun(caption: str) -> str:
    """The caption's head noun: its final token, lowercased.

    ``"a gray cat"`` -> ``"cat"``; ``"a fluffy teddy bear"`` -> ``"bear"``.
    """
    tokens = caption.strip().rstrip(".,;:!?").split()
    if not tokens:
        raise CaptionParseError(f"cannot take the head noun of empty caption {caption!r}")
    return tokens[-1].lower()


def validate_layout(l: Layout) -> list[Violation]:
    """All violations of the layout invariants; an empty list means valid.

    Checks the object count (1 or 2), each box against the canvas, pairwise
    overlap (positive-area intersection), and leakage of a foreground head
    noun into the background prompt (case-insensitive whole-word match).
    """
    found: list[Violation] = []
    if not 1 <= len(l.objects) <= 2:
        found.append(Violation.OBJECT_COUNT)
    for obj in l.objects:
        for v in validate_box(obj.bbox, l.canvas):
            if v not in found:
                found.append(v)
    for i in range(len(l.objects)):
        for j in range(i + 1, len(l.objects)):
            if boxes_overlap(l.objects[i].bbox, l.objects[j].bbox):
                if Violation.OVERLAP not in found:
                    found.append(Violation.OVERLAP)
    for obj in l.objects:
        noun = head_noun(obj.caption)
        if re.search(rf"\b{re.escape(noun)}\b", l.background_prompt, re.IGNORECASE):
            if Violation.FOREGROUND_IN_BACKGROUND not in found:
                found.append(Violation.FOREGROUND_IN_BACKGROUND)
    return found


# --------------------------------------------------------------------------
# JSON record schema
# --------------------------------------------------------------------------


def layout_to_json(l: Layout) -> dict[str, Any]:
    """JSON form: ``{"objects": [["caption", [x, y, w, h]], ...], "background": str}``."""
    return {
        "objects": [[obj.caption, obj.bbox.as_int_list()] for obj in l.objects],
        "background": l.background_prompt,
    }


def layout_from_json(data: Any, canvas: CanvasSpec = CanvasSpec()) -> Layout:
    if not isinstance(data, dict) or "objects" not in data or "background" not in data:
        raise LayoutParseError(f"layout record must have 'objects' and 'background', got {data!r}")
    if not isinstance(data["objects"], list):
        raise LayoutParseError("layout 'objects' must be a list")
    if not isinstance(data["background"], str):
        raise LayoutParseError("layout 'background' must be a string")
    annotations = []
    for entry in data["objects"]:
        if not isinstance(entry, list) or len(entry) != 2:
            raise LayoutParseError(f"layout object entry must be [caption, bbox], got {entry!r}")
        annotations.append(_parse_object_entry((entry[0], entry[1])))
    return Layout(objects=tuple(annotations), background_prompt=data["background"], canvas=canvas)


def triplet_to_json(t: TrainingTriplet) -> dict[str, Any]:
    """JSONL record with fixed field order: id, seed, source, instruction, target."""
    return {
        "id": t.id,
        "seed": t.generation_seed,
        "source_layout": layout_to_json(t.source_layout),
        "instruction": t.instruction.rendered,
        "target_layout": layout_to_json(t.target_layout),
    }


_INSTRUCTION_RE = re.compile(r"^Place (?P<placed>.+) on the (?P<rel>left|right) of (?P<anchor>.+)\.$")


def parse_instruction(text: str) -> EditInstruction:
    """Inverse of :class:`EditInstruction` rendering (used by readers)."""
    m = _INSTRUCTION_RE.match(text)
    if m is None:
        raise CaptionParseError(f"instruction does not match the Place-X-of-Y grammar: {text!r}")
    return EditInstruction(
        placed_caption=m.group("placed"),
        relation=SpatialRelation.from_word(m.group("rel")),
        anchor_caption=m.group("anchor"),
    )


def triplet_from_json(data: Any, canvas: CanvasSpec = CanvasSpec()) -> TrainingTriplet:
    if not isinstance(data, dict):
        raise LayoutParseError(f"triplet record must be an object, got {data!r}")
    missing = {"id", "seed", "source_layout", "instruction", "target_layout"} - set(data)
    if missing:
        raise LayoutParseError(f"triplet record missing fields: {sorted(missing)}")
    if not isinstance(data["id"], str) or not isinstance(data["seed"], int):
        raise LayoutParseError("triplet 'id' must be a string and 'seed' an integer")
    if not isinstance(data["instruction"], str):
        raise LayoutParseError("triplet 'instruction' must be a string")
    return TrainingTriplet(
        id=data["id"],
        source_layout=layout_from_json(data["source_layout"], canvas),
        instruction=parse_instruction(data["instruction"]),
        target_layout=layout_from_json(data["target_layout"], canvas),
        generation_seed=data["seed"],
    )


def triplet_to_jsonl_line(t: TrainingTriplet) -> str:
    return json.dumps(triplet_to_json(t), ensure_ascii=False)


def read_triplets(lines: Iterable[str], canvas: CanvasSpec = CanvasSpec()) -> list[TrainingTriplet]:
    """Parse a JSONL stream of triplet records; blank lines are skipped."""
    triplets = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LayoutParseError(f"line {n}: invalid JSON: {exc}") from exc
        triplets.append(triplet_from_json(data, canvas))
    return triplets

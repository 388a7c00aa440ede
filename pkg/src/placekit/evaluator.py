"""Detection-based evaluation of spatial-composition fidelity.

Given per-image detections and per-image expected relations, computes:

* object accuracy (OA): both named objects detected above threshold;
* the unconditional spatial score: fraction of cases where both objects
  are present *and* their detected left/right relation matches;
* the conditional spatial score: the same, conditioned on OA.

Scores are kept as exact rationals (``fractions.Fraction``) so identities
such as uncond = cond · (S + U) / N hold bit-for-bit; percentages are
rendered at two decimals only for display.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    IdMismatchError,
    InvalidInputError,
    MissingLabelError,
    MissingRecordError,
    SchemaError,
)
from .geometry import BBox, SpatialRelation, relation_of

__all__ = [
    "Detection",
    "DetectionRecord",
    "EvalCase",
    "EvalReport",
    "object_accuracy",
    "extract_relation",
    "visor",
    "load_cases",
    "load_detection_records",
    "report_to_json_dict",
    "format_report_table",
]


@dataclass(frozen=True)
class Detection:
    """One detected object: label, box, and confidence score."""

    label: str
    bbox: BBox
    score: float

    def __post_init__(self) -> None:
        if not self.label or not self.label.strip():
            raise InvalidInputError("detection label must be non-empty")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class DetectionRecord:
    """All detections reported for one image."""

    image_id: str
    detections: tuple[Detection, ...] = ()

    def __post_init__(self) -> None:
        if not self.image_id:
            raise InvalidInputError("image_id must be non-empty")


@dataclass(frozen=True)
class EvalCase:
    """One evaluation case: which two labels to find and their expected relation.

    ``relation`` is the expected placement of ``label_b`` relative to
    ``label_a`` and must be left or right — never n/a.
    """

    image_id: str
    label_a: str
    label_b: str
    relation: SpatialRelation

    def __post_init__(self) -> None:
        if not self.image_id:
            raise InvalidInputError("image_id must be non-empty")
        if not self.label_a or not self.label_b:
            raise InvalidInputError("case labels must be non-empty")
        if self.label_a == self.label_b:
            raise InvalidInputError(f"case labels must differ, both are {self.label_a!r}")
        if self.relation not in (SpatialRelation.LEFT, SpatialRelation.RIGHT):
            raise InvalidInputError("expected relation must be left or right")


@dataclass(frozen=True)
class EvalReport:
    """Aggregate counts plus exact rational scores."""

    n_cases: int
    oa_count: int
    s_count: int
    u_count: int
    threshold: float = field(default=0.1)

    def __post_init__(self) -> None:
        if self.n_cases < 1:
            raise InvalidInputError("a report needs at least one case")
        if self.s_count < 0 or self.u_count < 0:
            raise InvalidInputError("S and U counts must be non-negative")
        if not self.s_count + self.u_count <= self.oa_count <= self.n_cases:
            raise InvalidInputError("inconsistent counts: need S + U <= OA <= N")

    @property
    def object_accuracy(self) -> Fraction:
        return Fraction(self.oa_count, self.n_cases)

    @property
    def visor_uncond(self) -> Fraction:
        return Fraction(self.s_count, self.n_cases)

    @property
    def visor_cond(self) -> Fraction | None:
        """S / (S + U), or None when no case recorded a relation verdict."""
        if self.s_count + self.u_count == 0:
            return None
        return Fraction(self.s_count, self.s_count + self.u_count)

    @staticmethod
    def _pct(value: Fraction | None) -> float | None:
        if value is None:
            return None
        return round(float(value) * 100.0, 2)

    @property
    def object_accuracy_pct(self) -> float:
        return self._pct(self.object_accuracy)

    @property
    def visor_uncond_pct(self) -> float:
        return self._pct(self.visor_uncond)

    @property
    def visor_cond_pct(self) -> float | None:
        return self._pct(self.visor_cond)


def object_accuracy(case: EvalCase, record: DetectionRecord, threshold: float) -> bool:
    """True when both of the case's labels are detected at or above threshold."""
    if case.image_id != record.image_id:
        raise IdMismatchError(f"case is for {case.image_id!r} but record is for {record.image_id!r}")
    found_a = any(d.label == case.label_a and d.score >= threshold for d in record.detections)
    found_b = any(d.label == case.label_b and d.score >= threshold for d in record.detections)
    return found_a and found_b


def _best_detection(record: DetectionRecord, label: str, threshold: float) -> Detection:
    """Highest-scoring detection of a label; ties prefer larger boxes, then
    earlier position in the record."""
    best: Detection | None = None
    for d in record.detections:
        if d.label != label or d.score < threshold:
            continue
        if best is None or (d.score, d.bbox.area) > (best.score, best.bbox.area):
            best = d
    if best is None:
        raise MissingLabelError(f"no detection of {label!r} at threshold {threshold} in {record.image_id!r}")
    return best


def extract_relation(
    record: DetectionRecord, label_a: str, label_b: str, threshold: float
) -> SpatialRelation:
    """Detected relation of label_b relative to label_a (best box per label)."""
    box_a = _best_detection(record, label_a, threshold).bbox
    box_b = _best_detection(record, label_b, threshold).bbox
    return relation_of(box_b, box_a)


def visor(
    cases: Sequence[EvalCase],
    records: Mapping[str, DetectionRecord],
    threshold: float = 0.1,
) -> EvalReport:
    """Score every case against its detection record.

    A case contributes to S when both objects are detected and the detected
    relation matches the expected one; to U when both are detected but the
    relation does not match (ties on center-x count as mismatches).

    The threshold may sit outside [0, 1]: above 1 nothing is ever detected
    (OA = 0 everywhere), at or below 0 every detection counts.
    """
    if not cases:
        raise InvalidInputError("cannot evaluate an empty case list")
    if not math.isfinite(threshold):
        raise InvalidInputError(f"score threshold must be finite, got {threshold}")
    oa = s = u = 0
    for case in cases:
        record = records.get(case.image_id)
        if record is None:
            raise MissingRecordError(f"no detection record for image {case.image_id!r}")
        if not object_accuracy(case, record, threshold):
            continue
        oa += 1
        detected = extract_relation(record, case.label_a, case.label_b, threshold)
        if detected == case.relation:
            s += 1
        else:
            u += 1
    return EvalReport(n_cases=len(cases), oa_count=oa, s_count=s, u_count=u, threshold=threshold)


def _parse_bbox(raw: object, where: str) -> BBox:
    if (
        not isinstance(raw, list)
        or len(raw) != 4
        or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in raw)
    ):
        raise SchemaError(f"{where}: bbox must be a 4-element [x, y, w, h] list, got {raw!r}")
    return BBox(float(raw[0]), float(raw[1]), float(raw[2]), float(raw[3]))


def _json_lines(path: Path) -> Iterable[tuple[int, dict]]:
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise SchemaError(f"{path}:{lineno}: expected a JSON object, got {type(obj).__name__}")
        yield lineno, obj


def load_detection_records(path: str | Path) -> dict[str, DetectionRecord]:
    """Read detection records from JSONL, keyed by image id (ids must be unique)."""
    records: dict[str, DetectionRecord] = {}
    source = Path(path)
    for lineno, obj in _json_lines(source):
        where = f"{source}:{lineno}"
        image_id = obj.get("image_id")
        if not isinstance(image_id, str) or not image_id:
            raise SchemaError(f"{where}: image_id must be a non-empty string")
        if image_id in records:
            raise InvalidInputError(f"{where}: duplicate detection record for image {image_id!r}")
        raw_dets = obj.get("detections")
        if not isinstance(raw_dets, list):
            raise SchemaError(f"{where}: detections must be a list")
        detections = []
        for d in raw_dets:
            if not isinstance(d, dict):
                raise SchemaError(f"{where}: each detection must be an object")
            label = d.get("label")
            score = d.get("score")
            if not isinstance(label, str) or not label:
                raise SchemaError(f"{where}: detection label must be a non-empty string")
            if not isinstance(score, (int, float)) or isinstance(score, bool):
                raise SchemaError(f"{where}: detection score must be a number")
            try:
                detections.append(Detection(label=label, bbox=_parse_bbox(d.get("bbox"), where), score=float(score)))
            except InvalidInputError as exc:
                raise SchemaError(f"{where}: {exc}") from exc
        records[image_id] = DetectionRecord(image_id=image_id, detections=tuple(detections))
    return records


def load_cases(path: str | Path) -> list[EvalCase]:
    """Read evaluation cases from JSONL."""
    cases: list[EvalCase] = []
    source = Path(path)
    for lineno, obj in _json_lines(source):
        where = f"{source}:{lineno}"
        for key in ("image_id", "label_a", "label_b", "relation"):
            if not isinstance(obj.get(key), str) or not obj[key]:
                raise SchemaError(f"{where}: {key} must be a non-empty string")
        if obj["relation"] not in ("left", "right"):
            raise SchemaError(f"{where}: relation must be 'left' or 'right', got {obj['relation']!r}")
        try:
            cases.append(
                EvalCase(
                    image_id=obj["image_id"],
                    label_a=obj["label_a"],
                    label_b=obj["label_b"],
                    relation=SpatialRelation.from_word(obj["relation"]),
                )
            )
        except InvalidInputError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
    return cases


def report_to_json_dict(report: EvalReport) -> dict:
    """JSON-ready report: integer counts, 2-decimal percentages, exact rationals."""

    def rational(value: Fraction | None) -> str | None:
        return None if value is None else f"{value.numerator}/{value.denominator}"

    return {
        "n_cases": report.n_cases,
        "oa_count": report.oa_count,
        "s_count": report.s_count,
        "u_count": report.u_count,
        "score_threshold": report.threshold,
        "object_accuracy_pct": report.object_accuracy_pct,
        "visor_uncond_pct": report.visor_uncond_pct,
        "visor_cond_pct": report.visor_cond_pct,
        "object_accuracy": rational(report.object_accuracy),
        "visor_uncond": rational(report.visor_uncond),
        "visor_cond": rational(report.visor_cond),
    }


def format_report_table(report: EvalReport) -> str:
    """Small aligned text table of the headline numbers."""
    cond = "n/a" if report.visor_cond_pct is None else f"{report.visor_cond_pct:.2f}"
    rows = [
        ("cases", str(report.n_cases)),
        ("object accuracy %", f"{report.object_accuracy_pct:.2f}"),
        ("visor uncond %", f"{report.visor_uncond_pct:.2f}"),
        ("visor cond %", cond),
    ]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows)

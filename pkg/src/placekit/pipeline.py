"""End-to-end dataset synthesis and simulation-based evaluation.

Synthesis walks: sample category pairs from a co-occurrence matrix, prompt a
caption for each pair, prompt a layout for each caption, validate, derive a
one-object source layout plus the edit instruction that restores the removed
object, and emit JSONL triplets.  Every record is driven by a seed derived
from the run seed and the record index, so any record can be regenerated in
isolation and reruns are byte-identical.

Simulation-based evaluation closes the loop without any image model:
rasterize each triplet's target layout, optionally perturb a seeded subset
of layouts, run the oracle detector, and score with the detection evaluator.
Because the oracle is exact, score movements are attributable entirely to
the perturbations.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from ._version import __version__
from .config import PipelineConfig, config_hash
from .cooccur import (
    CategoryVocab,
    CooccurrenceMatrix,
    PairSample,
    load_default_matrix,
    load_matrix,
    sample_pairs,
)
from .errors import (
    ArityError,
    CaptionParseError,
    InvalidInputError,
    LayoutParseError,
    LayoutValidationError,
    NARelationError,
    RangeError,
    TripletInvariantError,
    YieldBelowMinimumError,
)
from .evaluator import EvalCase, EvalReport, visor
from .geometry import relation_of
from .layout import (
    Layout,
    TrainingTriplet,
    derive_source_layout,
    head_noun,
    make_edit_instruction,
    parse_caption,
    parse_layout_response,
    triplet_to_jsonl_line,
    validate_layout,
)
from .prompting import (
    ChatProvider,
    DeterministicProvider,
    make_provider,
    render_caption_prompt,
    render_layout_prompt,
)
from .scenesim import DropObject, Jitter, SwapPositions, oracle_detect, perturb, rasterize

__all__ = [
    "RecordOutcome",
    "DatasetResult",
    "record_seed",
    "synthesize_record",
    "generate_dataset",
    "write_dataset",
    "vocab_from_triplets",
    "cases_from_triplets",
    "simulate_and_score",
    "write_json_artifact",
]

# Attempt-level reject reasons, in pipeline order.
REJECT_CAPTION_PARSE = "caption_parse"
REJECT_LAYOUT_PARSE = "layout_parse"
REJECT_LAYOUT_INVALID = "layout_invalid"
REJECT_LAYOUT_ARITY = "layout_arity"
REJECT_RELATION_NA = "relation_na"
# Record-level skip reasons.
SKIP_HEAD_NOUN_COLLISION = "head_noun_collision"
SKIP_RETRIES_EXHAUSTED = "retries_exhausted"


def record_seed(run_seed: int, index: int) -> int:
    """Per-record seed: the run seed in the high bits, the index in the low 32."""
    if run_seed < 0 or index < 0:
        raise RangeError("run seed and record index must be non-negative")
    return (run_seed << 32) | index


def _attempt_seed(base_seed: int, attempt: int) -> int:
    digest = hashlib.blake2b(f"{base_seed}:{attempt}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class RecordOutcome:
    """What one record produced: a triplet, or the reasons it could not."""

    index: int
    triplet: TrainingTriplet | None
    attempt_failures: tuple[str, ...]
    skip_reason: str | None


def _apply_sampling(request: Any, config: PipelineConfig) -> Any:
    s = config.sampling
    return dataclasses.replace(
        request,
        temperature=s.temperature,
        top_p=s.top_p,
        max_tokens=s.max_tokens,
        frequency_penalty=s.frequency_penalty,
        presence_penalty=s.presence_penalty,
    )


def synthesize_record(
    index: int,
    pair: PairSample,
    config: PipelineConfig,
    shared_provider: ChatProvider | None = None,
) -> RecordOutcome:
    """Run the caption -> layout -> triplet chain for one sampled pair.

    Up to ``1 + retry_budget`` attempts are made; each attempt uses a fresh
    derived seed so a deterministic provider actually resamples.  Pairs whose
    category names share a head noun are skipped outright: their instruction
    and evaluation labels would be ambiguous.
    """
    seed = record_seed(config.seed, index)
    if head_noun(pair.category_a) == head_noun(pair.category_b):
        return RecordOutcome(index, None, (), SKIP_HEAD_NOUN_COLLISION)

    failures: list[str] = []
    for attempt in range(1 + config.dataset.retry_budget):
        attempt_seed = _attempt_seed(seed, attempt)
        provider: ChatProvider = (
            shared_provider
            if shared_provider is not None
            else DeterministicProvider(seed=attempt_seed, canvas=config.canvas)
        )
        try:
            caption_request = _apply_sampling(
                render_caption_prompt(pair.category_a, pair.category_b, model=config.provider.model),
                config,
            )
            caption_text = provider.complete(caption_request).strip()
            parse_caption(caption_text)
            layout_request = _apply_sampling(
                render_layout_prompt(caption_text, model=config.provider.model), config
            )
            layout_text = provider.complete(layout_request)
            layout = parse_layout_response(layout_text, canvas=config.canvas)
            violations = validate_layout(layout)
            if violations:
                raise LayoutValidationError(violations)
            removed_index = random.Random(seed).randrange(2)
            source = derive_source_layout(layout, removed_index)
            instruction = make_edit_instruction(layout, removed_index)
        except CaptionParseError:
            failures.append(REJECT_CAPTION_PARSE)
        except LayoutValidationError:
            failures.append(REJECT_LAYOUT_INVALID)
        except LayoutParseError:
            failures.append(REJECT_LAYOUT_PARSE)
        except ArityError:
            failures.append(REJECT_LAYOUT_ARITY)
        except NARelationError:
            failures.append(REJECT_RELATION_NA)
        else:
            triplet = TrainingTriplet(
                id=f"triplet-{index:06d}",
                source_layout=source,
                instruction=instruction,
                target_layout=layout,
                generation_seed=seed,
            )
            return RecordOutcome(index, triplet, tuple(failures), None)
    return RecordOutcome(index, None, tuple(failures), SKIP_RETRIES_EXHAUSTED)


@dataclass(frozen=True)
class DatasetResult:
    """A full synthesis run: the triplets plus bookkeeping for the manifest."""

    triplets: tuple[TrainingTriplet, ...]
    requested: int
    rejects: dict[str, int]
    skips: dict[str, int]

    @property
    def yield_fraction(self) -> float:
        return len(self.triplets) / self.requested if self.requested else 0.0


def _resolve_matrix(config: PipelineConfig) -> CooccurrenceMatrix:
    if config.dataset.cooccurrence:
        return load_matrix(config.dataset.cooccurrence)
    return load_default_matrix()


def generate_dataset(
    config: PipelineConfig,
    *,
    size: int | None = None,
    matrix: CooccurrenceMatrix | None = None,
    enforce_min_yield: bool = True,
) -> DatasetResult:
    """Synthesize ``size`` (default: the configured size) training triplets."""
    n = config.dataset.size if size is None else size
    if n < 1:
        raise RangeError(f"dataset size must be >= 1, got {n}")
    source = matrix if matrix is not None else _resolve_matrix(config)
    pairs = sample_pairs(
        source,
        n,
        seed=config.seed,
        min_count=config.dataset.min_count,
        weighting=config.dataset.weighting,
    )

    shared_provider: ChatProvider | None = None
    workers = config.workers
    if config.provider.mode != "deterministic":
        shared_provider = make_provider(config.provider, seed=config.seed, canvas=config.canvas)
        workers = min(workers, config.provider.max_in_flight)

    def run_one(item: tuple[int, PairSample]) -> RecordOutcome:
        index, pair = item
        return synthesize_record(index, pair, config, shared_provider)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, enumerate(pairs)))
    else:
        outcomes = [run_one(item) for item in enumerate(pairs)]
    outcomes.sort(key=lambda o: o.index)

    triplets = tuple(o.triplet for o in outcomes if o.triplet is not None)
    rejects = Counter(reason for o in outcomes for reason in o.attempt_failures)
    skips = Counter(o.skip_reason for o in outcomes if o.skip_reason is not None)
    result = DatasetResult(
        triplets=triplets, requested=n, rejects=dict(rejects), skips=dict(skips)
    )
    if enforce_min_yield and result.yield_fraction < config.dataset.min_yield:
        raise YieldBelowMinimumError(
            f"yield {result.yield_fraction:.4f} fell below the configured minimum "
            f"{config.dataset.min_yield} ({len(triplets)}/{n} records)"
        )
    return result


def write_json_artifact(path: Path, payload: Any) -> None:
    """Write JSON with a stable layout (sorted keys, trailing newline, no timestamps)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def write_dataset(result: DatasetResult, config: PipelineConfig, out_dir: str | Path) -> dict[str, Any]:
    """Write dataset.jsonl, the train/holdout split when it applies, and manifest.json.

    The split files are written only when the written record count equals
    ``train_size + holdout_size`` (first block to train, remainder to
    holdout); otherwise the manifest records ``"split": null``.  Returns the
    manifest dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [triplet_to_jsonl_line(t) for t in result.triplets]
    (out / "dataset.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    split: dict[str, int] | None = None
    train, holdout = config.dataset.train_size, config.dataset.holdout_size
    files = {"dataset": "dataset.jsonl"}
    if train + holdout == len(result.triplets) and train > 0 and holdout > 0:
        (out / "train.jsonl").write_text("\n".join(lines[:train]) + "\n", encoding="utf-8")
        (out / "holdout.jsonl").write_text("\n".join(lines[train:]) + "\n", encoding="utf-8")
        split = {"train": train, "holdout": holdout}
        files["train"] = "train.jsonl"
        files["holdout"] = "holdout.jsonl"

    manifest: dict[str, Any] = {
        "tool_version": __version__,
        "config_hash": config_hash(config),
        "seed": config.seed,
        "provider_mode": config.provider.mode,
        "requested": result.requested,
        "written": len(result.triplets),
        "yield": round(result.yield_fraction, 6),
        "rejects": dict(sorted(result.rejects.items())),
        "skips": dict(sorted(result.skips.items())),
        "split": split,
        "files": files,
    }
    write_json_artifact(out / "manifest.json", manifest)
    return manifest


# --------------------------------------------------------------------------
# Simulation-based evaluation
# --------------------------------------------------------------------------


def vocab_from_triplets(triplets: Sequence[TrainingTriplet]) -> CategoryVocab:
    """Vocabulary over the head nouns of every target caption, ids 1..K sorted."""
    nouns = sorted(
        {head_noun(obj.caption) for t in triplets for obj in t.target_layout.objects}
    )
    if not nouns:
        raise InvalidInputError("cannot build a vocabulary from zero triplets")
    return CategoryVocab({i + 1: noun for i, noun in enumerate(nouns)})


def _case_for(triplet: TrainingTriplet) -> EvalCase:
    instruction = triplet.instruction
    by_caption = {obj.caption: obj for obj in triplet.target_layout.objects}
    placed = by_caption.get(instruction.placed_caption)
    anchor = by_caption.get(instruction.anchor_caption)
    if placed is None or anchor is None:
        raise TripletInvariantError(
            f"{triplet.id}: instruction captions are missing from the target layout"
        )
    geometric = relation_of(placed.bbox, anchor.bbox)
    if geometric != instruction.relation:
        raise TripletInvariantError(
            f"{triplet.id}: instruction says {instruction.relation.word!r} but the target "
            f"geometry says {geometric.word!r}"
        )
    return EvalCase(
        image_id=triplet.id,
        label_a=head_noun(instruction.anchor_caption),
        label_b=head_noun(instruction.placed_caption),
        relation=geometric,
    )


def cases_from_triplets(triplets: Sequence[TrainingTriplet]) -> list[EvalCase]:
    """One evaluation case per triplet: find both head nouns, expect the
    instruction's relation (cross-checked against the target geometry)."""
    return [_case_for(t) for t in triplets]


def simulate_and_score(
    triplets: Sequence[TrainingTriplet],
    *,
    perturbation: str = "none",
    fraction: float = 0.0,
    max_px: int = 8,
    seed: int = 0,
    score_threshold: float = 0.1,
) -> EvalReport:
    """Rasterize targets, perturb a seeded subset, oracle-detect, and score.

    ``perturbation`` is one of ``none``, ``swap``, ``drop``, ``jitter``;
    ``fraction`` of the records (rounded to the nearest count) are perturbed,
    chosen by a seeded sample over record positions.
    """
    if not triplets:
        raise InvalidInputError("cannot evaluate zero triplets")
    if perturbation not in ("none", "swap", "drop", "jitter"):
        raise InvalidInputError(
            f"perturbation must be none|swap|drop|jitter, got {perturbation!r}"
        )
    if not 0.0 <= fraction <= 1.0:
        raise RangeError(f"perturbed fraction must lie in [0, 1], got {fraction}")
    vocab = vocab_from_triplets(triplets)
    cases = cases_from_triplets(triplets)
    n = len(triplets)
    count = int(round(fraction * n)) if perturbation != "none" else 0
    chosen = set(random.Random(seed).sample(range(n), count)) if count else set()

    records = {}
    for i, triplet in enumerate(triplets):
        layout: Layout = triplet.target_layout
        if i in chosen:
            if perturbation == "swap":
                layout = perturb(layout, SwapPositions())
            elif perturbation == "drop":
                layout = perturb(layout, DropObject(index=0))
            else:
                layout = perturb(layout, Jitter(max_px=max_px, seed=record_seed(seed, i)))
        grid = rasterize(layout, vocab)
        records[triplet.id] = oracle_detect(grid, vocab, image_id=triplet.id)
    return visor(cases, records, threshold=score_threshold)

"""Command-line interface.

Exit codes: 0 on success, 1 for domain failures (invalid layouts, failed
checks, provider faults), 2 for malformed artifacts, arguments, or IO
problems.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import sys
from pathlib import Path
from typing import Any

import click
import numpy as np

from ._version import __version__
from .config import PipelineConfig, apply_overrides, config_hash, load_config
from .cooccur import build_matrix
from .diffusion import (
    DDIMSchedule,
    GaussianScoreOracle,
    enhancement_phases,
    run_enhancement,
    softmax_rows,
)
from .energies import (
    AttentionControlObjective,
    BackgroundRetentionObjective,
    finite_difference_gradient,
)
from .errors import PlacekitError, SchemaError
from .evaluator import (
    format_report_table,
    load_cases,
    load_detection_records,
    report_to_json_dict,
    visor,
)
from .layout import triplet_from_json, validate_layout
from .pipeline import generate_dataset, simulate_and_score, write_dataset, write_json_artifact

__all__ = ["main"]


def _mapped_errors(f):
    """Map package exceptions to the documented exit codes."""

    @functools.wraps(f)
    def wrapper(*args: Any, **kwargs: Any):
        try:
            return f(*args, **kwargs)
        except SchemaError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except PlacekitError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
@click.version_option(__version__, prog_name="placekit")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="TOML configuration file.")
@click.option("--seed", type=int, default=None, help="Run seed (overrides config and environment).")
@click.option("--workers", type=int, default=None, help="Worker thread count.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.pass_context
@_mapped_errors
def main(ctx: click.Context, config_path: str | None, seed: int | None, workers: int | None, out: str | None) -> None:
    """Synthesize and evaluate spatial-composition instruction datasets."""
    ctx.obj = apply_overrides(load_config(config_path), seed=seed, workers=workers, out=out)


def _out_dir(config: PipelineConfig) -> Path:
    path = Path(config.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


@main.command("build-cooc")
@click.argument("annotations", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
@_mapped_errors
def build_cooc(config: PipelineConfig, annotations: str) -> None:
    """Count category co-occurrences from a COCO-style instances JSON."""
    try:
        with open(annotations, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{annotations}: invalid JSON: {exc}") from exc
    matrix = build_matrix(data)
    out = _out_dir(config)
    write_json_artifact(out / "cooccurrence.json", matrix.to_json_dict())
    write_json_artifact(
        out / "cooccurrence.manifest.json",
        {
            "tool_version": __version__,
            "config_hash": config_hash(config),
            "source": str(annotations),
            "categories": len(matrix.vocab),
            "pairs": len(matrix.counts),
        },
    )
    click.echo(f"wrote {out / 'cooccurrence.json'} ({len(matrix.vocab)} categories, {len(matrix.counts)} pairs)")


@main.command("gen-dataset")
@click.option("--cooc", type=click.Path(exists=True, dir_okay=False), default=None, help="Co-occurrence artifact (default: packaged matrix).")
@click.option("--size", type=int, default=None, help="Number of triplets to synthesize.")
@click.pass_obj
@_mapped_errors
def gen_dataset(config: PipelineConfig, cooc: str | None, size: int | None) -> None:
    """Synthesize a layout-editing instruction dataset as JSONL."""
    dataset_cfg = config.dataset
    if cooc is not None:
        dataset_cfg = dataclasses.replace(dataset_cfg, cooccurrence=cooc)
    if size is not None:
        dataset_cfg = dataclasses.replace(dataset_cfg, size=size)
    config = dataclasses.replace(config, dataset=dataset_cfg)
    result = generate_dataset(config)
    manifest = write_dataset(result, config, _out_dir(config))
    click.echo(
        f"wrote {manifest['written']}/{manifest['requested']} triplets to "
        f"{Path(config.out) / 'dataset.jsonl'} (yield {100.0 * result.yield_fraction:.2f}%)"
    )
    for reason, count in sorted(result.rejects.items()):
        click.echo(f"  rejected attempts ({reason}): {count}")
    for reason, count in sorted(result.skips.items()):
        click.echo(f"  skipped records ({reason}): {count}")


@main.command("validate")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
@_mapped_errors
def validate(config: PipelineConfig, dataset: str) -> None:
    """Check every record of a triplet JSONL against the layout invariants."""
    problems = 0
    records = 0
    with open(dataset, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{dataset}:{lineno}"
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{where}: invalid JSON: {exc}") from exc
            try:
                triplet = triplet_from_json(payload, canvas=config.canvas)
            except PlacekitError as exc:
                raise SchemaError(f"{where}: malformed record: {exc}") from exc
            records += 1
            for name, layout in (("source", triplet.source_layout), ("target", triplet.target_layout)):
                violations = validate_layout(layout)
                if violations:
                    problems += 1
                    codes = ", ".join(v.name for v in violations)
                    click.echo(f"{where}: {triplet.id} {name} layout: {codes}")
    if records == 0:
        click.echo(f"error: {dataset} holds no records", err=True)
        sys.exit(1)
    if problems:
        click.echo(f"{problems} invalid layouts across {records} records", err=True)
        sys.exit(1)
    click.echo(f"{records} records valid")


def _read_dataset(path: str, config: PipelineConfig):
    from .layout import read_triplets

    with open(path, "r", encoding="utf-8") as fh:
        try:
            return read_triplets(fh, canvas=config.canvas)
        except PlacekitError as exc:
            raise SchemaError(f"{path}: {exc}") from exc


@main.command("sim-eval")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--perturb", type=click.Choice(["none", "swap", "drop", "jitter"]), default="none", help="Perturbation applied to a seeded subset of layouts.")
@click.option("--fraction", type=float, default=0.0, help="Fraction of records to perturb.")
@click.option("--max-px", type=int, default=8, help="Jitter amplitude in pixels.")
@click.pass_obj
@_mapped_errors
def sim_eval(config: PipelineConfig, dataset: str, perturb: str, fraction: float, max_px: int) -> None:
    """Rasterize, perturb, oracle-detect, and score a triplet dataset."""
    triplets = _read_dataset(dataset, config)
    report = simulate_and_score(
        triplets,
        perturbation=perturb,
        fraction=fraction,
        max_px=max_px,
        seed=config.seed,
        score_threshold=config.eval.score_threshold,
    )
    payload = report_to_json_dict(report)
    payload.update({"perturbation": perturb, "fraction": fraction, "max_px": max_px, "seed": config.seed})
    write_json_artifact(_out_dir(config) / "sim_eval_report.json", payload)
    click.echo(format_report_table(report))


@main.command("eval")
@click.argument("cases", type=click.Path(exists=True, dir_okay=False))
@click.argument("detections", type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", type=float, default=None, help="Detection score threshold (default: configured value).")
@click.pass_obj
@_mapped_errors
def eval_command(config: PipelineConfig, cases: str, detections: str, threshold: float | None) -> None:
    """Score detection records against expected spatial relations."""
    case_list = load_cases(cases)
    records = load_detection_records(detections)
    thr = config.eval.score_threshold if threshold is None else threshold
    report = visor(case_list, records, threshold=thr)
    write_json_artifact(_out_dir(config) / "eval_report.json", report_to_json_dict(report))
    click.echo(format_report_table(report))


def _parse_grid(spec: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(part) for part in spec.lower().split("x"))
    except ValueError:
        dims = ()
    if not dims or any(d < 1 for d in dims):
        raise SchemaError(f"grid must look like 8x8x4, got {spec!r}")
    return dims


@main.command("ddim-demo")
@click.option("--steps", type=int, default=100, help="Diffusion step count T.")
@click.option("--alpha", type=float, default=0.7, help="Enhancement strength in [0, 1].")
@click.option("--grid", default="8x8x4", help="Latent grid shape, e.g. 8x8x4.")
@click.pass_obj
@_mapped_errors
def ddim_demo(config: PipelineConfig, steps: int, alpha: float, grid: str) -> None:
    """Round-trip a latent through the three enhancement phases.

    With the analytic Gaussian score model driving both phases, the final
    latent must match the input; the last output line is the bare max-abs
    error so scripts can parse it.
    """
    shape = _parse_grid(grid)
    schedule = DDIMSchedule.linear_beta(steps, config.diffusion.beta_start, config.diffusion.beta_end)
    phases = enhancement_phases(steps, alpha)
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal(shape)
    oracle = GaussianScoreOracle(mu=0.2, sigma2=0.8, schedule=schedule)
    result = run_enhancement(z, oracle, oracle, phases, schedule)
    error = float(np.max(np.abs(result - z)))
    click.echo(f"T={steps} alpha={alpha} t1={phases.t1} t2={phases.t2} grid={'x'.join(map(str, shape))}")
    click.echo(str(error))


@main.command("grad-check")
@click.option("--trials", type=int, default=20, help="Number of random instances per objective.")
@click.option("--h", "step", type=float, default=1e-5, help="Finite-difference step.")
@click.option("--tol", type=float, default=1e-4, help="Maximum allowed relative error.")
@click.pass_obj
@_mapped_errors
def grad_check(config: PipelineConfig, trials: int, step: float, tol: float) -> None:
    """Compare analytic energy gradients against finite differences."""
    if trials < 1:
        raise SchemaError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(config.seed)
    worst_control = 0.0
    worst_retention = 0.0
    for _ in range(trials):
        logits = rng.standard_normal((6, 4))
        mask = (rng.random(6) < 0.5).astype(float)
        tokens = tuple(sorted(rng.choice(4, size=2, replace=False).tolist()))
        control = AttentionControlObjective(mask=mask, token_indices=tokens, config=config.energy)
        worst_control = max(worst_control, _relative_error(control, logits, step))
        reference = softmax_rows(rng.standard_normal((6, 4)))
        retention = BackgroundRetentionObjective(reference_map=reference, mask2=mask, token_indices=tokens)
        worst_retention = max(worst_retention, _relative_error(retention, logits, step))
    click.echo(f"attention-control max relative error: {worst_control:.3e}")
    click.echo(f"background-retention max relative error: {worst_retention:.3e}")
    if max(worst_control, worst_retention) > tol:
        click.echo(f"gradient check failed at tolerance {tol}", err=True)
        sys.exit(1)
    click.echo("gradients agree")


def _relative_error(objective: Any, logits: np.ndarray, step: float) -> float:
    analytic = objective.gradient(logits)
    numeric = finite_difference_gradient(objective, logits, step)
    denom = max(float(np.max(np.abs(numeric))), 1e-30)
    return float(np.max(np.abs(analytic - numeric))) / denom


if __name__ == "__main__":
    main()

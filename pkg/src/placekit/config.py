"""Layered run configuration: defaults < TOML file < environment < CLI flags.

The configuration is a tree of frozen dataclasses, one section per concern
(provider, sampling, dataset, canvas, energy, eval, diffusion) plus the
top-level ``seed``, ``workers``, and ``out`` knobs.  A TOML file supplies
sections of the same names; environment variables ``PLACEKIT_<SECTION>_<KEY>``
(and ``PLACEKIT_SEED`` / ``PLACEKIT_WORKERS`` / ``PLACEKIT_OUT``) override the
file; explicit CLI flags override everything.  Unknown file keys are errors
so typos never silently fall back to defaults.

``config_hash`` fingerprints a fully-resolved configuration so output
manifests can record exactly what produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, get_type_hints

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib  # type: ignore[no-redef]

from .energies import EnergyConfig
from .errors import InvalidInputError, RangeError, SchemaError
from .geometry import CanvasSpec
from .prompting import ProviderConfig

__all__ = [
    "SamplingConfig",
    "DatasetConfig",
    "EvalConfig",
    "DiffusionConfig",
    "PipelineConfig",
    "load_config",
    "apply_overrides",
    "config_hash",
    "config_to_json_dict",
]


@dataclass(frozen=True)
class SamplingConfig:
    """Language-model sampling parameters shared by both prompt kinds."""

    temperature: float = 1.0
    top_p: float = 0.5
    max_tokens: int = 100
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.temperature) and self.temperature >= 0):
            raise RangeError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise RangeError(f"top_p must lie in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise RangeError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass(frozen=True)
class DatasetConfig:
    """Dataset synthesis sizes, sampling policy, and retry behaviour."""

    size: int = 22000
    train_size: int = 20000
    holdout_size: int = 2000
    min_count: int = 10
    weighting: str = "proportional"
    cooccurrence: str = ""  # path to a co-occurrence JSON; empty = packaged default
    retry_budget: int = 3
    min_yield: float = 0.9

    def __post_init__(self) -> None:
        if self.size < 1:
            raise RangeError(f"dataset size must be >= 1, got {self.size}")
        if self.train_size < 0 or self.holdout_size < 0:
            raise RangeError("split sizes must be >= 0")
        if self.min_count < 1:
            raise RangeError(f"min_count must be >= 1, got {self.min_count}")
        if self.weighting not in ("proportional", "uniform"):
            raise InvalidInputError(
                f"weighting must be 'proportional' or 'uniform', got {self.weighting!r}"
            )
        if self.retry_budget < 0:
            raise RangeError(f"retry_budget must be >= 0, got {self.retry_budget}")
        if not 0 <= self.min_yield <= 1:
            raise RangeError(f"min_yield must lie in [0, 1], got {self.min_yield}")


@dataclass(frozen=True)
class EvalConfig:
    """Detection-evaluation parameters."""

    score_threshold: float = 0.1

    def __post_init__(self) -> None:
        if not 0 <= self.score_threshold <= 1:
            raise RangeError(f"score_threshold must lie in [0, 1], got {self.score_threshold}")


@dataclass(frozen=True)
class DiffusionConfig:
    """Sampler geometry: step count, beta range, and enhancement split point."""

    steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    alpha: float = 0.7
    compose_steps: int = 50

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise RangeError(f"steps must be >= 1, got {self.steps}")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise RangeError(
                f"betas must satisfy 0 < beta_start <= beta_end < 1, got ({self.beta_start}, {self.beta_end})"
            )
        if not 0 <= self.alpha <= 1:
            raise RangeError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 1 <= self.compose_steps <= self.steps:
            raise RangeError(
                f"compose_steps must lie in [1, steps={self.steps}], got {self.compose_steps}"
            )


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs, fully resolved."""

    provider: ProviderConfig = field(default_factory=ProviderConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    canvas: CanvasSpec = field(default_factory=CanvasSpec)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    seed: int = 0
    workers: int = 1
    out: str = "out"

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise RangeError(f"workers must be >= 1, got {self.workers}")
        if not self.out:
            raise InvalidInputError("output directory must be non-empty")


_SECTION_TYPES: dict[str, type] = {
    "provider": ProviderConfig,
    "sampling": SamplingConfig,
    "dataset": DatasetConfig,
    "canvas": CanvasSpec,
    "energy": EnergyConfig,
    "eval": EvalConfig,
    "diffusion": DiffusionConfig,
}

_TOP_LEVEL_TYPES: dict[str, type] = {"seed": int, "workers": int, "out": str}


def _field_types(cls: type) -> dict[str, type]:
    hints = get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if not f.name.startswith("_")}


def _coerce_value(raw: Any, target: type, where: str) -> Any:
    """Check (and where safe, widen) a parsed value against a field type."""
    if target is bool:
        if isinstance(raw, bool):
            return raw
        raise InvalidInputError(f"{where}: expected a boolean, got {raw!r}")
    if target is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise InvalidInputError(f"{where}: expected an integer, got {raw!r}")
        return raw
    if target is float:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise InvalidInputError(f"{where}: expected a number, got {raw!r}")
        return float(raw)
    if target is str:
        if not isinstance(raw, str):
            raise InvalidInputError(f"{where}: expected a string, got {raw!r}")
        return raw
    raise InvalidInputError(f"{where}: unsupported field type {target!r}")


def _parse_env_value(raw: str, target: type, where: str) -> Any:
    if target is bool:
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise InvalidInputError(f"{where}: cannot parse {raw!r} as a boolean")
    try:
        if target is int:
            return int(raw, 10)
        if target is float:
            return float(raw)
    except ValueError as exc:
        raise InvalidInputError(f"{where}: cannot parse {raw!r} as {target.__name__}") from exc
    if target is str:
        return raw
    raise InvalidInputError(f"{where}: unsupported field type {target!r}")


def _read_toml(path: Path) -> dict:
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"{path}: invalid TOML: {exc}") from exc
    if not isinstance(data, dict):  # pragma: no cover - tomllib guarantees a dict
        raise SchemaError(f"{path}: configuration must be a table")
    return data


def _file_layers(data: dict, where: str) -> tuple[dict[str, dict[str, Any]], dict[str, Any]]:
    """Split a parsed TOML document into validated section and top-level maps."""
    sections: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise InvalidInputError(f"{where}: [{key}] must be a table")
            known = _field_types(_SECTION_TYPES[key])
            entries: dict[str, Any] = {}
            for name, raw in value.items():
                if name not in known:
                    raise InvalidInputError(f"{where}: unknown key {name!r} in section [{key}]")
                entries[name] = _coerce_value(raw, known[name], f"{where}: [{key}].{name}")
            sections[key] = entries
        elif key in _TOP_LEVEL_TYPES:
            top[key] = _coerce_value(value, _TOP_LEVEL_TYPES[key], f"{where}: {key}")
        else:
            raise InvalidInputError(f"{where}: unknown configuration key {key!r}")
    return sections, top


def _env_layers(env: Mapping[str, str]) -> tuple[dict[str, dict[str, Any]], dict[str, Any]]:
    """Collect PLACEKIT_* overrides that name a known section field or top-level knob.

    Other PLACEKIT_* variables (for example the API-key variable itself) are
    left alone.
    """
    sections: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for name, raw in env.items():
        if not name.startswith("PLACEKIT_"):
            continue
        remainder = name[len("PLACEKIT_") :]
        lowered = remainder.lower()
        if lowered in _TOP_LEVEL_TYPES:
            top[lowered] = _parse_env_value(raw, _TOP_LEVEL_TYPES[lowered], name)
            continue
        section, _, key = lowered.partition("_")
        if section in _SECTION_TYPES and key:
            known = _field_types(_SECTION_TYPES[section])
            if key in known:
                sections.setdefault(section, {})[key] = _parse_env_value(raw, known[key], name)
    return sections, top


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> PipelineConfig:
    """Resolve a configuration from defaults, an optional TOML file, and the environment."""
    environ = os.environ if env is None else env
    if path is not None:
        source = Path(path)
        if not source.is_file():
            raise SchemaError(f"configuration file not found: {source}")
        file_sections, file_top = _file_layers(_read_toml(source), str(source))
    else:
        file_sections, file_top = {}, {}
    env_sections, env_top = _env_layers(environ)

    section_values: dict[str, Any] = {}
    for name, cls in _SECTION_TYPES.items():
        merged = {**file_sections.get(name, {}), **env_sections.get(name, {})}
        section_values[name] = cls(**merged)
    top = {**file_top, **env_top}
    return PipelineConfig(**section_values, **top)


def apply_overrides(
    config: PipelineConfig,
    *,
    seed: int | None = None,
    workers: int | None = None,
    out: str | None = None,
) -> PipelineConfig:
    """Apply CLI-level overrides (the highest-precedence layer)."""
    changes: dict[str, Any] = {}
    if seed is not None:
        changes["seed"] = seed
    if workers is not None:
        changes["workers"] = workers
    if out is not None:
        changes["out"] = out
    return dataclasses.replace(config, **changes) if changes else config


def config_to_json_dict(config: PipelineConfig) -> dict:
    """The full configuration as plain JSON-serializable data."""
    return dataclasses.asdict(config)


def config_hash(config: PipelineConfig) -> str:
    """SHA-256 over the canonical JSON form; stable across runs and platforms."""
    canonical = json.dumps(config_to_json_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

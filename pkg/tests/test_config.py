"""Configuration layering, validation, and fingerprinting."""

from __future__ import annotations

import json

import pytest

from placekit.config import (
    DatasetConfig,
    DiffusionConfig,
    EvalConfig,
    PipelineConfig,
    SamplingConfig,
    apply_overrides,
    config_hash,
    config_to_json_dict,
    load_config,
)
from placekit.errors import InvalidInputError, RangeError, SchemaError


class TestDefaults:
    def test_paper_scale_defaults(self):
        config = PipelineConfig()
        assert config.dataset.size == 22_000
        assert config.dataset.train_size == 20_000
        assert config.dataset.holdout_size == 2_000
        assert config.dataset.min_count == 10
        assert config.dataset.weighting == "proportional"
        assert config.sampling.temperature == 1.0
        assert config.sampling.top_p == 0.5
        assert config.sampling.max_tokens == 100
        assert config.eval.score_threshold == 0.1
        assert config.diffusion.steps == 100
        assert config.diffusion.alpha == 0.7
        assert config.provider.mode == "deterministic"
        assert (config.seed, config.workers, config.out) == (0, 1, "out")

    @pytest.mark.parametrize(
        "factory",
        [
            lambda: SamplingConfig(temperature=-0.5),
            lambda: SamplingConfig(top_p=0.0),
            lambda: SamplingConfig(max_tokens=0),
            lambda: DatasetConfig(size=0),
            lambda: DatasetConfig(train_size=-1),
            lambda: DatasetConfig(min_count=0),
            lambda: DatasetConfig(retry_budget=-1),
            lambda: DatasetConfig(min_yield=1.5),
            lambda: EvalConfig(score_threshold=1.5),
            lambda: DiffusionConfig(steps=0),
            lambda: DiffusionConfig(beta_start=0.5, beta_end=0.1),
            lambda: DiffusionConfig(beta_start=0.0),
            lambda: DiffusionConfig(alpha=2.0),
            lambda: DiffusionConfig(compose_steps=0),
            lambda: DiffusionConfig(compose_steps=101),
            lambda: PipelineConfig(workers=0),
        ],
    )
    def test_range_validation(self, factory):
        with pytest.raises(RangeError):
            factory()

    def test_choice_validation(self):
        with pytest.raises(InvalidInputError):
            DatasetConfig(weighting="exotic")
        with pytest.raises(InvalidInputError):
            PipelineConfig(out="")


class TestFileLayer:
    def _load(self, tmp_path, text, env=None):
        path = tmp_path / "run.toml"
        path.write_text(text, encoding="utf-8")
        return load_config(path, env=env or {})

    def test_file_values_override_defaults(self, tmp_path):
        config = self._load(
            tmp_path,
            """
            seed = 5
            out = "results"

            [dataset]
            size = 100
            min_yield = 0.5

            [sampling]
            temperature = 0.25

            [canvas]
            width = 600

            [provider]
            mode = "external"
            endpoint_url = "http://localhost:9999/v1/chat/completions"
            """,
        )
        assert config.seed == 5
        assert config.out == "results"
        assert config.dataset.size == 100
        assert config.dataset.min_yield == 0.5
        assert config.dataset.train_size == 20_000  # untouched defaults survive
        assert config.sampling.temperature == 0.25
        assert config.canvas.width == 600
        assert config.provider.mode == "external"

    def test_integer_widens_to_float_fields(self, tmp_path):
        config = self._load(tmp_path, "[sampling]\ntop_p = 1\n")
        assert config.sampling.top_p == 1.0
        assert isinstance(config.sampling.top_p, float)

    def test_unknown_section_key(self, tmp_path):
        with pytest.raises(InvalidInputError):
            self._load(tmp_path, "[dataset]\nsizes = 100\n")

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(InvalidInputError):
            self._load(tmp_path, "sede = 1\n")

    def test_section_must_be_a_table(self, tmp_path):
        with pytest.raises(InvalidInputError):
            self._load(tmp_path, "dataset = 5\n")

    @pytest.mark.parametrize(
        "text",
        [
            "[dataset]\nsize = 1.5\n",  # float for int field
            "[dataset]\nsize = true\n",  # bool for int field
            '[dataset]\nsize = "many"\n',  # string for int field
            "[dataset]\nweighting = 3\n",  # number for string field
        ],
    )
    def test_type_mismatches(self, tmp_path, text):
        with pytest.raises(InvalidInputError):
            self._load(tmp_path, text)

    def test_invalid_toml(self, tmp_path):
        with pytest.raises(SchemaError):
            self._load(tmp_path, "[dataset\nsize = 1\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError):
            load_config(tmp_path / "nope.toml", env={})

    def test_no_file_gives_defaults(self):
        assert load_config(None, env={}) == PipelineConfig()


class TestEnvLayer:
    def test_env_overrides_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("seed = 5\n\n[dataset]\nsize = 100\n", encoding="utf-8")
        config = load_config(
            path,
            env={
                "PLACEKIT_SEED": "9",
                "PLACEKIT_DATASET_SIZE": "200",
                "PLACEKIT_EVAL_SCORE_THRESHOLD": "0.25",
                "PLACEKIT_DATASET_TRAIN_SIZE": "150",
            },
        )
        assert config.seed == 9
        assert config.dataset.size == 200
        assert config.dataset.train_size == 150
        assert config.eval.score_threshold == 0.25

    def test_top_level_env_knobs(self):
        config = load_config(
            None,
            env={"PLACEKIT_WORKERS": "4", "PLACEKIT_OUT": "elsewhere"},
        )
        assert config.workers == 4
        assert config.out == "elsewhere"

    def test_unrelated_placekit_variables_are_ignored(self):
        config = load_config(
            None,
            env={
                "PLACEKIT_API_KEY": "secret",
                "PLACEKIT_BOGUS_THING": "1",
                "PLACEKIT_DATASET_NOPE": "1",
            },
        )
        assert config == PipelineConfig()

    def test_non_placekit_variables_are_ignored(self):
        assert load_config(None, env={"DATASET_SIZE": "1"}) == PipelineConfig()

    def test_unparsable_env_value(self):
        with pytest.raises(InvalidInputError):
            load_config(None, env={"PLACEKIT_SEED": "abc"})


class TestOverrides:
    def test_cli_layer_wins(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("seed = 5\n", encoding="utf-8")
        config = load_config(path, env={"PLACEKIT_SEED": "9"})
        assert apply_overrides(config, seed=42).seed == 42

    def test_no_overrides_returns_the_same_config(self):
        config = PipelineConfig()
        assert apply_overrides(config) is config

    def test_partial_overrides(self):
        config = apply_overrides(PipelineConfig(), workers=3, out="runs")
        assert config.workers == 3
        assert config.out == "runs"
        assert config.seed == 0

    def test_overrides_are_validated(self):
        with pytest.raises(RangeError):
            apply_overrides(PipelineConfig(), workers=0)


class TestFingerprint:
    def test_hash_shape_and_stability(self):
        first = config_hash(PipelineConfig())
        second = config_hash(PipelineConfig())
        assert first == second
        assert len(first) == 64
        assert all(c in "0123456789abcdef" for c in first)

    def test_any_field_changes_the_hash(self):
        base = config_hash(PipelineConfig())
        assert config_hash(PipelineConfig(seed=1)) != base
        assert config_hash(apply_overrides(PipelineConfig(), out="other")) != base

    def test_json_dict_is_serializable_and_nested(self):
        payload = config_to_json_dict(PipelineConfig())
        assert payload["dataset"]["size"] == 22_000
        assert payload["provider"]["mode"] == "deterministic"
        json.dumps(payload)  # must not raise

"""Co-occurrence counting, serialization, and weighted pair sampling."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from placekit.cooccur import (
    CategoryVocab,
    CooccurrenceMatrix,
    build_matrix,
    load_default_matrix,
    load_matrix,
    sample_pairs,
)
from placekit.errors import EmptySupportError, SchemaError, UnknownCategoryError


class TestBuildMatrix:
    def test_three_image_fixture_counts(self, coco_instances):
        matrix = build_matrix(coco_instances)
        assert matrix.count("cat", "dog") == 2
        assert matrix.count("cat", "book") == 1
        assert matrix.count("dog", "book") == 1

    def test_counts_are_symmetric(self, coco_instances):
        matrix = build_matrix(coco_instances)
        assert matrix.count("dog", "cat") == matrix.count("cat", "dog")

    def test_diagonal_is_zero(self, coco_instances):
        assert build_matrix(coco_instances).count("cat", "cat") == 0

    def test_duplicate_instances_count_once(self, coco_instances):
        # Image 1 has two cat instances; the cat-dog count must still be 2.
        assert build_matrix(coco_instances).count("cat", "dog") == 2

    def test_missing_array_is_schema_error(self, coco_instances):
        del coco_instances["categories"]
        with pytest.raises(SchemaError):
            build_matrix(coco_instances)

    def test_unknown_category_id(self, coco_instances):
        coco_instances["annotations"].append({"image_id": 1, "category_id": 99})
        with pytest.raises(UnknownCategoryError):
            build_matrix(coco_instances)

    def test_non_dict_input(self):
        with pytest.raises(SchemaError):
            build_matrix([1, 2, 3])


class TestSerialization:
    def test_json_round_trip(self, coco_instances):
        matrix = build_matrix(coco_instances)
        again = CooccurrenceMatrix.from_json_dict(matrix.to_json_dict())
        assert again.to_json_dict() == matrix.to_json_dict()

    def test_artifact_shape(self, coco_instances):
        artifact = build_matrix(coco_instances).to_json_dict()
        assert set(artifact) == {"vocab", "pairs"}
        assert artifact["vocab"] == {"1": "cat", "2": "dog", "3": "book"}
        assert ["cat", "dog", 2] in artifact["pairs"]
        # Pairs are sorted and name-keyed with a < b.
        assert artifact["pairs"] == sorted(artifact["pairs"])

    def test_load_matrix_rejects_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(SchemaError):
            load_matrix(str(path))

    def test_load_matrix_round_trip(self, tmp_path, coco_instances):
        matrix = build_matrix(coco_instances)
        path = tmp_path / "cooc.json"
        path.write_text(json.dumps(matrix.to_json_dict()), encoding="utf-8")
        assert load_matrix(str(path)).count("cat", "dog") == 2

    def test_vocab_rejects_duplicate_names(self):
        with pytest.raises(SchemaError):
            CategoryVocab({1: "cat", 2: "cat"})


WEIGHTED_FIXTURE = CooccurrenceMatrix(
    vocab=CategoryVocab({1: "cat", 2: "dog", 3: "book"}),
    counts={("cat", "dog"): 3, ("book", "cat"): 1},
)


class TestSamplePairs:
    def test_dominant_pair_frequency(self):
        # {cat,dog} holds 3 of 4 total weight; over 40,000 proportional draws
        # its empirical frequency must sit within 0.75 +/- 0.01.
        draws = sample_pairs(WEIGHTED_FIXTURE, 40_000, seed=1234, min_count=1)
        hits = sum(1 for p in draws if {p.category_a, p.category_b} == {"cat", "dog"})
        assert abs(hits / 40_000 - 0.75) < 0.01

    def test_deterministic_for_fixed_seed(self):
        a = sample_pairs(WEIGHTED_FIXTURE, 100, seed=9, min_count=1)
        b = sample_pairs(WEIGHTED_FIXTURE, 100, seed=9, min_count=1)
        assert a == b

    def test_different_seeds_differ(self):
        a = sample_pairs(WEIGHTED_FIXTURE, 100, seed=1, min_count=1)
        b = sample_pairs(WEIGHTED_FIXTURE, 100, seed=2, min_count=1)
        assert a != b

    def test_min_count_floor_excludes_rare_pairs(self):
        draws = sample_pairs(WEIGHTED_FIXTURE, 500, seed=3, min_count=2)
        assert all({p.category_a, p.category_b} == {"cat", "dog"} for p in draws)

    def test_empty_support(self):
        with pytest.raises(EmptySupportError):
            sample_pairs(WEIGHTED_FIXTURE, 10, seed=0, min_count=10)

    def test_uniform_weighting_evens_the_odds(self):
        draws = sample_pairs(WEIGHTED_FIXTURE, 40_000, seed=5, min_count=1, weighting="uniform")
        hits = sum(1 for p in draws if {p.category_a, p.category_b} == {"cat", "dog"})
        assert abs(hits / 40_000 - 0.5) < 0.01

    def test_sampled_pairs_carry_weights_and_distinct_names(self):
        for p in sample_pairs(WEIGHTED_FIXTURE, 200, seed=11, min_count=1):
            assert p.category_a != p.category_b
            assert p.weight >= 1

    @given(st.integers(0, 2**32 - 1), st.integers(1, 50))
    @settings(max_examples=25, deadline=None)
    def test_reproducible_for_any_seed(self, seed, n):
        assert sample_pairs(WEIGHTED_FIXTURE, n, seed=seed, min_count=1) == sample_pairs(
            WEIGHTED_FIXTURE, n, seed=seed, min_count=1
        )


class TestDefaultMatrix:
    def test_every_pair_clears_the_default_floor(self):
        matrix = load_default_matrix()
        assert len(matrix.vocab) == 12
        assert len(matrix.counts) == 66  # all pairs present
        assert min(matrix.counts.values()) >= 10

    def test_default_matrix_supports_default_sampling(self):
        draws = sample_pairs(load_default_matrix(), 50, seed=0, min_count=10)
        assert len(draws) == 50

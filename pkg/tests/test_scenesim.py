"""Rasterization, oracle detection, and layout perturbations."""

from __future__ import annotations

import numpy as np
import pytest

from placekit.cooccur import CategoryVocab
from placekit.errors import (
    ArityError,
    InvalidInputError,
    LayoutValidationError,
    UnknownCategoryError,
)
from placekit.evaluator import EvalCase, visor
from placekit.geometry import BBox, CanvasSpec, SpatialRelation, relation_of
from placekit.layout import Layout, ObjectAnnotation, validate_layout
from placekit.scenesim import (
    DropObject,
    Jitter,
    LabelGrid,
    SwapPositions,
    export_pgm,
    oracle_detect,
    perturb,
    rasterize,
)

VOCAB = CategoryVocab({1: "cat", 2: "dog"})

CAT_BOX = BBox(50, 67, 200, 324)
DOG_BOX = BBox(302, 119, 210, 228)


def _valid_layout() -> Layout:
    """Two disjoint in-bounds boxes on the default canvas (cat left, dog right)."""
    return Layout(
        objects=(
            ObjectAnnotation(caption="a gray cat", bbox=CAT_BOX),
            ObjectAnnotation(caption="an orange dog", bbox=DOG_BOX),
        ),
        background_prompt="A realistic photo of a garden with",
        canvas=CanvasSpec(),
    )


class TestLabelGrid:
    def test_accessors(self):
        grid = LabelGrid(cells=np.zeros((4, 6), dtype=np.int32))
        assert (grid.height, grid.width) == (4, 6)
        assert grid.present_ids() == []

    def test_present_ids_sorted_without_background(self):
        cells = np.zeros((3, 3), dtype=np.int32)
        cells[0, 0] = 5
        cells[2, 2] = 2
        assert LabelGrid(cells=cells).present_ids() == [2, 5]

    @pytest.mark.parametrize(
        "cells",
        [
            np.zeros(4, dtype=np.int32),
            np.zeros((0, 4), dtype=np.int32),
            np.zeros((2, 2), dtype=np.float64),
            np.full((2, 2), -1, dtype=np.int32),
        ],
    )
    def test_validation(self, cells):
        with pytest.raises(InvalidInputError):
            LabelGrid(cells=cells)


class TestRasterize:
    def test_regions_are_filled_with_category_ids(self):
        grid = rasterize(_valid_layout(), VOCAB)
        assert (grid.height, grid.width) == (512, 512)
        assert np.all(grid.cells[67:391, 50:250] == 1)
        assert np.all(grid.cells[119:347, 302:512] == 2)

    def test_empty_region_arithmetic(self):
        grid = rasterize(_valid_layout(), VOCAB)
        expected_empty = 512 * 512 - 200 * 324 - 210 * 228
        assert int(np.count_nonzero(grid.cells == 0)) == expected_empty

    def test_invalid_layout_rejected(self, garden_layout):
        # The checked-in two-box example is genuinely out of bounds and
        # overlapping, so rendering it must refuse.
        with pytest.raises(LayoutValidationError):
            rasterize(garden_layout, VOCAB)

    def test_unknown_head_noun(self):
        layout = Layout(
            objects=(ObjectAnnotation(caption="a tame axolotl", bbox=CAT_BOX),),
            background_prompt="A realistic photo of a garden with",
            canvas=CanvasSpec(),
        )
        with pytest.raises(UnknownCategoryError):
            rasterize(layout, VOCAB)

    def test_single_object_layout(self):
        layout = Layout(
            objects=(ObjectAnnotation(caption="a gray cat", bbox=CAT_BOX),),
            background_prompt="A realistic photo of a garden with",
            canvas=CanvasSpec(),
        )
        grid = rasterize(layout, VOCAB)
        assert grid.present_ids() == [1]

    def test_painting_order_is_irrelevant_for_valid_layouts(self):
        base = _valid_layout()
        flipped = Layout(
            objects=tuple(reversed(base.objects)),
            background_prompt=base.background_prompt,
            canvas=base.canvas,
        )
        assert validate_layout(flipped) == []
        assert np.array_equal(rasterize(base, VOCAB).cells, rasterize(flipped, VOCAB).cells)


class TestOracleDetect:
    def test_round_trip_recovers_boxes_exactly(self):
        record = oracle_detect(rasterize(_valid_layout(), VOCAB), VOCAB, image_id="img-7")
        assert record.image_id == "img-7"
        by_label = {d.label: d for d in record.detections}
        assert set(by_label) == {"cat", "dog"}
        assert by_label["cat"].bbox == CAT_BOX
        assert by_label["dog"].bbox == DOG_BOX
        assert all(d.score == 1.0 for d in record.detections)

    def test_empty_grid_detects_nothing(self):
        record = oracle_detect(LabelGrid(cells=np.zeros((8, 8), dtype=np.int32)), VOCAB)
        assert record.detections == ()
        assert record.image_id == "grid"

    def test_single_cell(self):
        cells = np.zeros((64, 64), dtype=np.int32)
        cells[20, 10] = 2
        record = oracle_detect(LabelGrid(cells=cells), VOCAB)
        assert len(record.detections) == 1
        assert record.detections[0].label == "dog"
        assert record.detections[0].bbox == BBox(10, 20, 1, 1)

    def test_stray_id_errors(self):
        cells = np.zeros((4, 4), dtype=np.int32)
        cells[0, 0] = 9
        with pytest.raises(UnknownCategoryError):
            oracle_detect(LabelGrid(cells=cells), VOCAB)


class TestPerturb:
    def test_swap_flips_the_relation(self):
        layout = _valid_layout()
        assert relation_of(layout.objects[1].bbox, layout.objects[0].bbox) is SpatialRelation.RIGHT
        swapped = perturb(layout, SwapPositions())
        assert relation_of(swapped.objects[1].bbox, swapped.objects[0].bbox) is SpatialRelation.LEFT

    def test_swap_moves_boxes_not_captions(self):
        swapped = perturb(_valid_layout(), SwapPositions())
        assert swapped.objects[0].caption == "a gray cat"
        assert swapped.objects[0].bbox == DOG_BOX
        assert swapped.objects[1].caption == "an orange dog"
        assert swapped.objects[1].bbox == CAT_BOX

    def test_swap_needs_two_objects(self):
        single = Layout(
            objects=(ObjectAnnotation(caption="a gray cat", bbox=CAT_BOX),),
            background_prompt="A realistic photo of a garden with",
            canvas=CanvasSpec(),
        )
        with pytest.raises(ArityError):
            perturb(single, SwapPositions())

    def test_drop_removes_the_indexed_object(self):
        dropped = perturb(_valid_layout(), DropObject(index=0))
        assert len(dropped.objects) == 1
        assert dropped.objects[0].caption == "an orange dog"

    def test_drop_breaks_object_accuracy(self):
        layout = _valid_layout()
        dropped = perturb(layout, DropObject(index=0))
        record = oracle_detect(rasterize(dropped, VOCAB), VOCAB, image_id="img-1")
        case = EvalCase(
            image_id="img-1", label_a="cat", label_b="dog", relation=SpatialRelation.RIGHT
        )
        report = visor([case], {"img-1": record}, threshold=0.1)
        assert report.oa_count == 0

    def test_drop_index_bounds(self):
        with pytest.raises(IndexError):
            perturb(_valid_layout(), DropObject(index=2))

    def test_drop_cannot_empty_the_layout(self):
        single = Layout(
            objects=(ObjectAnnotation(caption="a gray cat", bbox=CAT_BOX),),
            background_prompt="A realistic photo of a garden with",
            canvas=CanvasSpec(),
        )
        with pytest.raises(ArityError):
            perturb(single, DropObject(index=0))

    def test_zero_jitter_is_identity(self):
        layout = _valid_layout()
        assert perturb(layout, Jitter(max_px=0, seed=3)) == layout

    def test_jitter_stays_valid_and_preserves_sizes(self):
        layout = _valid_layout()
        for seed in range(25):
            moved = perturb(layout, Jitter(max_px=50, seed=seed))
            assert validate_layout(moved) == []
            for before, after in zip(layout.objects, moved.objects):
                assert after.caption == before.caption
                assert (after.bbox.w, after.bbox.h) == (before.bbox.w, before.bbox.h)
                assert 0 <= after.bbox.x <= layout.canvas.width - after.bbox.w
                assert 0 <= after.bbox.y <= layout.canvas.height - after.bbox.h

    def test_jitter_is_seed_deterministic(self):
        layout = _valid_layout()
        assert perturb(layout, Jitter(max_px=30, seed=9)) == perturb(
            layout, Jitter(max_px=30, seed=9)
        )
        outcomes = {perturb(layout, Jitter(max_px=30, seed=s)) for s in range(10)}
        assert len(outcomes) > 1

    def test_negative_jitter_rejected(self):
        with pytest.raises(InvalidInputError):
            Jitter(max_px=-1)

    def test_unknown_perturbation(self):
        with pytest.raises(InvalidInputError):
            perturb(_valid_layout(), "shuffle")

    def test_invalid_input_layout_is_caught_by_post_validation(self, garden_layout):
        with pytest.raises(LayoutValidationError):
            perturb(garden_layout, SwapPositions())


class TestMetricHarness:
    def test_fractional_swap_yields_exact_scores(self):
        # Ten clean scenes, three swapped: OA stays 100% while both spatial
        # scores drop to exactly 70%.
        cases, records = [], {}
        for i in range(10):
            layout = _valid_layout()
            if i < 3:
                layout = perturb(layout, SwapPositions())
            image_id = f"img-{i}"
            records[image_id] = oracle_detect(rasterize(layout, VOCAB), VOCAB, image_id=image_id)
            cases.append(
                EvalCase(
                    image_id=image_id,
                    label_a="cat",
                    label_b="dog",
                    relation=SpatialRelation.RIGHT,
                )
            )
        report = visor(cases, records, threshold=0.1)
        assert report.object_accuracy_pct == 100.0
        assert report.visor_uncond_pct == 70.0
        assert report.visor_cond_pct == 70.0


class TestExportPGM:
    def test_header_and_size(self):
        grid = rasterize(_valid_layout(), VOCAB)
        data = export_pgm(grid)
        header = b"P5 512 512 255\n"
        assert data.startswith(header)
        assert len(data) == len(header) + 512 * 512

    def test_shade_mapping(self):
        cells = np.array([[0, 1], [9, 12]], dtype=np.int32)
        data = export_pgm(LabelGrid(cells=cells))
        body = data.split(b"\n", 1)[1]
        # background -> 255; id k -> max(0, 225 - 25k)
        assert list(body) == [255, 200, 0, 0]

"""DDIM steps, guidance, composition, attention, and the Gaussian oracle."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from placekit.diffusion import (
    DDIMSchedule,
    EnhancementSchedule,
    GaussianScoreOracle,
    GuidanceScales,
    attention_map,
    cfg_score,
    compose_latents,
    ddim_inverse_step,
    ddim_step,
    denoising_loss,
    enhancement_phases,
    gaussian_oracle_eps,
    invert_step_fixed_point,
    latent_from_json,
    latent_to_json,
    run_enhancement,
    softmax_rows,
)
from placekit.errors import (
    InvalidInputError,
    MaskOverlapError,
    NonfiniteValueError,
    RangeError,
    ShapeMismatchError,
    StepOutOfRangeError,
)

SCHEDULE = DDIMSchedule.linear_beta(100)


class TestSchedule:
    def test_linear_beta_invariants(self):
        bar = SCHEDULE.alpha_bar
        assert bar.shape == (101,)
        assert bar[0] == 1.0
        assert np.all((bar > 0) & (bar <= 1))
        assert np.all(np.diff(bar) < 0)

    def test_linear_beta_matches_cumulative_product(self):
        betas = np.linspace(1e-4, 2e-2, 100)
        assert np.allclose(SCHEDULE.alpha_bar[1:], np.cumprod(1 - betas), rtol=0, atol=0)

    def test_at_bounds(self):
        assert SCHEDULE.at(0) == 1.0
        assert 0 < SCHEDULE.at(100) < SCHEDULE.at(1) < 1
        for bad in (-1, 101, 1.5, "3"):
            with pytest.raises(StepOutOfRangeError):
                SCHEDULE.at(bad)

    def test_constructor_validation(self):
        with pytest.raises(RangeError):
            DDIMSchedule(T=0, alpha_bar=np.array([1.0]))
        with pytest.raises(ShapeMismatchError):
            DDIMSchedule(T=2, alpha_bar=np.array([1.0, 0.5]))
        with pytest.raises(RangeError):
            DDIMSchedule(T=1, alpha_bar=np.array([0.9, 0.5]))  # bar[0] != 1
        with pytest.raises(RangeError):
            DDIMSchedule(T=2, alpha_bar=np.array([1.0, 0.5, 0.5]))  # not decreasing

    def test_linear_beta_validation(self):
        with pytest.raises(RangeError):
            DDIMSchedule.linear_beta(0)
        with pytest.raises(RangeError):
            DDIMSchedule.linear_beta(10, beta_start=0.0)
        with pytest.raises(RangeError):
            DDIMSchedule.linear_beta(10, beta_start=0.5, beta_end=0.1)


class TestGuidance:
    def test_hand_example(self):
        result = cfg_score([0.0, 0.0], [1.0, 0.0], [1.0, 2.0], GuidanceScales(2.0, 3.0))
        assert np.array_equal(result, [2.0, 6.0])

    def test_zero_scales_return_unconditional_exactly(self):
        rng = np.random.default_rng(0)
        u, i, f = (rng.standard_normal((4, 3)) for _ in range(3))
        assert np.array_equal(cfg_score(u, i, f, GuidanceScales(0.0, 0.0)), u)

    def test_unit_scales_return_full_conditional_exactly(self):
        rng = np.random.default_rng(1)
        u, i, f = (rng.standard_normal((4, 3)) for _ in range(3))
        assert np.array_equal(cfg_score(u, i, f, GuidanceScales(1.0, 1.0)), f)

    def test_unit_scales_exact_even_against_huge_distractors(self):
        # The naive left-to-right accumulation u + w(i-u) + w(f-i) loses the
        # identity at (1, 1) when u dwarfs f: 1e30 + (1-1e30) + (0-1) -> -1.
        result = cfg_score([1e30], [1.0], [0.0], GuidanceScales(1.0, 1.0))
        assert np.array_equal(result, [0.0])

    @given(
        hnp.arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)),
        hnp.arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)),
        hnp.arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)),
    )
    @settings(max_examples=40, deadline=None)
    def test_endpoint_identities_hold_for_any_inputs(self, u, i, f):
        assert np.array_equal(cfg_score(u, i, f, GuidanceScales(0.0, 0.0)), u)
        assert np.array_equal(cfg_score(u, i, f, GuidanceScales(1.0, 1.0)), f)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            cfg_score([0.0], [0.0, 0.0], [0.0], GuidanceScales(1.0, 1.0))

    def test_nonfinite_inputs(self):
        with pytest.raises(NonfiniteValueError):
            cfg_score([np.nan], [0.0], [0.0], GuidanceScales(1.0, 1.0))

    def test_nonfinite_scales(self):
        with pytest.raises(RangeError):
            GuidanceScales(np.inf, 0.0)

    def test_denoising_loss_hand_value(self):
        assert denoising_loss([1.0, 2.0], [0.0, 0.0]) == 5.0
        assert denoising_loss([3.0], [3.0]) == 0.0
        with pytest.raises(ShapeMismatchError):
            denoising_loss([1.0], [1.0, 2.0])


class TestDDIMSteps:
    def test_single_step_round_trip(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((5, 5))
        eps = rng.standard_normal((5, 5))
        for t in (1, 37, 100):
            down = ddim_step(z, t, eps, SCHEDULE)
            back = ddim_inverse_step(down, t, eps, SCHEDULE)
            assert np.max(np.abs(back - z)) <= 1e-12
            up = ddim_inverse_step(z, t, eps, SCHEDULE)
            assert np.max(np.abs(ddim_step(up, t, eps, SCHEDULE) - z)) <= 1e-12

    def test_scalar_latents_are_supported(self):
        out = ddim_step(0.5, 10, 0.3, SCHEDULE)
        assert out.shape == ()

    def test_step_bounds(self):
        z = np.zeros((2, 2))
        for bad in (0, 101, 2.5):
            with pytest.raises(StepOutOfRangeError):
                ddim_step(z, bad, z, SCHEDULE)
            with pytest.raises(StepOutOfRangeError):
                ddim_inverse_step(z, bad, z, SCHEDULE)

    def test_step_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            ddim_step(np.zeros((2,)), 1, np.zeros((3,)), SCHEDULE)

    def test_fixed_point_inversion_is_self_consistent(self):
        # The defining property: denoising the inverted latent with the
        # network's own epsilon at that latent returns the starting point.
        oracle = GaussianScoreOracle(mu=0.2, sigma2=0.8, schedule=SCHEDULE)
        rng = np.random.default_rng(3)
        z_prev = rng.standard_normal((4, 4, 2))
        for t in (1, 50, 100):
            z_t = invert_step_fixed_point(z_prev, t, oracle, SCHEDULE)
            back = ddim_step(z_t, t, oracle.eps(z_t, t), SCHEDULE)
            assert np.max(np.abs(back - z_prev)) <= 1e-12


class TestGaussianOracle:
    def test_zero_prediction_at_the_prior_mean(self):
        # A latent sitting exactly at sqrt(alpha_bar)*mu carries no evidence
        # of noise, so the optimal epsilon estimate vanishes.
        mu, sigma2, t = 0.4, 1.3, 25
        z = np.full((3, 3), np.sqrt(SCHEDULE.at(t)) * mu)
        assert np.array_equal(gaussian_oracle_eps(z, t, mu, sigma2, SCHEDULE), np.zeros((3, 3)))

    def test_zero_at_step_zero(self):
        assert np.array_equal(
            gaussian_oracle_eps([1.0, -2.0], 0, 0.2, 0.8, SCHEDULE), [0.0, 0.0]
        )
        # Degenerate noiseless case hits the explicit zero-denominator branch.
        assert np.array_equal(gaussian_oracle_eps([1.0], 0, 0.2, 0.0, SCHEDULE), [0.0])

    def test_negative_variance_rejected(self):
        with pytest.raises(RangeError):
            gaussian_oracle_eps([0.0], 1, 0.0, -0.1, SCHEDULE)
        with pytest.raises(RangeError):
            GaussianScoreOracle(mu=0.0, sigma2=-1.0, schedule=SCHEDULE)

    def test_matches_self_normalized_importance_sampling(self):
        # Monte-Carlo check of the closed form: draw eps ~ N(0,1), weight by
        # the likelihood of the observed z under z | eps ~ N(m(eps), abar*s2),
        # and compare the weighted mean of eps to the analytic posterior mean.
        mu, sigma2, t, z_star = 0.2, 0.8, 40, 0.9
        abar = SCHEDULE.at(t)
        rng = np.random.default_rng(2024)
        eps = rng.standard_normal(400_000)
        means = np.sqrt(abar) * mu + np.sqrt(1 - abar) * eps
        log_w = -((z_star - means) ** 2) / (2 * abar * sigma2)
        w = np.exp(log_w - log_w.max())
        estimate = float(np.sum(w * eps) / np.sum(w))
        standard_error = float(
            np.sqrt(np.sum(w**2 * (eps - estimate) ** 2)) / np.sum(w)
        )
        analytic = float(gaussian_oracle_eps(np.array(z_star), t, mu, sigma2, SCHEDULE))
        assert standard_error < 5e-3  # enough precision for the check to bite
        assert abs(estimate - analytic) < 5 * standard_error + 1e-12


class TestComposeLatents:
    def test_hand_composition(self):
        base = np.full((2, 2, 2), 5.0)
        part_a = np.ones((2, 2, 2))
        part_b = np.full((2, 2, 2), 2.0)
        mask_a = np.array([[1.0, 0.0], [0.0, 0.0]])
        mask_b = np.array([[0.0, 0.0], [0.0, 1.0]])
        out = compose_latents(base, [(part_a, mask_a), (part_b, mask_b)])
        expected = np.array(
            [[[1.0, 1.0], [5.0, 5.0]], [[5.0, 5.0], [2.0, 2.0]]]
        )
        assert np.array_equal(out, expected)

    def test_no_parts_returns_background(self):
        base = np.arange(8.0).reshape(2, 2, 2)
        assert np.array_equal(compose_latents(base, []), base)

    def test_two_dimensional_mask_broadcasts_across_channels(self):
        rng = np.random.default_rng(4)
        base = rng.standard_normal((3, 3, 4))
        part = rng.standard_normal((3, 3, 4))
        flat_mask = (rng.random((3, 3)) < 0.5).astype(float)
        full_mask = np.repeat(flat_mask[:, :, None], 4, axis=2)
        assert np.array_equal(
            compose_latents(base, [(part, flat_mask)]),
            compose_latents(base, [(part, full_mask)]),
        )

    def test_overlapping_masks_rejected(self):
        base = np.zeros((2, 2, 1))
        mask = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(MaskOverlapError):
            compose_latents(base, [(base, mask), (base, mask)])

    def test_nonbinary_mask_rejected(self):
        base = np.zeros((2, 2, 1))
        with pytest.raises(InvalidInputError):
            compose_latents(base, [(base, np.full((2, 2), 0.5))])

    def test_mask_shape_mismatch(self):
        base = np.zeros((2, 2, 1))
        with pytest.raises(ShapeMismatchError):
            compose_latents(base, [(base, np.zeros((3, 3)))])

    def test_part_shape_mismatch(self):
        base = np.zeros((2, 2, 1))
        with pytest.raises(ShapeMismatchError):
            compose_latents(base, [(np.zeros((2, 3, 1)), np.zeros((2, 2)))])

    def test_partition_property(self):
        # Inside each mask the output equals that part; outside all masks it
        # equals the background, for random disjoint binary masks.
        rng = np.random.default_rng(5)
        for _ in range(10):
            base = rng.standard_normal((4, 4, 2))
            z1 = rng.standard_normal((4, 4, 2))
            z2 = rng.standard_normal((4, 4, 2))
            labels = rng.integers(0, 3, size=(4, 4))
            m1 = (labels == 1).astype(float)
            m2 = (labels == 2).astype(float)
            out = compose_latents(base, [(z1, m1), (z2, m2)])
            assert np.array_equal(out[labels == 1], z1[labels == 1])
            assert np.array_equal(out[labels == 2], z2[labels == 2])
            assert np.array_equal(out[labels == 0], base[labels == 0])


class TestAttention:
    def test_rows_are_stochastic(self):
        rng = np.random.default_rng(6)
        A = attention_map(rng.standard_normal((7, 5)), rng.standard_normal((3, 5)))
        assert A.shape == (7, 3)
        assert np.all(A > 0)
        assert np.max(np.abs(A.sum(axis=1) - 1.0)) <= 1e-12

    def test_softmax_hand_value(self):
        out = softmax_rows(np.array([[0.0, np.log(3.0)]]))
        assert np.max(np.abs(out - np.array([[0.25, 0.75]]))) <= 1e-15

    def test_softmax_is_stable_for_large_logits(self):
        out = softmax_rows(np.array([[1e6, 1e6 + 1.0]]))
        assert np.all(np.isfinite(out))
        assert abs(float(out.sum()) - 1.0) <= 1e-12

    def test_shape_validation(self):
        with pytest.raises(ShapeMismatchError):
            attention_map(np.zeros((2, 3)), np.zeros((2, 4)))
        with pytest.raises(ShapeMismatchError):
            attention_map(np.zeros(3), np.zeros((2, 3)))
        with pytest.raises(ShapeMismatchError):
            softmax_rows(np.zeros((2, 2, 2)))


class TestEnhancement:
    def test_reference_boundaries(self):
        sched = enhancement_phases(100, 0.7)
        assert (sched.t1, sched.t2) == (70, 85)

    @pytest.mark.parametrize(
        "T,alpha,expected",
        [
            (100, 0.0, (0, 50)),
            (100, 1.0, (100, 100)),
            (10, 0.75, (7, 9)),  # 7.5 ties down to 7; 8.75 rounds up to 9
            (100, 0.705, (70, 85)),  # 70.5 ties down; 85.25 rounds down
        ],
    )
    def test_rounding(self, T, alpha, expected):
        sched = enhancement_phases(T, alpha)
        assert (sched.t1, sched.t2) == expected

    def test_validation(self):
        with pytest.raises(RangeError):
            enhancement_phases(0, 0.5)
        with pytest.raises(RangeError):
            enhancement_phases(10, 1.2)
        with pytest.raises(RangeError):
            EnhancementSchedule(T=10, alpha=0.5, t1=5, t2=3)

    def test_alpha_one_is_identity(self):
        oracle = GaussianScoreOracle(mu=0.2, sigma2=0.8, schedule=SCHEDULE)
        rng = np.random.default_rng(7)
        z = rng.standard_normal((4, 4, 2))
        out = run_enhancement(z, oracle, oracle, enhancement_phases(100, 1.0), SCHEDULE)
        assert np.array_equal(out, z)

    def test_identical_networks_round_trip(self):
        # With the enhancer equal to the base network, phases 2 and 3 jointly
        # retrace phase 1's fixed-point inversion, so the output must return
        # to the input at floating-point precision.
        oracle = GaussianScoreOracle(mu=0.2, sigma2=0.8, schedule=SCHEDULE)
        rng = np.random.default_rng(8)
        z = rng.standard_normal((8, 8, 4))
        out = run_enhancement(z, oracle, oracle, enhancement_phases(100, 0.7), SCHEDULE)
        assert np.max(np.abs(out - z)) <= 1e-9

    def test_distinct_enhancer_changes_the_output(self):
        base = GaussianScoreOracle(mu=0.2, sigma2=0.8, schedule=SCHEDULE)
        enhancer = GaussianScoreOracle(mu=-0.6, sigma2=0.3, schedule=SCHEDULE)
        rng = np.random.default_rng(9)
        z = rng.standard_normal((4, 4, 2))
        out = run_enhancement(z, base, enhancer, enhancement_phases(100, 0.7), SCHEDULE)
        assert np.max(np.abs(out - z)) > 1e-3

    def test_schedule_length_mismatch(self):
        oracle = GaussianScoreOracle(mu=0.0, sigma2=1.0, schedule=SCHEDULE)
        with pytest.raises(RangeError):
            run_enhancement(
                np.zeros((2, 2)), oracle, oracle, enhancement_phases(50, 0.7), SCHEDULE
            )


class TestLatentSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(10)
        z = rng.standard_normal((3, 2, 4))
        assert np.array_equal(latent_from_json(latent_to_json(z)), z)

    def test_scalar_round_trip(self):
        z = np.array(1.25)
        again = latent_from_json(latent_to_json(z))
        assert again.shape == ()
        assert float(again) == 1.25

    def test_malformed_record(self):
        with pytest.raises(InvalidInputError):
            latent_from_json({"shape": [2]})
        with pytest.raises(InvalidInputError):
            latent_from_json([1, 2, 3])

    def test_value_count_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            latent_from_json({"shape": [2, 2], "values": [1.0, 2.0, 3.0]})

    def test_nonfinite_values_rejected(self):
        with pytest.raises(NonfiniteValueError):
            latent_to_json([np.inf])
        with pytest.raises(NonfiniteValueError):
            latent_from_json({"shape": [1], "values": [float("nan")]})

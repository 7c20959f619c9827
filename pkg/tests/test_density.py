"""Tests for the per-class diagonal-covariance mixture estimators.

Closed-form oracles used below (computed independently of the library):
- single-Gaussian MLE of {(0,0),(2,0),(0,2),(2,2)}: mean (1,1), divide-by-N
  variances (1,1);
- log standard-normal density at 0: -0.5*ln(2*pi) = -0.9189385332046727;
- 0.5*N(0,1)+0.5*N(4,1) at z=2: both components contribute phi(2), so
  log density = ln(phi(2)) = -2 - 0.5*ln(2*pi) = -2.9189385332046727.
"""

import math

import numpy as np
import pytest

from ada_select.density import (
    LOG_FLOOR,
    VAR_FLOOR,
    GmmModel,
    build_estimators,
    choose_component_count,
    dump_estimators,
    fit_gmm,
    log_density,
    log_density_batch,
    sample_gmm,
)
from ada_select.errors import InvalidInput
from ada_select.pool import Domain, Region

LOG_STD_NORMAL_AT_0 = -0.9189385332046727
LOG_MIX_AT_2 = -2.9189385332046727


def single_gaussian(mean, var):
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    var = np.atleast_1d(np.asarray(var, dtype=np.float64))
    return GmmModel(
        weights=np.array([1.0]), means=mean[None, :], variances=var[None, :]
    )


class TestFitGmmClosedForm:
    def test_single_component_mle(self):
        x = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
        model = fit_gmm(x, 1, seed=0)
        np.testing.assert_allclose(model.means[0], [1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(model.variances[0], [1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(model.weights, [1.0])

    def test_identical_points_hit_variance_floor(self):
        x = np.tile([3.0, -1.0], (6, 1))
        model = fit_gmm(x, 1, seed=0)
        np.testing.assert_allclose(model.means[0], [3.0, -1.0])
        np.testing.assert_allclose(model.variances[0], [VAR_FLOOR, VAR_FLOOR])

    def test_component_count_capped_at_sample_count(self):
        x = np.array([[0.0], [1.0]])
        model = fit_gmm(x, 5, seed=0)
        assert model.component_count == 2

    def test_separated_mixture_mean_recovery(self):
        rng = np.random.default_rng(12)
        x = np.vstack(
            [
                rng.normal(loc=(-5.0, -5.0), size=(500, 2)),
                rng.normal(loc=(5.0, 5.0), size=(500, 2)),
            ]
        )
        model = fit_gmm(x, 2, seed=1)
        recovered = model.means[np.argsort(model.means[:, 0])]
        assert np.linalg.norm(recovered[0] - [-5.0, -5.0]) <= 0.2
        assert np.linalg.norm(recovered[1] - [5.0, 5.0]) <= 0.2
        np.testing.assert_allclose(model.weights.sum(), 1.0, atol=1e-9)

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidInput):
            fit_gmm(np.zeros((0, 2)), 1, seed=0)
        with pytest.raises(InvalidInput):
            fit_gmm(np.zeros((4, 2)), 0, seed=0)


class TestEmBehaviour:
    def test_log_likelihood_trace_non_decreasing(self):
        rng = np.random.default_rng(99)
        for trial in range(50):
            n = int(rng.integers(5, 60))
            d = int(rng.integers(1, 5))
            k = int(rng.integers(1, 5))
            x = rng.standard_normal((n, d)) * rng.uniform(0.5, 2.0)
            model = fit_gmm(x, k, seed=trial)
            trace = np.array(model.ll_trace)
            assert len(trace) >= 1
            assert np.all(np.diff(trace) >= -1e-9), f"trial {trial}: {trace}"

    def test_iteration_budget_respected(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((40, 3))
        model = fit_gmm(x, 3, seed=0)
        assert len(model.ll_trace) <= 100

    def test_bitwise_determinism(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((80, 4))
        a = fit_gmm(x, 3, seed=42)
        b = fit_gmm(x, 3, seed=42)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.variances, b.variances)
        c = fit_gmm(x, 3, seed=43)
        assert not np.array_equal(a.means, c.means)


class TestLogDensity:
    def test_standard_normal_at_zero(self):
        model = single_gaussian([0.0], [1.0])
        np.testing.assert_allclose(
            log_density(model, np.array([0.0])), LOG_STD_NORMAL_AT_0, atol=1e-12
        )

    def test_two_component_symmetric_point(self):
        model = GmmModel(
            weights=np.array([0.5, 0.5]),
            means=np.array([[0.0], [4.0]]),
            variances=np.array([[1.0], [1.0]]),
        )
        np.testing.assert_allclose(
            log_density(model, np.array([2.0])), LOG_MIX_AT_2, atol=1e-12
        )

    def test_far_point_clamps_to_floor(self):
        model = single_gaussian([0.0], [1.0])
        assert log_density(model, np.array([4000.0])) == LOG_FLOOR

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        model = fit_gmm(rng.standard_normal((30, 2)), 2, seed=0)
        z = rng.standard_normal((10, 2))
        batch = log_density_batch(model, z)
        singles = [log_density(model, row) for row in z]
        np.testing.assert_allclose(batch, singles, rtol=1e-12)

    def test_dimension_mismatch(self):
        model = single_gaussian([0.0, 0.0], [1.0, 1.0])
        with pytest.raises(InvalidInput):
            log_density(model, np.array([1.0]))
        with pytest.raises(InvalidInput):
            log_density_batch(model, np.zeros((3, 3)))

    def test_normalizes_to_one_in_1d(self):
        """Trapezoidal quadrature of exp(log_density) over [-50, 50]."""
        rng = np.random.default_rng(8)
        x = np.concatenate([rng.normal(-3, 0.7, 300), rng.normal(2, 1.3, 300)])
        model = fit_gmm(x[:, None], 2, seed=0)
        grid = np.linspace(-50.0, 50.0, 200_001)
        dens = np.exp(log_density_batch(model, grid[:, None]))
        integral = np.trapezoid(dens, grid)
        np.testing.assert_allclose(integral, 1.0, atol=1e-4)

    def test_scale_coherence(self):
        """Scaling inputs by 10 shifts converged log-densities by -d*ln(10)."""
        rng = np.random.default_rng(21)
        d = 2
        x = np.vstack(
            [rng.normal(-6, 0.5, (300, d)), rng.normal(6, 0.5, (300, d))]
        )
        base = fit_gmm(x, 2, seed=5)
        scaled = fit_gmm(10.0 * x, 2, seed=5)
        probe = np.array([[-6.0, -6.0], [6.0, 6.0], [-5.5, -6.2]])
        shift = log_density_batch(scaled, 10.0 * probe) - log_density_batch(base, probe)
        np.testing.assert_allclose(shift, -d * math.log(10.0), atol=1e-3)


class TestChooseComponentCount:
    def test_clamps_and_rounds(self):
        assert choose_component_count(5, 200.0) == 1
        assert choose_component_count(600, 200.0) == 3
        assert choose_component_count(10_000, 200.0) == 10
        assert choose_component_count(300, 200.0) == 2  # 1.5 rounds half-up

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidInput):
            choose_component_count(0, 200.0)
        with pytest.raises(InvalidInput):
            choose_component_count(10, 0.0)


def region_with(feature, region_id=0, majority=0, predicted=None):
    return Region(
        id=region_id,
        sample_ids=[region_id],
        size_px=1,
        majority_true_class=majority,
        feature_z=np.asarray(feature, dtype=np.float64),
        predicted_class=predicted,
    )


class TestBuildEstimators:
    def test_source_groups_by_true_class_target_by_predicted(self):
        regions = [
            region_with([0.0, 0.0], 0, majority=0, predicted=1),
            region_with([1.0, 1.0], 1, majority=0, predicted=1),
            region_with([5.0, 5.0], 2, majority=2, predicted=1),
        ]
        src = build_estimators(regions, Domain.SOURCE, rho=200.0, seed=0)
        assert src.classes() == [0, 2]
        trg = build_estimators(regions, Domain.TARGET, rho=200.0, seed=0)
        assert trg.classes() == [1]

    def test_missing_aggregates_rejected(self):
        bare = Region(id=0, sample_ids=[0], size_px=1)
        with pytest.raises(InvalidInput):
            build_estimators([bare], Domain.SOURCE, rho=200.0, seed=0)
        no_pred = region_with([0.0], 0, predicted=None)
        with pytest.raises(InvalidInput):
            build_estimators([no_pred], Domain.TARGET, rho=200.0, seed=0)

    def test_bitwise_determinism_and_class_independence(self):
        rng = np.random.default_rng(17)
        regions = [
            region_with(rng.standard_normal(3), i, majority=i % 3, predicted=i % 3)
            for i in range(30)
        ]
        a = build_estimators(regions, Domain.TARGET, rho=5.0, seed=9)
        b = build_estimators(regions, Domain.TARGET, rho=5.0, seed=9)
        for c in a.classes():
            assert np.array_equal(a.per_class[c].means, b.per_class[c].means)
            assert np.array_equal(a.per_class[c].variances, b.per_class[c].variances)
        # dropping class 2's regions must not change class 0's fit
        subset = [r for r in regions if r.predicted_class != 2]
        c_est = build_estimators(subset, Domain.TARGET, rho=5.0, seed=9)
        assert np.array_equal(a.per_class[0].means, c_est.per_class[0].means)


class TestSampleGmm:
    def test_empty_draw(self):
        model = single_gaussian([0.0, 0.0], [1.0, 1.0])
        out = sample_gmm(model, 0, seed=1)
        assert out.shape == (0, 2)

    def test_mean_converges(self):
        model = single_gaussian([0.0, 0.0], [1.0, 1.0])
        draws = sample_gmm(model, 100_000, seed=2)
        assert np.all(np.abs(draws.mean(axis=0)) < 0.02)

    def test_component_frequencies(self):
        model = GmmModel(
            weights=np.array([0.9, 0.1]),
            means=np.array([[0.0], [100.0]]),
            variances=np.array([[1.0], [1.0]]),
        )
        draws = sample_gmm(model, 100_000, seed=3)
        freq_hi = float(np.mean(draws[:, 0] > 50.0))
        assert 0.094 <= freq_hi <= 0.106

    def test_deterministic(self):
        model = single_gaussian([1.0], [2.0])
        np.testing.assert_array_equal(
            sample_gmm(model, 50, seed=4), sample_gmm(model, 50, seed=4)
        )


class TestDumpEstimators:
    def test_rows_cover_all_components(self):
        rng = np.random.default_rng(10)
        regions = [
            region_with(rng.standard_normal(2), i, predicted=i % 2) for i in range(8)
        ]
        est = build_estimators(regions, Domain.TARGET, rho=2.0, seed=0)
        text = dump_estimators(est)
        lines = text.strip().splitlines()
        assert lines[0] == "class,component,weight,mean0,mean1,var0,var1"
        expected_rows = sum(m.component_count for m in est.per_class.values())
        assert len(lines) == 1 + expected_rows

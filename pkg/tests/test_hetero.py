"""
Tests for the heteroscedastic Gaussian model (quadnpmle/hetero.py)

This module tests:
- Observation validation and the precision band
- Conditional densities and posterior means
- Fitting on Tchakaloff-compressed (x, tau) measures
- Reduction to the Gaussian location pipeline at constant variance
"""

import math

import numpy as np
import pytest

from quadnpmle.compression import Construction
from quadnpmle.errors import ValidationError
from quadnpmle.estimators import log_likelihood
from quadnpmle.hetero import (
    fit_hetero,
    hetero_density,
    hetero_grid,
    hetero_log_likelihood,
    hetero_metadata,
    hetero_posterior_mean,
    sample_hetero,
    validate_observations,
)
from quadnpmle.models import UniformPrior, make_model
from quadnpmle.solver import GridOptions, MixingDistribution, fit_compressed

DELTA_0 = MixingDistribution.point_mass(0.0)
SYMMETRIC = MixingDistribution(grid=np.array([-1.0, 1.0]), weights=np.array([0.5, 0.5]))


class TestValidation:
    """Tests for validate_observations()."""

    def test_precision_band(self):
        """Variances 0.1 and 10 sit exactly on the T0 = 10 band."""
        obs = validate_observations([0.0, 1.0], [0.1, 10.0])

        np.testing.assert_allclose(obs.tau, [10.0, 0.1])
        assert len(obs) == 2

    @pytest.mark.parametrize(
        "x,s2",
        [
            ([0.0], [0.05]),
            ([0.0], [0.0]),
            ([0.0, 1.0], [1.0]),
            ([math.nan], [1.0]),
            ([], []),
        ],
    )
    def test_rejected(self, x, s2):
        """Out-of-band, non-positive, mismatched or empty input is rejected."""
        with pytest.raises(ValidationError):
            validate_observations(x, s2)

    def test_custom_band(self):
        """A wider T0 admits smaller variances."""
        obs = validate_observations([0.0], [0.05], T0=20.0)
        assert obs.T0 == 20.0

    def test_metadata(self):
        """Reports carry the model tag and band."""
        expected = {"model": "hetero", "T0": 4.0, "tau_band": [0.25, 4.0]}
        assert hetero_metadata(4.0) == expected


class TestDensity:
    """Tests for hetero_density()."""

    def test_standard_normal(self):
        """delta_0 at x = 0 with tau = 1."""
        assert hetero_density(DELTA_0, 0.0, 1.0) == pytest.approx(0.3989423, abs=1e-7)

    def test_precision_scaling(self):
        """tau = 4 doubles the peak."""
        assert hetero_density(DELTA_0, 0.0, 4.0) == pytest.approx(0.7978846, abs=1e-7)

    def test_shifted_point_mass(self):
        """delta_theta gives N(theta, 1/tau)."""
        g = MixingDistribution.point_mass(1.5)
        x, tau = 0.3, 2.0
        expected = math.sqrt(tau / (2 * math.pi)) * math.exp(-tau * (x - 1.5) ** 2 / 2)

        assert hetero_density(g, x, tau) == pytest.approx(expected, rel=1e-12)

    def test_vectorized(self):
        """Arrays broadcast over x and tau."""
        values = hetero_density(SYMMETRIC, np.array([0.0, 1.0]), np.array([1.0, 2.0]))
        assert values.shape == (2,)

    def test_non_positive_tau(self):
        """tau <= 0 is rejected."""
        with pytest.raises(ValidationError):
            hetero_density(DELTA_0, 0.0, 0.0)


class TestPosteriorMean:
    """Tests for hetero_posterior_mean()."""

    def test_point_mass(self):
        """delta_c returns c."""
        g = MixingDistribution.point_mass(-0.4)
        assert hetero_posterior_mean(g, 3.0, 0.5) == pytest.approx(-0.4)

    def test_symmetric(self):
        """A symmetric g maps x = 0 to 0."""
        assert hetero_posterior_mean(SYMMETRIC, 0.0, 2.0) == 0.0

    def test_large_precision(self):
        """At tau = 1e6 the node at x dominates."""
        g = MixingDistribution.from_atoms([-1.0, 0.0, 1.0], np.ones(3))
        assert hetero_posterior_mean(g, 1.0, 1e6) == pytest.approx(1.0, abs=1e-12)


class TestGrid:
    """Tests for hetero_grid()."""

    def test_data_range_is_symmetric(self):
        """The grid spans [-max |x|, max |x|]."""
        grid = hetero_grid([-0.5, 2.0], GridOptions(grid_size=5))
        np.testing.assert_allclose(grid, [-2.0, -1.0, 0.0, 1.0, 2.0])

    def test_radius_caps_grid(self):
        """M bounds the grid."""
        grid = hetero_grid([-0.5, 4.0], GridOptions(grid_size=3), M=1.0)
        np.testing.assert_allclose(grid, [-1.0, 0.0, 1.0])

    def test_explicit_interval(self):
        """Explicit mode needs an interval."""
        with pytest.raises(ValidationError):
            hetero_grid([1.0], GridOptions(mode="explicit"))


class TestFitHetero:
    """Tests for fit_hetero()."""

    def test_single_observation(self):
        """One observation concentrates on the nearest grid node."""
        options = GridOptions(grid_size=5, mode="explicit", interval=(-2.0, 2.0))
        g, report, _ = fit_hetero([1.1], [1.0], J=0, grid_options=options)

        assert report.converged
        assert int(np.argmax(g.weights)) == 3
        assert g.weights[3] > 1 - 1e-6

    def test_report_metadata(self, rng):
        """Reports name the model, band, construction and timings."""
        x = rng.normal(size=300)
        s2 = rng.choice([0.5, 1.0, 2.0], size=300)

        _, report, rule = fit_hetero(x, s2, J=4, grid_options=GridOptions(grid_size=50))

        assert report.extra["model"] == "hetero"
        assert report.extra["tau_band"] == [0.1, 10.0]
        assert report.extra["construction"] == Construction.TCHAKALOFF.value
        assert report.order == 4
        assert report.sample_size == 300
        assert set(report.wall_times) == {"preprocess", "matrix_build", "solve"}
        assert rule.measure.size <= 15

    def test_full_fit_order(self, rng):
        """J = 0 is reported as a full fit."""
        x = rng.normal(size=40)
        _, report, rule = fit_hetero(x, np.ones(40), J=0)

        assert report.order == "full"
        assert rule.construction is Construction.IDENTITY

    def test_homoscedastic_reduction(self, rng):
        """Constant unit variance reproduces the GL fit."""
        x = rng.normal(scale=1.5, size=200)
        options = GridOptions(grid_size=40, mode="explicit", interval=(-3.0, 3.0))

        g_gl, _, _ = fit_compressed(make_model("gl"), x, 0, options, tol=1e-10)
        g_het, _, _ = fit_hetero(
            x, np.ones_like(x), J=0, grid_options=options, tol=1e-10
        )

        per_obs_gl = log_likelihood(make_model("gl"), g_gl, x) / x.size
        per_obs_het = hetero_log_likelihood(g_het, x, np.ones_like(x)) / x.size
        assert per_obs_het == pytest.approx(per_obs_gl, abs=1e-8)

    def test_rejects_out_of_band(self):
        """Fitting validates the precision band."""
        with pytest.raises(ValidationError):
            fit_hetero([0.0, 1.0], [1.0, 50.0])

    def test_rejects_negative_order(self):
        """J < 0 is rejected."""
        with pytest.raises(ValidationError):
            fit_hetero([0.0, 1.0], [1.0, 1.0], J=-1)

    @pytest.mark.slow
    def test_compressed_pipeline(self):
        """n = 1e4, tau in {0.5, 1, 2}, J = 8: at most 45 sample atoms, gap <= 0.5."""
        sample = sample_hetero(UniformPrior(-2, 2), [0.5, 1.0, 2.0], 10_000, seed=3)
        pairs = {(x, 1.0 / s2) for x, s2 in zip(sample.x, sample.s2)}
        options = GridOptions(grid_size=300)

        g_full, _, _ = fit_hetero(sample.x, sample.s2, J=0, grid_options=options)
        g_comp, _, rule = fit_hetero(sample.x, sample.s2, J=8, grid_options=options)

        assert rule.measure.size <= 45
        assert rule.max_residual <= 1e-8
        assert all(tuple(atom) in pairs for atom in rule.measure.atoms)

        tau = 1.0 / sample.s2
        gap = hetero_log_likelihood(g_full, sample.x, tau) - hetero_log_likelihood(
            g_comp, sample.x, tau
        )
        assert abs(gap) <= 0.5, f"likelihood gap {gap:.4f}"


class TestSampling:
    """Tests for sample_hetero()."""

    def test_deterministic(self):
        """Same seed, same draws."""
        a = sample_hetero(UniformPrior(-2, 2), [0.5, 2.0], 100, seed=9)
        b = sample_hetero(UniformPrior(-2, 2), [0.5, 2.0], 100, seed=9)

        np.testing.assert_array_equal(a.x, b.x)
        assert set(np.unique(a.s2)) <= {0.5, 2.0}

    def test_invalid(self):
        """n = 0 and non-positive variances are rejected."""
        with pytest.raises(ValidationError):
            sample_hetero(UniformPrior(-2, 2), [1.0], 0)
        with pytest.raises(ValidationError):
            sample_hetero(UniformPrior(-2, 2), [0.0], 10)

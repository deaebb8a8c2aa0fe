"""
Tests for order prescriptions and approximation diagnostics (quadnpmle/theory.py)

This module tests:
- J_n formulas for the exponential family and heteroscedastic models
- Solver tolerances and the numeric floor
- Support bounds
- Chebyshev coefficients, ellipse radii and Bernstein bounds
"""

import math

import numpy as np
import pytest

from quadnpmle.errors import ValidationError
from quadnpmle.models import kappa_prime, make_model
from quadnpmle.theory import (
    TheoryConstants,
    bernstein_polyellipse_bound,
    bernstein_tail_bound,
    below_numeric_floor,
    cheb_project_function,
    cheb_projection,
    chebyshev_decay_report,
    chebyshev_nodes,
    hetero_delta_n,
    jn_growth_table,
    jn_hetero,
    jn_hetero_exact,
    jn_theorem1,
    kappa_sup,
    rho_ellipse,
    solver_tolerance_for,
    support_bound,
)

GL = make_model("gl")


class TestOrders:
    """Tests for jn_theorem1() and jn_hetero()."""

    def test_theorem1_example(self):
        """|X| = 5, M_n = 2, kappa_sup = 2, Delta = 1e-3, n = 1e4 gives 419."""
        assert jn_theorem1(5, 2, 2, 1e-3, 10_000) == 419

    def test_theorem1_clamps_at_one(self):
        """A huge Delta_n makes the log negative; J stays at 1."""
        assert jn_theorem1(1, 1, 0, 1e12, 10) == 1

    def test_theorem1_precondition(self):
        """|X| M_n < 1 is rejected."""
        with pytest.raises(ValidationError):
            jn_theorem1(0.5, 1, 1, 1e-3, 100)

    def test_theorem1_monotone(self):
        """Nondecreasing in n, |X|, M_n, kappa_sup; nonincreasing in Delta_n."""
        base = jn_theorem1(3, 2, 1, 1e-2, 1000)

        assert jn_theorem1(3, 2, 1, 1e-2, 10_000) >= base
        assert jn_theorem1(4, 2, 1, 1e-2, 1000) >= base
        assert jn_theorem1(3, 3, 1, 1e-2, 1000) >= base
        assert jn_theorem1(3, 2, 5, 1e-2, 1000) >= base
        assert jn_theorem1(3, 2, 1, 1e-1, 1000) <= base

    def test_hetero_example(self):
        """|X| = 4, M = inf, T0 = 2, gamma = 1, n = 1e4 gives 384."""
        assert jn_hetero(4, math.inf, 2, 1, 10_000) == 384

    def test_hetero_radius_caps_quadratic_term(self):
        """M = 1 replaces |X|^2 = 16 by |X| * 1 = 4."""
        log_arg = 2 * math.log(10_000) + 4 * math.log(4)
        assert jn_hetero(4, 1, 2, 1, 10_000) == math.ceil(4 * log_arg)

    def test_hetero_monotone_in_n(self):
        """More data never lowers the order."""
        orders = [jn_hetero(3, 2, 10, 1, n) for n in (10, 100, 1000, 10_000)]
        assert orders == sorted(orders)

    def test_hetero_exact_variant(self):
        """The analyticity radius stays in (0, 1/2] and gives a positive order."""
        delta = hetero_delta_n(4, math.inf, 10)

        assert 0 < delta <= 0.5
        assert jn_hetero_exact(4, math.inf, 10, 1, 10_000) >= 1

    def test_growth_table_ratio_settles(self):
        """J_n / (log n)^2 changes little between the largest n."""
        rows = jn_growth_table([10**k for k in range(3, 10)], c=1.0, M=1.0)
        ratios = [row["ratio"] for row in rows]

        assert all(row["J_n"] >= 1 for row in rows)
        assert abs(ratios[-1] - ratios[-2]) < 0.1 * ratios[-1]


class TestTolerances:
    """Tests for solver_tolerance_for()."""

    @pytest.mark.parametrize(
        "delta,n,expected", [(1e-3, 10_000, 5e-8), (2.0, 1, 1.0)]
    )
    def test_examples(self, delta, n, expected):
        """Delta_n / (2n)."""
        assert solver_tolerance_for(delta, n) == pytest.approx(expected)

    def test_numeric_floor(self, capsys):
        """Delta = 1/n at n = 1e6 is below the floor and warned about."""
        tol = solver_tolerance_for(1e-6, 1_000_000)

        assert tol == pytest.approx(5e-13)
        assert below_numeric_floor(tol)
        assert "numeric floor" in capsys.readouterr().err

    def test_invalid(self):
        """Delta_n must be positive."""
        with pytest.raises(ValidationError):
            solver_tolerance_for(0.0, 10)


class TestSupportBound:
    """Tests for support_bound() and kappa_sup()."""

    def test_gaussian_location(self):
        """GL gives |X|_n exactly."""
        assert support_bound(GL, 3.2) == 3.2
        assert support_bound(GL, 0.0) == 0.0

    def test_poisson(self):
        """Poisson at |X| = 7 gives log 7."""
        assert support_bound(make_model("poisson"), 7) == pytest.approx(
            1.9459101, abs=1e-7
        )

    def test_finite_radius_wins(self):
        """A finite M is returned as is."""
        assert support_bound(make_model("gl", M=1.5), 10.0) == 1.5

    def test_mean_map_at_the_bound(self):
        """kappa'(M_n) = |X|_n = 3 for unbounded Poisson, so M_n = log 3."""
        poisson = make_model("poisson")
        M_n = support_bound(poisson, 3.0)
        assert M_n == pytest.approx(math.log(3.0), abs=1e-9)
        assert kappa_prime(poisson, M_n) == pytest.approx(3.0, abs=1e-8)

    def test_scaled_chi_square_uses_its_radius(self):
        """SC always has a finite M, which is returned whatever the data."""
        sc = make_model("sc", {"nu": 4, "sigma2": 1.0}, M=1.5)
        assert support_bound(sc, 3.0) == 1.5

    def test_kappa_sup(self):
        """sup |theta^2 / 2| over [-2, 2] is 2."""
        assert kappa_sup(GL, 2.0) == pytest.approx(2.0)


class TestChebyshev:
    """Tests for the Chebyshev projection helpers."""

    def test_identity(self):
        """h(x) = x on [-1, 1] has coefficients (0, 1, 0, 0)."""
        cheb = cheb_project_function(lambda x: x, 1.0, 3)
        np.testing.assert_allclose(cheb.coeffs, [0, 1, 0, 0], atol=1e-14)

    def test_square(self):
        """x^2 = (T0 + T2) / 2."""
        cheb = cheb_project_function(lambda x: x**2, 1.0, 2)
        np.testing.assert_allclose(cheb.coeffs, [0.5, 0, 0.5], atol=1e-14)

    def test_reconstruction_at_nodes(self):
        """The full interpolant reproduces the samples."""
        nodes = chebyshev_nodes(3.0, 32)
        samples = np.log(np.cosh(nodes)) + nodes / 5
        cheb = cheb_projection(samples, 3.0)

        np.testing.assert_allclose(cheb.evaluate(nodes), samples, rtol=1e-9, atol=1e-12)

    def test_decay_rate_of_geometric_series(self):
        """Coefficients rho^-k give rho_hat = rho."""
        rho = 1.7
        x = chebyshev_nodes(1.0, 64)
        # sum_k rho^-k T_k(x) in closed form
        r = 1.0 / rho
        samples = (1 - r * x) / (1 - 2 * r * x + r * r)
        cheb = cheb_projection(samples, 1.0, 30)

        assert cheb.rho_hat == pytest.approx(rho, rel=1e-6)

    def test_non_finite_samples(self):
        """NaN samples are rejected."""
        with pytest.raises(ValidationError):
            cheb_projection([0.0, math.nan], 1.0)


class TestBernstein:
    """Tests for ellipse radii and tail bounds."""

    def test_rho_ellipse(self):
        """B M_g = 1 and B M_g = pi/4 examples."""
        a = math.pi / 4
        assert rho_ellipse(1, 1) == pytest.approx(a + math.sqrt(1 + a * a), rel=1e-15)
        assert rho_ellipse(1, 1) == pytest.approx(2.0569588, abs=1e-5)
        assert rho_ellipse(math.pi / 4, 1) == pytest.approx(1 + math.sqrt(2))

    def test_rho_ellipse_limit(self):
        """Large B M_g pushes rho towards 1 from above."""
        rho = rho_ellipse(1e6, 1)
        assert 1 < rho < 1 + 1e-5

    def test_tail_bound(self):
        """(1, 2, 10) gives 2 / 1024; J = 0 gives 2 C_h / (rho - 1)."""
        assert bernstein_tail_bound(1, 2, 10) == pytest.approx(0.001953125)
        assert bernstein_tail_bound(3, 1.5, 0) == pytest.approx(12.0)

    def test_polyellipse_bound(self):
        """(1, (2, 2), J = 4, d = 2) gives 4."""
        assert bernstein_polyellipse_bound(1, (2, 2), 4, 2) == pytest.approx(4.0)

    def test_polyellipse_one_dimension(self):
        """d = 1 has exponent J + 1 and factor 2 rho / (rho - 1)."""
        expected = 2 * 1.0 * (3 / 2) * 3.0 ** -(5 + 1)
        assert bernstein_polyellipse_bound(1.0, [3.0], 5) == pytest.approx(expected)

    def test_polyellipse_vanishes(self):
        """The bound tends to 0 as J grows."""
        assert bernstein_polyellipse_bound(1, (2, 2), 400) < 1e-50

    @pytest.mark.parametrize(
        "args", [(1, [1.0], 3), (0, [2.0], 3), (1, [2.0, 2.0], 3, 1)]
    )
    def test_invalid_polyellipse(self, args):
        """rho <= 1, C_h <= 0 and mismatched d are rejected."""
        with pytest.raises(ValidationError):
            bernstein_polyellipse_bound(*args)

    def test_decay_report(self):
        """log l_g for g uniform on {-2, 2}, B = 5, satisfies the ellipse bound."""
        report = chebyshev_decay_report(GL, [-2.0, 2.0], [0.5, 0.5], B=5.0)

        assert report["bound_holds"]
        assert report["rho_hat"] >= report["rho_ellipse"]
        assert report["rho_ellipse"] == pytest.approx(rho_ellipse(5, 2))
        assert report["C_measured"] <= 1.0
        assert len(report["coefficients"]) == 41

    @pytest.mark.parametrize("M_g,B", [(1, 3), (1, 5), (2, 3), (2, 5)])
    def test_decay_bound_grid(self, M_g, B):
        """The displayed bound holds across radii and intervals."""
        grid = np.array([-M_g, 0.0, M_g])
        report = chebyshev_decay_report(GL, grid, [0.3, 0.4, 0.3], B=float(B))
        assert report["bound_holds"]


class TestConstants:
    """Tests for TheoryConstants."""

    def test_defaults_by_scenario(self):
        """beta0 is 1 for bounded parameter sets and 2 otherwise."""
        sc = make_model("sc", {"nu": 2, "sigma2": 1.0}, M=0.5)

        assert TheoryConstants.for_model(sc).beta0 == 1.0
        assert TheoryConstants.for_model(GL).beta0 == 2.0
        assert TheoryConstants.for_model(GL, C_universal=3.0).C_universal == 3.0

    def test_positive(self):
        """Every constant must be positive."""
        with pytest.raises(ValidationError):
            TheoryConstants(C_T0=0.0)

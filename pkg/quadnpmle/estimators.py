"""
Scoring a fitted mixing distribution.

Marginal densities, log-likelihoods, likelihood gaps, empirical Bayes
posterior means and squared Hellinger distances. Mixture sums are taken in
log space with logsumexp over the support of g, in row chunks.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import quad
from scipy.special import logsumexp, ndtr
from scipy.stats import gamma, norm, poisson

from quadnpmle.compression import DiscreteMeasure
from quadnpmle.constants import (
    CHUNK_SIZE,
    HELLINGER_EPSABS,
    HELLINGER_MAX_ERROR,
    PRIOR_GRID_SIZE,
    TAIL_MASS,
)
from quadnpmle.errors import IntegrationError, ValidationError
from quadnpmle.models import ExpFamilyModel, ModelKind, PointMassPrior, UniformPrior
from quadnpmle.solver import MixingDistribution, likelihood_matrix

MixingLike = Union[MixingDistribution, UniformPrior, PointMassPrior]


def _scalar_or_array(values: NDArray, like: ArrayLike) -> float | NDArray[np.float64]:
    return float(values[0]) if np.ndim(like) == 0 else values


def _support(g: MixingDistribution) -> tuple[NDArray, NDArray]:
    keep = g.weights > 0
    return g.grid[keep], np.log(g.weights[keep])


def log_density(
    model: ExpFamilyModel,
    g: MixingDistribution,
    x: ArrayLike,
    chunk_size: int = CHUNK_SIZE,
) -> float | NDArray[np.float64]:
    """
    log f_g(x) = log sum_k g_k p_theta_k(x), stabilized with logsumexp.

    Raises:
        ValidationError: x outside the model support
    """
    values = model.check_support(np.atleast_1d(np.asarray(x, dtype=float)))
    theta, log_g = _support(g)
    kappa = model.kappa(theta)
    out = np.empty(values.size)
    for start in range(0, values.size, chunk_size):
        block = values[start : start + chunk_size, None]
        out[start : start + chunk_size] = logsumexp(
            block * theta[None, :] - kappa[None, :] + log_g[None, :], axis=1
        )
    out += model.log_base_density(values)
    return _scalar_or_array(out, x)


def mixture_density(
    model: ExpFamilyModel, g: MixingDistribution, x: ArrayLike
) -> float | NDArray[np.float64]:
    """f_g(x) = sum_k g_k p_theta_k(x)"""
    return np.exp(log_density(model, g, x))


def log_likelihood(
    model: ExpFamilyModel,
    g: MixingDistribution,
    measure: DiscreteMeasure | ArrayLike,
) -> float:
    """
    Total log-likelihood n * sum_j w_j log f_g(x_j).

    Measures with integer counts sum every per-observation term with
    math.fsum, so the result equals the per-sample sum exactly. A plain array
    is treated as the sample itself.
    """
    if not isinstance(measure, DiscreteMeasure):
        return math.fsum(np.atleast_1d(log_density(model, g, measure)))

    values = np.atleast_1d(log_density(model, g, measure.atoms))
    if measure.counts is not None:
        return math.fsum(np.repeat(values, measure.counts))
    return measure.sample_size * math.fsum(measure.weights * values)


def likelihood_gap(
    model: ExpFamilyModel,
    g_ref: MixingDistribution,
    g_alt: MixingDistribution,
    measure: DiscreteMeasure | ArrayLike,
) -> float:
    """l_n(g_ref) - l_n(g_alt) on a shared measure (negative when g_alt is better)"""
    return log_likelihood(model, g_ref, measure) - log_likelihood(model, g_alt, measure)


def posterior_mean(
    model: ExpFamilyModel,
    g: MixingDistribution,
    x: ArrayLike,
    chunk_size: int = CHUNK_SIZE,
) -> float | NDArray[np.float64]:
    """
    E[theta | x] under g, using the solver's row-shifted likelihood kernel.

    Always inside [min grid, max grid].
    """
    values = model.check_support(np.atleast_1d(np.asarray(x, dtype=float)))
    keep = g.weights > 0
    theta, weights = g.grid[keep], g.weights[keep]
    out = np.empty(values.size)
    for start in range(0, values.size, chunk_size):
        L = likelihood_matrix(model, values[start : start + chunk_size], theta).values
        out[start : start + chunk_size] = (L @ (theta * weights)) / (L @ weights)
    out = np.clip(out, theta.min(), theta.max())
    return _scalar_or_array(out, x)


def posterior_means(
    model: ExpFamilyModel, g: MixingDistribution, xs: ArrayLike
) -> NDArray[np.float64]:
    """posterior_mean for a batch, always as a 1-D array"""
    return np.atleast_1d(posterior_mean(model, g, np.asarray(xs, dtype=float).reshape(-1)))


def sse_posterior_mean(
    model: ExpFamilyModel, g: MixingDistribution, x: ArrayLike, theta: ArrayLike
) -> float:
    """Sum over pairs of (theta_i - E[theta | x_i])^2"""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    means = posterior_means(model, g, x)
    if means.shape != theta.shape:
        raise ValidationError("x and theta must have the same length")
    return math.fsum((theta - means) ** 2)


@dataclass(frozen=True)
class DensityEstimate:
    """A fitted marginal density f_g, evaluated in chunks of chunk_size rows."""

    model: ExpFamilyModel
    g: MixingDistribution
    chunk_size: int = CHUNK_SIZE

    def logpdf(self, x: ArrayLike) -> float | NDArray[np.float64]:
        return log_density(self.model, self.g, x, self.chunk_size)

    def pdf(self, x: ArrayLike) -> float | NDArray[np.float64]:
        return np.exp(self.logpdf(x))

    def posterior_mean(self, x: ArrayLike) -> float | NDArray[np.float64]:
        return posterior_mean(self.model, self.g, x, self.chunk_size)

    def log_likelihood(self, measure: DiscreteMeasure | ArrayLike) -> float:
        return log_likelihood(self.model, self.g, measure)


# === Hellinger distance ===


def _uniform_gl_pdf(prior: UniformPrior) -> Callable[[NDArray], NDArray]:
    """Closed-form Gaussian-location marginal under a uniform prior"""
    a, b = prior.low, prior.high
    mid = 0.5 * (a + b)

    def pdf(x: NDArray) -> NDArray:
        x = np.asarray(x, dtype=float)
        # Right of the midpoint, reflect so both CDF values stay small.
        left = ndtr(x - a) - ndtr(x - b)
        right = ndtr(b - x) - ndtr(a - x)
        return np.maximum(np.where(x > mid, right, left), 0.0) / (b - a)

    return pdf


def _as_density(
    model: ExpFamilyModel, g: MixingLike
) -> tuple[Callable[[NDArray], NDArray], tuple[float, float]]:
    """pdf callable plus the theta interval it is supported on"""
    if isinstance(g, PointMassPrior):
        g = MixingDistribution.point_mass(g.theta)
    if isinstance(g, UniformPrior):
        if model.kind is ModelKind.GAUSSIAN_LOCATION:
            return _uniform_gl_pdf(g), g.support()
        g = MixingDistribution.from_atoms(*g.discretize(PRIOR_GRID_SIZE))
    if not isinstance(g, MixingDistribution):
        raise ValidationError(f"Unsupported mixing distribution: {type(g).__name__}")

    theta = g.support()

    def pdf(x: NDArray) -> NDArray:
        return np.exp(np.atleast_1d(log_density(model, g, x)))

    return pdf, (float(theta.min()), float(theta.max()))


def _integration_domain(model: ExpFamilyModel, lo: float, hi: float) -> tuple[float, float]:
    """Interval holding all but TAIL_MASS of every component with theta in [lo, hi]"""
    if model.kind is ModelKind.GAUSSIAN_LOCATION:
        z = float(norm.isf(TAIL_MASS / 2))
        return lo - z, hi + z
    if model.kind is ModelKind.SCALED_CHI_SQUARE:
        rate = model.nu / (2.0 * model.sigma2) - hi
        upper = float(gamma.isf(TAIL_MASS, a=0.5 * model.nu, scale=1.0 / rate))
        return 0.0, upper
    return 0.0, float(poisson.isf(TAIL_MASS, mu=math.exp(hi)))


def hellinger_sq(
    model: ExpFamilyModel,
    g_a: MixingLike,
    g_b: MixingLike,
    panels: int = 64,
) -> float:
    """
    Squared Hellinger distance between f_{g_a} and f_{g_b}, in [0, 2].

    Lebesgue families use adaptive Gauss-Kronrod quadrature (scipy.integrate.quad)
    on equal panels over a domain whose tail mass is below 1e-10; the Poisson
    family sums exactly up to a tail quantile.

    Raises:
        IntegrationError: Accumulated integration error above 1e-8
    """
    pdf_a, (lo_a, hi_a) = _as_density(model, g_a)
    pdf_b, (lo_b, hi_b) = _as_density(model, g_b)
    lo, hi = _integration_domain(model, min(lo_a, lo_b), max(hi_a, hi_b))

    if model.kind is ModelKind.POISSON_UNIT:
        x = np.arange(0.0, hi + 1.0)
        return min(2.0, math.fsum((np.sqrt(pdf_a(x)) - np.sqrt(pdf_b(x))) ** 2))

    def integrand(t: float) -> float:
        if t <= 0 and model.kind is ModelKind.SCALED_CHI_SQUARE:
            return 0.0
        point = np.array([t])
        return float((np.sqrt(pdf_a(point)[0]) - np.sqrt(pdf_b(point)[0])) ** 2)

    edges = np.linspace(lo, hi, panels + 1)
    values, errors = [], []
    for left, right in zip(edges[:-1], edges[1:]):
        value, error = quad(
            integrand, left, right, epsabs=HELLINGER_EPSABS, epsrel=0.0, limit=200
        )
        values.append(value)
        errors.append(error)

    estimate, error = math.fsum(values), math.fsum(errors)
    if error > HELLINGER_MAX_ERROR:
        raise IntegrationError(
            f"Hellinger integration error {error:.2e} above {HELLINGER_MAX_ERROR:g}",
            estimate=estimate,
            error=error,
        )
    return min(2.0, max(0.0, estimate))

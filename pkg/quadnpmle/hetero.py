"""
Heteroscedastic Gaussian sequence model.

X_i ~ N(theta_i, s2_i) with known variances and theta_i ~ g. Fits run on the
2-D empirical measure of (x, tau = 1/s2) pairs, compressed by Tchakaloff
subsampling, and share the solver core with the 1-D families.
"""

from __future__ import annotations

import math
import time
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from quadnpmle.compression import QuadratureRule, compress, empirical_measure
from quadnpmle.constants import HETERO_ORDER, HETERO_T0, MOMENT_TOL, SOLVER_TOL
from quadnpmle.errors import ValidationError
from quadnpmle.logs_utils import push_debug, safe_push_log
from quadnpmle.models import Prior
from quadnpmle.solver import (
    FitOptions,
    FitReport,
    GridOptions,
    MixingDistribution,
    shifted_kernel,
    solve_weights,
)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class HeteroObservation:
    """A batch of (x, s2) pairs with precisions tau = 1/s2 inside [1/T0, T0]."""

    x: NDArray[np.float64]
    s2: NDArray[np.float64]
    T0: float = HETERO_T0

    @property
    def tau(self) -> NDArray[np.float64]:
        return 1.0 / self.s2

    def pairs(self) -> NDArray[np.float64]:
        """(n, 2) array of (x, tau)"""
        return np.column_stack([self.x, self.tau])

    def __len__(self) -> int:
        return int(self.x.size)


@dataclass(frozen=True, eq=False)
class HeteroSample:
    """Simulated observations with their latent means."""

    x: NDArray[np.float64]
    s2: NDArray[np.float64]
    theta: NDArray[np.float64]


def tau_band(T0: float = HETERO_T0) -> tuple[float, float]:
    return (1.0 / T0, T0)


def hetero_metadata(T0: float = HETERO_T0) -> dict[str, Any]:
    return {"model": "hetero", "T0": T0, "tau_band": list(tau_band(T0))}


def validate_observations(
    x: ArrayLike, s2: ArrayLike, T0: float = HETERO_T0
) -> HeteroObservation:
    """
    Check a batch of heteroscedastic observations.

    Raises:
        ValidationError: Shape mismatch, non-finite values, s2 <= 0, or a
            precision outside [1/T0, T0]
    """
    if not T0 > 1:
        raise ValidationError(f"T0 must be > 1, got {T0:g}")
    x = np.asarray(x, dtype=float).reshape(-1)
    s2 = np.asarray(s2, dtype=float).reshape(-1)
    if x.size == 0 or x.shape != s2.shape:
        raise ValidationError("x and s2 must be nonempty with equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s2))):
        raise ValidationError("x and s2 must be finite")
    if np.any(s2 <= 0):
        raise ValidationError("variances must be > 0")

    tau = 1.0 / s2
    lo, hi = tau_band(T0)
    slack = 1e-12
    outside = (tau < lo * (1 - slack)) | (tau > hi * (1 + slack))
    if np.any(outside):
        bad = float(tau[np.argmax(outside)])
        raise ValidationError(f"precision {bad:g} is outside [{lo:g}, {hi:g}]")
    return HeteroObservation(x=x, s2=s2, T0=T0)


def _check_tau(tau: ArrayLike) -> NDArray[np.float64]:
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0)):
        raise ValidationError("tau must be > 0")
    return tau


def hetero_log_kernel(
    x: ArrayLike, tau: ArrayLike, grid: ArrayLike
) -> NDArray[np.float64]:
    """log N(x_j; theta_k, 1/tau_j) for every row j and grid point k"""
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    tau = _check_tau(tau).reshape(-1, 1)
    theta = np.asarray(grid, dtype=float).reshape(1, -1)
    return 0.5 * (np.log(tau) - _LOG_2PI) - 0.5 * tau * (x - theta) ** 2


def _log_mixture(
    g: MixingDistribution, x: ArrayLike, tau: ArrayLike
) -> NDArray[np.float64]:
    keep = g.weights > 0
    log_k = hetero_log_kernel(np.atleast_1d(x), np.atleast_1d(tau), g.grid[keep])
    return logsumexp(log_k + np.log(g.weights[keep])[None, :], axis=1)


def hetero_density(
    g: MixingDistribution, x: ArrayLike, tau: ArrayLike
) -> float | NDArray[np.float64]:
    """sqrt(tau/2pi) sum_k g_k exp(-tau (x - theta_k)^2 / 2)"""
    x_arr, tau_arr = np.broadcast_arrays(np.asarray(x, dtype=float), _check_tau(tau))
    values = np.exp(_log_mixture(g, x_arr.reshape(-1), tau_arr.reshape(-1)))
    return float(values[0]) if x_arr.ndim == 0 else values.reshape(x_arr.shape)


def hetero_log_likelihood(
    g: MixingDistribution,
    x: ArrayLike,
    tau: ArrayLike,
    weights: ArrayLike | None = None,
    n: int | None = None,
) -> float:
    """
    Total conditional log-likelihood.

    Without weights, the sum over the given pairs; with weights (a compressed
    measure), n * sum_j w_j log f_g(x_j | tau_j).
    """
    values = _log_mixture(g, x, tau)
    if weights is None:
        return math.fsum(values)
    w = np.asarray(weights, dtype=float)
    total = n if n is not None else 1
    return total * math.fsum(w * values)


def hetero_posterior_mean(
    g: MixingDistribution, x: ArrayLike, tau: ArrayLike
) -> float | NDArray[np.float64]:
    """E[theta | x, tau]; stable for large tau"""
    x_arr, tau_arr = np.broadcast_arrays(np.asarray(x, dtype=float), _check_tau(tau))
    keep = g.weights > 0
    theta = g.grid[keep]
    log_w = np.log(g.weights[keep])[None, :] - 0.5 * tau_arr.reshape(-1, 1) * (
        x_arr.reshape(-1, 1) - theta[None, :]
    ) ** 2
    post = np.exp(log_w - log_w.max(axis=1, keepdims=True))
    means = (post @ theta) / post.sum(axis=1)
    means = np.clip(means, theta.min(), theta.max())
    return float(means[0]) if x_arr.ndim == 0 else means.reshape(x_arr.shape)


def hetero_grid(
    x: ArrayLike, grid_options: GridOptions = GridOptions(), M: float = math.inf
) -> NDArray[np.float64]:
    """Uniform grid on [-(|X|_n ^ M), |X|_n ^ M] unless an explicit interval is set"""
    if grid_options.mode == "explicit":
        if grid_options.interval is None:
            raise ValidationError("explicit grid mode needs an interval")
        lo, hi = grid_options.interval
    else:
        radius = min(float(np.max(np.abs(x))), M)
        lo, hi = -radius, radius
    if lo == hi:
        return np.array([float(lo)])
    if grid_options.grid_size < 2:
        raise ValidationError("grid_size must be >= 2")
    return np.linspace(lo, hi, grid_options.grid_size)


def fit_hetero(
    x: ArrayLike,
    s2: ArrayLike,
    J: int = HETERO_ORDER,
    grid_options: GridOptions = GridOptions(),
    tol: float = SOLVER_TOL,
    T0: float = HETERO_T0,
    M: float = math.inf,
    options: FitOptions | None = None,
    moment_tol: float = MOMENT_TOL,
) -> tuple[MixingDistribution, FitReport, QuadratureRule]:
    """
    NPMLE for heteroscedastic Gaussian data.

    Args:
        x, s2: Observations and their known variances
        J: Total degree for Tchakaloff compression of (x, tau); 0 fits on
            the full empirical measure
        grid_options: Grid size (and interval in explicit mode)
        tol: Certificate target
        T0: Precision band [1/T0, T0]
        M: Optional support radius bounding the grid

    Returns:
        (MixingDistribution, FitReport, QuadratureRule used)
    """
    obs = validate_observations(x, s2, T0)
    if J < 0:
        raise ValidationError("J must be >= 0")
    base = options or FitOptions()
    options = FitOptions(
        tol=tol,
        max_em=base.max_em,
        max_exchange=base.max_exchange,
        exchange_every=base.exchange_every,
        algorithm=base.algorithm,
    )

    start = time.perf_counter()
    rule = compress(empirical_measure(obs.pairs()), J, moment_tol=moment_tol)
    preprocess = time.perf_counter() - start

    grid = hetero_grid(obs.x, grid_options, M)
    start = time.perf_counter()
    atoms = rule.measure.atoms
    L = shifted_kernel(hetero_log_kernel(atoms[:, 0], atoms[:, 1], grid))
    matrix_time = time.perf_counter() - start

    start = time.perf_counter()
    g, report = solve_weights(L, rule.measure.weights, options)
    solve_time = time.perf_counter() - start

    report.sample_size = len(obs)
    report.order = J if J > 0 else "full"
    report.wall_times = {
        "preprocess": preprocess,
        "matrix_build": matrix_time,
        "solve": solve_time,
    }
    report.extra.update(hetero_metadata(T0))
    report.extra["construction"] = rule.construction.value
    report.extra["max_moment_residual"] = rule.max_residual
    if not report.converged:
        safe_push_log(f"⚠️ Hetero fit did not converge: {report.message}")
    push_debug(f"Hetero fit J={report.order}: {rule.measure.size} atoms")
    return MixingDistribution(grid=grid, weights=g), report, rule


def sample_hetero(
    g0: Prior,
    variances: Sequence[float],
    n: int,
    seed: int | None = None,
) -> HeteroSample:
    """theta_i ~ g0, s2_i uniform over variances, X_i ~ N(theta_i, s2_i)"""
    if int(n) < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    choices = np.asarray(variances, dtype=float)
    if choices.size == 0 or np.any(~(choices > 0)):
        raise ValidationError("variances must be a nonempty list of positive values")
    rng = np.random.default_rng(seed)
    theta = np.asarray(g0.sample_theta(rng, int(n)), dtype=float)
    s2 = rng.choice(choices, size=int(n))
    x = rng.normal(loc=theta, scale=np.sqrt(s2))
    return HeteroSample(x=x, s2=s2, theta=theta)

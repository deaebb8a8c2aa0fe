"""
Grid NPMLE solver for weighted discrete data measures.

The same code path fits the full NPMLE (weights = empirical measure) and the
compressed one (weights = quadrature rule). The objective is

    Phi(g) = sum_j w_j log(sum_k g_k L_jk)

over the simplex, where L is the row-shifted likelihood matrix. EM does the
bulk of the work; every exchange_every EM steps a constrained-Newton
multiple-exchange step with exact line search moves mass to new atoms.
Stopping uses the dual-gap certificate log(max_k d_k), d = L^T (w / f).
"""

from __future__ import annotations

import math
import time
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq, nnls

from quadnpmle.compression import DiscreteMeasure, QuadratureRule, compress
from quadnpmle.constants import (
    EXCHANGE_EVERY,
    GRID_SIZE,
    MAX_EM,
    MAX_EXCHANGE,
    MAX_ORDER,
    MEAN_FLOOR,
    MOMENT_TOL,
    MONOTONE_SLACK,
    SOLVER_TOL,
    TOLERANCE_FLOOR,
)
from quadnpmle.errors import NumericalError, ValidationError
from quadnpmle.logs_utils import push_debug, safe_push_log
from quadnpmle.models import ExpFamilyModel

ALGORITHMS = ("em-exchange", "em")


# === Mixing distributions ===


@dataclass(frozen=True, eq=False)
class MixingDistribution:
    """Simplex weights over a sorted grid of mixing parameters."""

    grid: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.grid.ndim != 1 or self.grid.shape != self.weights.shape:
            raise ValidationError("grid and weights must be 1-D with equal length")
        if self.grid.size == 0:
            raise ValidationError("mixing distribution needs at least one atom")
        if np.any(np.diff(self.grid) <= 0):
            raise ValidationError("grid must be strictly increasing")
        if np.any(self.weights < 0) or abs(math.fsum(self.weights) - 1.0) > 1e-10:
            raise ValidationError("mixing weights must be a probability vector")

    @classmethod
    def point_mass(cls, theta: float) -> MixingDistribution:
        return cls(grid=np.array([float(theta)]), weights=np.array([1.0]))

    @classmethod
    def from_atoms(cls, grid: ArrayLike, weights: ArrayLike) -> MixingDistribution:
        """Sort atoms, merge duplicates and normalize weights"""
        grid = np.asarray(grid, dtype=float)
        weights = np.asarray(weights, dtype=float)
        unique, inverse = np.unique(grid, return_inverse=True)
        merged = np.zeros(unique.size)
        np.add.at(merged, inverse, weights)
        return cls(grid=unique, weights=merged / math.fsum(merged))

    def support(self, threshold: float = 0.0) -> NDArray[np.float64]:
        return self.grid[self.weights > threshold]

    def mean(self) -> float:
        return math.fsum(self.grid * self.weights)

    def sample_theta(self, rng: np.random.Generator, n: int) -> NDArray[np.float64]:
        return rng.choice(self.grid, size=n, p=self.weights)

    def to_dict(self) -> dict[str, Any]:
        return {"grid": self.grid, "weights": self.weights}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MixingDistribution:
        weights = np.asarray(data["weights"], dtype=float)
        return cls(grid=np.asarray(data["grid"], dtype=float), weights=weights)


# === Options and reports ===


@dataclass(frozen=True)
class FitOptions:
    """Solver controls; tol is the certificate target per unit mass."""

    tol: float = SOLVER_TOL
    max_em: int = MAX_EM
    max_exchange: int = MAX_EXCHANGE
    exchange_every: int = EXCHANGE_EVERY
    algorithm: str = "em-exchange"

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValidationError("tol must be > 0")
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"algorithm must be one of {ALGORITHMS}")
        if self.max_em < 1 or self.exchange_every < 1 or self.max_exchange < 0:
            raise ValidationError("iteration caps must be positive")


@dataclass(frozen=True)
class GridOptions:
    """How to lay out the theta grid."""

    grid_size: int = GRID_SIZE
    mode: str = "data_range"
    interval: tuple[float, float] | None = None


@dataclass
class FitReport:
    """Outcome of one fit; objective and certificate are per unit mass."""

    objective: float
    certificate_gap: float
    converged: bool
    message: str
    em_iterations: int
    exchange_iterations: int
    algorithm: str
    tolerance: float
    order: int | str = "full"
    n_atoms: int = 0
    sample_size: int = 0
    grid_size: int = 0
    wall_times: dict[str, float] = field(default_factory=dict)
    objective_trace: list[float] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self, include_trace: bool = False) -> dict[str, Any]:
        data = asdict(self)
        if not include_trace:
            data.pop("objective_trace")
        return data


# === Grids ===


def _uniform(lo: float, hi: float, grid_size: int) -> NDArray[np.float64]:
    if lo == hi:
        return np.array([lo])
    return np.linspace(lo, hi, grid_size)


def _clip_to_domain(model: ExpFamilyModel, lo: float, hi: float) -> tuple[float, float]:
    """Intersect [lo, hi] with [-M, M] and the canonical domain"""
    _, upper = model.canonical_domain
    lo, hi = max(lo, -model.M), min(hi, model.M)
    if math.isfinite(upper) and hi >= upper:
        hi = math.nextafter(upper, -math.inf)
    if lo > hi:
        raise ValidationError(
            f"grid interval is empty after intersecting with Theta_0 for {model.label}"
        )
    return lo, hi


def _mean_to_theta(model: ExpFamilyModel, x: float) -> float:
    """theta whose mean is x, with means outside the range of kappa' floored"""
    lo_y, _ = model.kappa_prime_range
    return model.kappa_prime_inverse(max(x, lo_y + MEAN_FLOOR) if lo_y > -math.inf else x)


def build_grid(
    model: ExpFamilyModel,
    data_or_range: ArrayLike,
    grid_size: int = GRID_SIZE,
    mode: str = "data_range",
) -> NDArray[np.float64]:
    """
    Uniform theta grid.

    Args:
        model: Exponential family (its M clips the grid)
        data_or_range: Observations (or any array whose min/max give the
            range) for data_range and support_bound; the theta interval itself
            for explicit
        grid_size: Number of points (>= 2)
        mode: data_range maps [min X, max X] to the canonical scale through
            the inverse of kappa'; support_bound uses [-M_n, M_n]; explicit
            takes the interval as given

    Returns:
        Sorted grid (a single point when the interval is degenerate)
    """
    if grid_size < 2:
        raise ValidationError("grid_size must be >= 2")
    values = np.asarray(data_or_range, dtype=float)
    if values.size == 0:
        raise ValidationError("build_grid needs data or an interval")
    x_lo, x_hi = float(values.min()), float(values.max())

    if mode == "explicit":
        lo, hi = x_lo, x_hi
        model.check_theta([lo, hi])
    elif mode == "data_range":
        lo, hi = _mean_to_theta(model, x_lo), _mean_to_theta(model, x_hi)
    elif mode == "support_bound":
        from quadnpmle.theory import support_bound

        M_n = support_bound(model, max(abs(x_lo), abs(x_hi)))
        lo, hi = -M_n, M_n
    else:
        raise ValidationError(f"Unknown grid mode: {mode!r}")

    lo, hi = _clip_to_domain(model, lo, hi)
    return _uniform(lo, hi, grid_size)


def grid_for(
    model: ExpFamilyModel, data: ArrayLike, options: GridOptions
) -> NDArray[np.float64]:
    """build_grid driven by GridOptions"""
    if options.mode == "explicit":
        if options.interval is None:
            raise ValidationError("explicit grid mode needs an interval")
        return build_grid(model, options.interval, options.grid_size, "explicit")
    return build_grid(model, data, options.grid_size, options.mode)


# === Likelihood matrix ===


@dataclass(frozen=True, eq=False)
class LikelihoodMatrix:
    """L_jk = exp(log kernel_jk - s_j), with row shifts s_j recorded."""

    values: NDArray[np.float64]
    shifts: NDArray[np.float64]


def shifted_kernel(log_kernel: NDArray[np.float64], shift: bool = True) -> LikelihoodMatrix:
    """Exponentiate a log-kernel matrix after subtracting each row's maximum"""
    if not np.all(np.isfinite(log_kernel)):
        raise NumericalError("non-finite exponent in likelihood matrix")
    shifts = log_kernel.max(axis=1) if shift else np.zeros(log_kernel.shape[0])
    return LikelihoodMatrix(values=np.exp(log_kernel - shifts[:, None]), shifts=shifts)


def likelihood_matrix(
    model: ExpFamilyModel,
    measure: DiscreteMeasure | ArrayLike,
    grid: ArrayLike,
    shift: bool = True,
) -> LikelihoodMatrix:
    """
    Row-shifted likelihood-ratio matrix.

    Rows are the atoms of the measure, columns the grid. With shift the
    largest entry of every row is exactly 1.
    """
    atoms = measure.atoms if isinstance(measure, DiscreteMeasure) else measure
    x = np.asarray(atoms, dtype=float).reshape(-1, 1)
    theta = model.check_theta(np.asarray(grid, dtype=float)).reshape(1, -1)
    return shifted_kernel(theta * x - model.kappa(theta), shift=shift)


# === Core iteration ===


def _objective(w: NDArray, f: NDArray, shifts: NDArray) -> float:
    return math.fsum(w * (np.log(f) + shifts))


def dual_gap_certificate(
    L: LikelihoodMatrix | NDArray[np.float64], weights: ArrayLike, g: ArrayLike
) -> float:
    """
    Upper bound log(max_k d_k) on sup Phi(g') - Phi(g) over grid-supported g'.

    d_k = sum_j w_j L_jk / f_j with f = L g. Clamped at 0.

    Raises:
        NumericalError: Some f_j = 0 (degenerate g)
    """
    values = L.values if isinstance(L, LikelihoodMatrix) else np.asarray(L, dtype=float)
    w = np.asarray(weights, dtype=float)
    f = values @ np.asarray(g, dtype=float)
    if np.any(f <= 0):
        raise NumericalError("mixture likelihood vanishes at some atom")
    d = values.T @ (w / f)
    return max(0.0, math.log(float(d.max())))


def _line_search(w: NDArray, f: NDArray, delta: NDArray) -> float:
    """argmax over t in [0, 1] of sum_j w_j log(f_j + t delta_j) (concave)"""

    def slope(t: float) -> float:
        return float(np.sum(w * delta / (f + t * delta)))

    if slope(1.0) >= 0:
        return 1.0
    if slope(0.0) <= 0:
        return 0.0
    return brentq(slope, 0.0, 1.0, xtol=1e-14)


def _exchange_step(
    L: NDArray, w: NDArray, g: NDArray, f: NDArray, d: NDArray
) -> NDArray | None:
    """
    Constrained-Newton multiple exchange.

    Candidates are the current support plus local maxima of d. The quadratic
    model of Phi on the candidate face is minimized by NNLS with a heavily
    weighted sum-to-one row, then an exact line search moves toward it.
    """
    padded = np.concatenate(([-np.inf], d, [-np.inf]))
    peaks = np.flatnonzero((d >= padded[:-2]) & (d >= padded[2:]))
    support = np.flatnonzero(g > 1e-12 * g.max())
    cand = np.union1d(np.union1d(support, peaks), [int(np.argmax(d))])

    sw = np.sqrt(w)
    A = sw[:, None] * L[:, cand] / f[:, None]
    eta = 1e3 * max(1.0, float(np.abs(A).max()))
    A_aug = np.vstack([A, eta * np.ones((1, cand.size))])
    b_aug = np.concatenate([2.0 * sw, [eta]])
    try:
        h, _ = nnls(A_aug, b_aug, maxiter=50 * cand.size)
    except RuntimeError:
        return None
    total = h.sum()
    if not total > 0:
        return None

    proposal = np.zeros_like(g)
    proposal[cand] = h / total
    delta = L @ (proposal - g)
    t = _line_search(w, f, delta)
    if t <= 0:
        return None
    return (1.0 - t) * g + t * proposal


def solve_weights(
    L: LikelihoodMatrix,
    weights: NDArray[np.float64],
    options: FitOptions = FitOptions(),
    g_init: NDArray[np.float64] | None = None,
) -> tuple[NDArray[np.float64], FitReport]:
    """
    Maximize Phi over the simplex for a prepared likelihood matrix.

    Shared by the 1-D and heteroscedastic pipelines. Never raises on
    non-convergence: the best iterate comes back with converged=False.
    """
    values, shifts = L.values, L.shifts
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValidationError("data weights must be > 0")
    m = values.shape[1]
    tol = options.tol
    if tol < TOLERANCE_FLOOR:
        safe_push_log(f"⚠️ Tolerance {tol:.1e} is below the numeric floor {TOLERANCE_FLOOR:g}")

    g = np.full(m, 1.0 / m) if g_init is None else np.asarray(g_init, dtype=float).copy()
    f = values @ g
    objective = _objective(w, f, shifts)
    trace = [objective]
    em_steps = exchange_steps = 0
    gap = math.inf
    message = ""

    while True:
        d = values.T @ (w / f)
        gap = max(0.0, math.log(float(d.max())))
        if gap <= tol:
            message = f"certificate {gap:.3e} <= tol {tol:.1e}"
            break
        if em_steps >= options.max_em:
            message = f"EM cap {options.max_em} reached with certificate {gap:.3e}"
            break

        if (
            options.algorithm == "em-exchange"
            and em_steps > 0
            and em_steps % options.exchange_every == 0
            and exchange_steps < options.max_exchange
        ):
            exchange_steps += 1
            g_new = _exchange_step(values, w, g, f, d)
            if g_new is not None:
                f_new = values @ g_new
                obj_new = _objective(w, f_new, shifts)
                if obj_new >= objective:
                    g, f, objective = g_new, f_new, obj_new
                    d = values.T @ (w / f)

        g = g * d
        g /= g.sum()
        f = values @ g
        new_objective = _objective(w, f, shifts)
        if new_objective < objective - MONOTONE_SLACK:
            push_debug(f"EM step {em_steps} decreased objective by {objective - new_objective:.3e}")
        objective = new_objective
        trace.append(objective)
        em_steps += 1

    g = np.where(g > 0, g, 0.0)
    report = FitReport(
        objective=objective,
        certificate_gap=gap,
        converged=gap <= tol,
        message=message,
        em_iterations=em_steps,
        exchange_iterations=exchange_steps,
        algorithm=options.algorithm,
        tolerance=tol,
        n_atoms=int(values.shape[0]),
        grid_size=m,
        objective_trace=trace,
    )
    return g / g.sum(), report


def fit_npmle(
    model: ExpFamilyModel,
    measure: DiscreteMeasure,
    grid: ArrayLike,
    options: FitOptions = FitOptions(),
) -> tuple[MixingDistribution, FitReport]:
    """
    Grid NPMLE for a weighted data measure.

    Args:
        model: Exponential family
        measure: Empirical measure or quadrature rule measure
        grid: Sorted theta grid inside Theta
        options: Tolerance, caps and algorithm

    Returns:
        (MixingDistribution on the grid, FitReport)
    """
    grid = np.asarray(grid, dtype=float)
    model.check_support(measure.atoms)

    start = time.perf_counter()
    L = likelihood_matrix(model, measure, grid)
    matrix_time = time.perf_counter() - start

    start = time.perf_counter()
    g, report = solve_weights(L, measure.weights, options)
    solve_time = time.perf_counter() - start

    report.sample_size = measure.sample_size
    report.wall_times = {"matrix_build": matrix_time, "solve": solve_time}
    if not report.converged:
        safe_push_log(f"⚠️ Fit did not converge: {report.message}")
    return MixingDistribution(grid=grid, weights=g), report


def fit_compressed(
    model: ExpFamilyModel,
    data: ArrayLike,
    J: int,
    grid_options: GridOptions = GridOptions(),
    tol: float = SOLVER_TOL,
    delta_n: float | None = None,
    options: FitOptions | None = None,
    max_order: int = MAX_ORDER,
    moment_tol: float = MOMENT_TOL,
) -> tuple[MixingDistribution, FitReport, QuadratureRule]:
    """
    Compress then fit.

    J = 0 fits on the full empirical measure. When delta_n is given the
    certificate target becomes delta_n / (2n).

    Returns:
        (MixingDistribution, FitReport, the QuadratureRule used)
    """
    x = model.check_support(data)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("fit_compressed expects a nonempty 1-D sample")

    if delta_n is not None:
        from quadnpmle.theory import solver_tolerance_for

        tol = solver_tolerance_for(delta_n, x.size)
    options = options or FitOptions()
    options = FitOptions(
        tol=tol,
        max_em=options.max_em,
        max_exchange=options.max_exchange,
        exchange_every=options.exchange_every,
        algorithm=options.algorithm,
    )

    start = time.perf_counter()
    rule = compress(x, J, model, max_order=max_order, moment_tol=moment_tol)
    preprocess = time.perf_counter() - start

    grid = grid_for(model, x, grid_options)
    g, report = fit_npmle(model, rule.measure, grid, options)
    report.order = rule.order if J > 0 else "full"
    report.wall_times["preprocess"] = preprocess
    report.extra["construction"] = rule.construction.value
    report.extra["max_moment_residual"] = rule.max_residual
    push_debug(
        f"Fit J={report.order}: {rule.measure.size} atoms, "
        f"{report.em_iterations} EM / {report.exchange_iterations} exchange steps"
    )
    return g, report, rule

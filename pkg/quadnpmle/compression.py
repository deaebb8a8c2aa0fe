"""
Empirical measures and their moment-matching compression.

Three constructions are provided:

- counting_compress: exact regrouping of integer data by value
- gauss_quadrature: order-J Gaussian quadrature of a 1-D discrete measure
  (Stieltjes/Lanczos recurrence plus the Golub-Welsch eigenproblem)
- tchakaloff_compress: sparse nonnegative reweighting of a 2-D point cloud
  matching every monomial moment up to a total degree

All moment work happens after an affine map of each coordinate onto [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, eigh_tridiagonal, null_space
from scipy.optimize import linprog, nnls
from scipy.special import comb

from quadnpmle.constants import BETA_FLOOR, MAX_ORDER, MOMENT_TOL, WEIGHT_SUM_TOL
from quadnpmle.errors import NumericalError, ValidationError
from quadnpmle.logs_utils import push_debug, safe_push_log
from quadnpmle.models import ExpFamilyModel, ModelKind


class Construction(str, Enum):
    """How a QuadratureRule was obtained."""

    GOLUB_WELSCH = "golub_welsch"
    COUNTING = "counting"
    TCHAKALOFF = "tchakaloff"
    IDENTITY = "identity"


# === Affine standardization ===


@dataclass(frozen=True, eq=False)
class AffineMap:
    """Coordinate-wise map y = (x - center) / scale onto [-1, 1]."""

    center: NDArray[np.float64]
    scale: NDArray[np.float64]

    @classmethod
    def fit(cls, atoms: NDArray[np.float64]) -> AffineMap:
        lo, hi = atoms.min(axis=0), atoms.max(axis=0)
        center = 0.5 * (lo + hi)
        scale = 0.5 * (hi - lo)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(center=np.asarray(center, dtype=float), scale=np.asarray(scale))

    def forward(self, x: ArrayLike) -> NDArray[np.float64]:
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    def inverse(self, y: ArrayLike) -> NDArray[np.float64]:
        return self.center + self.scale * np.asarray(y, dtype=float)


# === Measures ===


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """
    Weighted distinct atoms on the line (shape (d,)) or in the plane (shape (d, 2)).

    sample_size is the size of the sample the measure summarizes, so
    compressed measures keep reporting likelihoods in total units. counts holds
    exact integer multiplicities when they are known.
    """

    atoms: NDArray[np.float64]
    weights: NDArray[np.float64]
    sample_size: int
    counts: NDArray[np.int64] | None = None

    def __post_init__(self) -> None:
        if self.atoms.shape[0] != self.weights.shape[0] or self.atoms.ndim not in (1, 2):
            raise ValidationError("atoms and weights must have matching lengths")
        if self.weights.size == 0:
            raise ValidationError("a measure needs at least one atom")
        if not np.all(self.weights > 0):
            raise ValidationError("measure weights must be > 0")
        if abs(math.fsum(self.weights) - 1.0) > WEIGHT_SUM_TOL:
            raise ValidationError("measure weights must sum to 1")
        if self.sample_size < 1:
            raise ValidationError("sample_size must be >= 1")

    @property
    def size(self) -> int:
        return int(self.weights.size)

    @property
    def dim(self) -> int:
        return 1 if self.atoms.ndim == 1 else int(self.atoms.shape[1])

    def affine(self) -> AffineMap:
        return AffineMap.fit(self.atoms)


def _merge(
    atoms: NDArray[np.float64], mass: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Merge duplicate atoms by adding their mass (atoms come back sorted)"""
    axis = 0 if atoms.ndim == 2 else None
    unique, inverse = np.unique(atoms, axis=axis, return_inverse=True)
    merged = np.zeros(unique.shape[0])
    np.add.at(merged, inverse.reshape(-1), mass)
    return unique, merged


def empirical_measure(data: ArrayLike) -> DiscreteMeasure:
    """
    Empirical measure P_n with duplicates merged.

    Args:
        data: Observations, shape (n,) or (n, 2) for (x, tau) pairs

    Returns:
        DiscreteMeasure with weights N_k / n and integer counts N_k
    """
    values = np.asarray(data, dtype=float)
    if values.size == 0:
        raise ValidationError("empirical_measure needs at least one observation")
    if values.ndim not in (1, 2):
        raise ValidationError("data must be 1-D or (n, 2)")
    if not np.all(np.isfinite(values)):
        raise ValidationError("data must be finite")

    n = values.shape[0]
    axis = 0 if values.ndim == 2 else None
    atoms, counts = np.unique(values, axis=axis, return_counts=True)
    return DiscreteMeasure(
        atoms=atoms, weights=counts / n, sample_size=n, counts=counts.astype(np.int64)
    )


# === Moments ===


def _monomial_exponents(degree: int) -> list[tuple[int, int]]:
    """(a, b) with a + b <= degree, ordered by total degree"""
    return [(t - b, b) for t in range(degree + 1) for b in range(t + 1)]


def raw_moments(
    measure: DiscreteMeasure,
    K: int,
    affine: AffineMap | None = None,
    standardized: bool = False,
    compensated: bool = True,
) -> NDArray[np.float64]:
    """
    Moments m_0..m_K of a 1-D measure.

    Sums are taken in standardized coordinates (math.fsum when compensated)
    and mapped back to raw coordinates through the binomial expansion unless
    standardized is set.

    Args:
        measure: 1-D discrete measure
        K: Highest moment order (>= 0)
        affine: Standardizing map (default: fitted to the measure's own atoms)
        standardized: Return moments of the standardized atoms
        compensated: Use compensated serial summation

    Returns:
        Array of K + 1 moments
    """
    if measure.dim != 1:
        raise ValidationError("raw_moments expects a 1-D measure")
    if K < 0:
        raise ValidationError("K must be >= 0")

    affine = affine or measure.affine()
    y = affine.forward(measure.atoms)
    term = measure.weights.copy()
    std = np.empty(K + 1)
    for k in range(K + 1):
        std[k] = math.fsum(term) if compensated else float(term.sum())
        term = term * y

    if standardized:
        return std

    c, s = float(affine.center), float(affine.scale)
    raw = np.empty(K + 1)
    for k in range(K + 1):
        j = np.arange(k + 1)
        raw[k] = math.fsum(comb(k, j) * c ** (k - j) * s**j * std[: k + 1])
    return raw


def _moment_vector_2d(
    measure: DiscreteMeasure, degree: int, affine: AffineMap
) -> NDArray[np.float64]:
    y = affine.forward(measure.atoms)
    basis = _vandermonde_2d(y, degree)
    return np.array([math.fsum(measure.weights * col) for col in basis.T])


def _vandermonde_2d(y: NDArray[np.float64], degree: int) -> NDArray[np.float64]:
    return np.column_stack(
        [y[:, 0] ** a * y[:, 1] ** b for a, b in _monomial_exponents(degree)]
    )


# === Recurrence coefficients ===


@dataclass(frozen=True, eq=False)
class RecurrenceCoefficients:
    """
    Three-term recurrence coefficients in standardized coordinates.

    beta[0] is the total mass; alpha and beta have length order.
    """

    alpha: NDArray[np.float64]
    beta: NDArray[np.float64]
    affine: AffineMap
    truncated: bool = False

    @property
    def order(self) -> int:
        return int(self.alpha.size)

    def raw(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """alpha and beta mapped back to raw coordinates"""
        c, s = float(self.affine.center), float(self.affine.scale)
        beta = self.beta.copy()
        beta[1:] *= s * s
        return c + s * self.alpha, beta


def recurrence_coefficients(measure: DiscreteMeasure, J: int) -> RecurrenceCoefficients:
    """
    Stieltjes procedure on the discrete inner product, run as Lanczos with full
    reorthogonalization on the standardized atoms.

    Returns fewer than J coefficients (truncated=True) when the measure has
    fewer distinct atoms or beta_k falls under the numeric floor.
    """
    if measure.dim != 1:
        raise ValidationError("recurrence_coefficients expects a 1-D measure")
    if J < 1:
        raise ValidationError("J must be >= 1")

    affine = measure.affine()
    y = affine.forward(measure.atoms)
    beta0 = math.fsum(measure.weights)
    order = min(J, measure.size)

    Q = np.zeros((measure.size, order))
    Q[:, 0] = np.sqrt(measure.weights / beta0)
    alpha = np.zeros(order)
    beta = np.zeros(order)
    beta[0] = beta0
    truncated = order < J

    for k in range(order):
        v = y * Q[:, k]
        alpha[k] = Q[:, k] @ v
        if k == order - 1:
            break
        v -= alpha[k] * Q[:, k]
        if k > 0:
            v -= math.sqrt(beta[k]) * Q[:, k - 1]
        for _ in range(2):
            v -= Q[:, : k + 1] @ (Q[:, : k + 1].T @ v)
        b2 = float(v @ v)
        if b2 <= BETA_FLOOR:
            alpha, beta = alpha[: k + 1], beta[: k + 1]
            truncated = True
            break
        beta[k + 1] = b2
        Q[:, k + 1] = v / math.sqrt(b2)

    if truncated:
        push_debug(f"Recurrence truncated at order {alpha.size} (requested {J})")
    return RecurrenceCoefficients(alpha=alpha, beta=beta, affine=affine, truncated=truncated)


# === Quadrature rules ===


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """A compressed measure with its order and standardized moment residuals."""

    measure: DiscreteMeasure
    order: int
    construction: Construction
    moment_residuals: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))

    @property
    def max_residual(self) -> float:
        if self.moment_residuals.size == 0:
            return 0.0
        return float(self.moment_residuals.max())

    def to_dict(self) -> dict[str, Any]:
        return {
            "atoms": self.measure.atoms,
            "weights": self.measure.weights,
            "order": self.order,
            "residuals": self.moment_residuals,
            "construction": self.construction.value,
            "sample_size": self.measure.sample_size,
        }


def _identity_rule(measure: DiscreteMeasure, order: int) -> QuadratureRule:
    return QuadratureRule(measure=measure, order=order, construction=Construction.IDENTITY)


def _check_residuals(residuals: NDArray[np.float64], tol: float, what: str) -> None:
    worst = float(residuals.max()) if residuals.size else 0.0
    if worst > tol:
        safe_push_log(f"⚠️ {what}: moment residual {worst:.3e} above {tol:g}")


def gauss_quadrature(
    measure: DiscreteMeasure,
    J: int,
    max_order: int = MAX_ORDER,
    moment_tol: float = MOMENT_TOL,
) -> QuadratureRule:
    """
    Order-J Gaussian quadrature of a 1-D discrete measure via Golub-Welsch.

    Nodes are the eigenvalues of the Jacobi matrix and weights are
    beta_0 times the squared first eigenvector components. When J is at least
    the number of atoms the measure itself is returned.

    Raises:
        ValidationError: J < 1 or a 2-D measure
        NumericalError: Eigensolver failure
    """
    if measure.dim != 1:
        raise ValidationError("gauss_quadrature expects a 1-D measure")
    if J < 1:
        raise ValidationError("J must be >= 1")
    if J >= measure.size:
        return _identity_rule(measure, J)
    if J > max_order:
        safe_push_log(f"⚠️ Order {J} clamped to {max_order}")
        J = max_order

    rc = recurrence_coefficients(measure, J)
    if rc.order == 1:
        y, w = np.array([rc.alpha[0]]), np.array([rc.beta[0]])
    else:
        try:
            y, vecs = eigh_tridiagonal(
                rc.alpha, np.sqrt(rc.beta[1:]), lapack_driver="stev"
            )
        except LinAlgError as e:
            raise NumericalError(
                f"Tridiagonal eigensolver did not converge: {e}",
                {"order": rc.order, "alpha": rc.alpha, "beta": rc.beta},
            ) from e
        w = rc.beta[0] * vecs[0, :] ** 2

    keep = w > 0
    nodes = rc.affine.inverse(np.clip(y[keep], -1.0, 1.0))
    nodes, w = _merge(nodes, w[keep])
    rule_measure = DiscreteMeasure(
        atoms=nodes, weights=w / math.fsum(w), sample_size=measure.sample_size
    )

    K = 2 * rc.order - 1
    residuals = np.abs(
        raw_moments(rule_measure, K, affine=rc.affine, standardized=True)
        - raw_moments(measure, K, affine=rc.affine, standardized=True)
    )
    _check_residuals(residuals, moment_tol, f"Gauss quadrature J={rc.order}")
    return QuadratureRule(
        measure=rule_measure,
        order=rc.order,
        construction=Construction.GOLUB_WELSCH,
        moment_residuals=residuals,
    )


def is_count_data(data: ArrayLike) -> bool:
    values = np.asarray(data, dtype=float)
    return bool(
        values.ndim == 1
        and np.all(np.isfinite(values))
        and np.all(values >= 0)
        and np.all(values == np.floor(values))
    )


def counting_compress(data: ArrayLike) -> QuadratureRule:
    """
    Exact compression of nonnegative integer data to (value, N_k / n) pairs.

    Raises:
        ValidationError: Any value that is not a nonnegative integer
    """
    values = np.asarray(data, dtype=float)
    if values.size == 0:
        raise ValidationError("counting_compress needs at least one observation")
    if not is_count_data(values):
        raise ValidationError("counting_compress needs nonnegative integer data")

    measure = empirical_measure(values)
    return QuadratureRule(
        measure=measure,
        order=int(values.max()) + 1,
        construction=Construction.COUNTING,
    )


# === 2-D Tchakaloff compression ===


def _caratheodory_reduce(
    V: NDArray[np.float64], u: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Move along null vectors of V^T until at most rank(V) weights stay positive"""
    u = u.copy()
    while True:
        active = np.flatnonzero(u > 0)
        kernel = null_space(V[active].T)
        if kernel.shape[1] == 0:
            return u
        z = kernel[:, 0]
        if not np.any(z > 0):
            z = -z
        pos = np.flatnonzero(z > 0)
        ratios = u[active[pos]] / z[pos]
        u[active] -= ratios.min() * z
        u[active[pos[np.argmin(ratios)]]] = 0.0
        u[u < 0] = 0.0


def _nnls_block(
    V: NDArray[np.float64], u: NDArray[np.float64], basis_size: int, max_iter: int
) -> NDArray[np.float64]:
    """Reweight one block of atoms onto at most basis_size of them"""
    x, _ = nnls(V.T, V.T @ u, maxiter=max_iter)
    if np.count_nonzero(x) > basis_size:
        x = _caratheodory_reduce(V, x)
    return x


def _nnls_reduce(
    V: NDArray[np.float64], u: NDArray[np.float64], basis_size: int, max_iter: int
) -> NDArray[np.float64]:
    """
    Blockwise Carathéodory reduction: each block of 4 * basis_size atoms is
    replaced by an NNLS reweighting matching its own moments, until the
    support fits the basis. Blocks keep every NNLS problem small.
    """
    block = 4 * basis_size
    u = u.copy()
    active = np.flatnonzero(u > 0)
    while active.size > basis_size:
        reduced = np.zeros_like(u)
        for start in range(0, active.size, block):
            idx = active[start : start + block]
            if idx.size <= basis_size:
                reduced[idx] = u[idx]
            else:
                reduced[idx] = _nnls_block(V[idx], u[idx], basis_size, max_iter)
        next_active = np.flatnonzero(reduced > 0)
        if next_active.size >= active.size:
            raise NumericalError("NNLS reduction stalled", {"atoms": int(active.size)})
        u, active = reduced, next_active
    return u


def tchakaloff_compress(
    measure2d: DiscreteMeasure,
    J: int,
    moment_tol: float = MOMENT_TOL,
    max_iter: int | None = None,
) -> QuadratureRule:
    """
    Carathéodory-Tchakaloff compression of a 2-D measure.

    Finds nonnegative weights on a subset of the original atoms matching every
    monomial moment x^a tau^b with a + b <= J (standardized coordinates).
    Nonnegative least squares picks the support; a simplex feasibility LP is
    the fallback.

    Raises:
        ValidationError: J < 0 or a 1-D measure
        NumericalError: Residual target missed; diagnostics carry the best residual
    """
    if measure2d.dim != 2:
        raise ValidationError("tchakaloff_compress expects a 2-D measure")
    if J < 0:
        raise ValidationError("J must be >= 0")

    basis_size = (J + 2) * (J + 1) // 2
    if measure2d.size <= basis_size:
        return _identity_rule(measure2d, J)

    affine = measure2d.affine()
    V = _vandermonde_2d(affine.forward(measure2d.atoms), J)
    target = np.array([math.fsum(measure2d.weights * col) for col in V.T])

    candidates: list[tuple[float, NDArray[np.float64]]] = []
    try:
        u = _nnls_reduce(V, measure2d.weights, basis_size, max_iter or 50 * basis_size)
        candidates.append((float(np.max(np.abs(V.T @ u - target))), u))
    except (RuntimeError, LinAlgError) as e:
        push_debug(f"NNLS failed ({e}); trying linear programming")

    if not candidates or candidates[0][0] > moment_tol:
        lp = linprog(
            np.zeros(measure2d.size),
            A_eq=V.T,
            b_eq=target,
            bounds=(0, None),
            method="highs-ds",
        )
        if lp.x is not None:
            u = np.maximum(lp.x, 0.0)
            candidates.append((float(np.max(np.abs(V.T @ u - target))), u))

    if not candidates:
        raise NumericalError("Tchakaloff compression failed", {"best_residual": math.inf})
    best_residual, u = min(candidates, key=lambda c: c[0])
    if best_residual > moment_tol:
        raise NumericalError(
            f"Tchakaloff residual {best_residual:.3e} above {moment_tol:g}",
            {"best_residual": best_residual, "order": J},
        )

    if np.count_nonzero(u) > basis_size:
        u = _caratheodory_reduce(V, u)

    keep = np.flatnonzero(u > 0)
    weights = u[keep] / math.fsum(u[keep])
    rule_measure = DiscreteMeasure(
        atoms=measure2d.atoms[keep], weights=weights, sample_size=measure2d.sample_size
    )
    residuals = np.abs(
        _moment_vector_2d(rule_measure, J, affine) - _moment_vector_2d(measure2d, J, affine)
    )
    _check_residuals(residuals, moment_tol, f"Tchakaloff J={J}")
    return QuadratureRule(
        measure=rule_measure,
        order=J,
        construction=Construction.TCHAKALOFF,
        moment_residuals=residuals,
    )


# === Dispatcher ===


def compress(
    data: ArrayLike | DiscreteMeasure,
    J: int,
    model: ExpFamilyModel | None = None,
    max_order: int = MAX_ORDER,
    moment_tol: float = MOMENT_TOL,
) -> QuadratureRule:
    """
    Compress observations for fitting.

    J = 0 keeps the empirical measure. 2-D data goes through Tchakaloff,
    nonnegative integer data through exact counting (only for the Poisson
    family when a model is given), everything else through Gaussian quadrature
    of order J.
    """
    if J < 0:
        raise ValidationError("J must be >= 0")

    if isinstance(data, DiscreteMeasure):
        measure = data
    else:
        values = np.asarray(data, dtype=float)
        counting = model is None or model.kind is ModelKind.POISSON_UNIT
        if J > 0 and counting and is_count_data(values):
            return counting_compress(values)
        measure = empirical_measure(values)

    if J == 0:
        return _identity_rule(measure, 0)
    if measure.dim == 2:
        return tchakaloff_compress(measure, J, moment_tol=moment_tol)
    return gauss_quadrature(measure, J, max_order=max_order, moment_tol=moment_tol)

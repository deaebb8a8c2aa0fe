"""
Closed-form prescriptions and approximation diagnostics.

- Quadrature order J_n that keeps the likelihood gap below Delta_n, for the
  exponential family model and for the heteroscedastic Gaussian model
- Solver tolerance Delta_n / (2n)
- Support bound M_n from the inverse mean map
- Chebyshev coefficients, Bernstein ellipse radius and tail bounds
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
from numpy.polynomial import chebyshev
from numpy.typing import ArrayLike, NDArray
from scipy.fft import dct
from scipy.special import logsumexp

from quadnpmle.constants import TOLERANCE_FLOOR
from quadnpmle.errors import ValidationError
from quadnpmle.logs_utils import safe_push_log
from quadnpmle.models import ExpFamilyModel


@dataclass(frozen=True)
class TheoryConstants:
    """
    Constants entering the order prescriptions.

    C_universal and C_T0 have no known value and default to 1; b0, b1, beta0
    are the tail parameters used by rate experiments; gamma sets Delta_n = n^-gamma.
    """

    C_universal: float = 1.0
    C_T0: float = 1.0
    b0: float = 1.0
    b1: float = 1.0
    beta0: float = 2.0
    gamma: float = 1.0

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValidationError(f"{name} must be > 0, got {value}")

    @classmethod
    def for_model(cls, model: ExpFamilyModel, **overrides: float) -> TheoryConstants:
        """beta0 = 1 for a bounded parameter set, 2 otherwise"""
        defaults: dict[str, float] = {"beta0": 1.0 if model.scenario == "S1" else 2.0}
        defaults.update(overrides)
        return cls(**defaults)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


# === Orders and tolerances ===


def jn_theorem1(
    X_abs_max: float,
    M_n: float,
    kappa_sup: float,
    delta_n: float,
    n: int,
    C: float = 1.0,
) -> int:
    """
    ceil(2 |X| M_n log(C n |X| M_n (|X| M_n + kappa_sup) / Delta_n)), at least 1.

    Raises:
        ValidationError: |X| M_n < 1 or non-positive delta_n, n, C
    """
    xm = X_abs_max * M_n
    if not xm >= 1:
        raise ValidationError(f"|X|_n * M_n must be >= 1, got {xm:g}")
    if not (delta_n > 0 and n >= 1 and C > 0 and kappa_sup >= 0):
        raise ValidationError("delta_n, n and C must be positive, kappa_sup >= 0")
    log_arg = (
        math.log(C) + math.log(n) + math.log(xm) + math.log(xm + kappa_sup)
        - math.log(delta_n)
    )
    return max(1, math.ceil(2.0 * xm * log_arg))


def solver_tolerance_for(delta_n: float, n: int) -> float:
    """Certificate target Delta_n / (2n); warns below the 1e-12 numeric floor"""
    if not (delta_n > 0 and n >= 1):
        raise ValidationError("delta_n must be > 0 and n >= 1")
    tol = delta_n / (2.0 * n)
    if below_numeric_floor(tol):
        safe_push_log(f"⚠️ Solver tolerance {tol:.1e} is below the numeric floor")
    return tol


def below_numeric_floor(tol: float) -> bool:
    return tol < TOLERANCE_FLOOR


def support_bound(model: ExpFamilyModel, X_abs_max: float) -> float:
    """
    M_n: the model's M when finite, else max |kappa'^-1(+-|X|_n)|.

    Endpoints outside the range of kappa' are skipped (Poisson has no
    negative means); if none remain, ValidationError.
    """
    if X_abs_max < 0:
        raise ValidationError("X_abs_max must be >= 0")
    if math.isfinite(model.M):
        return model.M

    lo_y, hi_y = model.kappa_prime_range
    targets = [y for y in (-X_abs_max, X_abs_max) if lo_y < y < hi_y]
    if not targets:
        raise ValidationError(
            f"|X|_n = {X_abs_max:g} is outside the range of kappa' for {model.label}"
        )
    return max(abs(model.kappa_prime_inverse(y)) for y in targets)


def kappa_sup(model: ExpFamilyModel, radius: float, points: int = 2001) -> float:
    """sup of |kappa| over [-radius, radius] (inside Theta)"""
    _, upper = model.canonical_domain
    hi = min(radius, math.nextafter(upper, -math.inf)) if math.isfinite(upper) else radius
    theta = np.linspace(-radius, hi, points)
    return float(np.max(np.abs(model.kappa(theta))))


def jn_hetero(
    X_abs_max: float,
    M: float,
    T0: float,
    gamma: float,
    n: int,
    C_T0: float = 1.0,
) -> int:
    """ceil(C |X| (|X| ^ M) log(C n^(1+gamma) |X|^4)), at least 1"""
    if not X_abs_max > 0:
        raise ValidationError("X_abs_max must be > 0")
    if not T0 > 1:
        raise ValidationError("T0 must be > 1")
    if not (n >= 1 and C_T0 > 0 and gamma > 0):
        raise ValidationError("n, C_T0 and gamma must be positive")
    quad = X_abs_max * min(X_abs_max, M)
    log_arg = math.log(C_T0) + (1.0 + gamma) * math.log(n) + 4.0 * math.log(X_abs_max)
    return max(1, math.ceil(C_T0 * quad * log_arg))


def hetero_delta_n(X_abs_max: float, M: float, T0: float) -> float:
    """
    Analyticity radius of the heteroscedastic log-density in the (x, tau) scale.

    B2 and tau0 put [B2 (tau0 - 1), B2 (tau0 + 1)] = [1/T0, T0].
    """
    if not (X_abs_max > 0 and T0 > 1):
        raise ValidationError("X_abs_max must be > 0 and T0 > 1")
    B2 = 0.5 * (T0 - 1.0 / T0)
    tau0 = (T0 + 1.0 / T0) / (T0 - 1.0 / T0)
    radius = math.pi / (8.0 * (tau0 + 2.0) * B2 * X_abs_max * min(X_abs_max, M))
    return min(radius, 0.5, math.sqrt(((tau0 + 1.0) / 2.0) ** 2 - 1.0))


def jn_hetero_exact(
    X_abs_max: float,
    M: float,
    T0: float,
    gamma: float,
    n: int,
    C: float = 1.0,
) -> int:
    """ceil((2 / log(1 + delta)) log(256 n^(1+gamma) C |X|^2 / delta^2)), at least 1"""
    delta = hetero_delta_n(X_abs_max, M, T0)
    log_arg = (
        math.log(256.0 * C)
        + (1.0 + gamma) * math.log(n)
        + 2.0 * math.log(X_abs_max)
        - 2.0 * math.log(delta)
    )
    return max(1, math.ceil(2.0 / math.log1p(delta) * log_arg))


def jn_growth_table(
    ns: Sequence[int],
    c: float = 1.0,
    M: float = 1.0,
    kappa_sup_value: float | None = None,
    delta_n: float = 1.0,
    C: float = 1.0,
) -> list[dict[str, float]]:
    """
    jn_theorem1 along |X|_n = c log n with M_n = M fixed.

    The ratio J_n / (log n)^2 settles as n grows.
    """
    ksup = 0.5 * M * M if kappa_sup_value is None else kappa_sup_value
    rows = []
    for n in ns:
        x_abs = c * math.log(n)
        J = jn_theorem1(x_abs, M, ksup, delta_n, n, C)
        rows.append({"n": n, "X_abs_max": x_abs, "J_n": J, "ratio": J / math.log(n) ** 2})
    return rows


# === Chebyshev and Bernstein ===


def chebyshev_nodes(B: float, N: int) -> NDArray[np.float64]:
    """First-kind Chebyshev nodes B cos(pi (j + 1/2) / N), j = 0..N-1"""
    if N < 1 or not B > 0:
        raise ValidationError("need N >= 1 and B > 0")
    return B * np.cos(np.pi * (np.arange(N) + 0.5) / N)


@dataclass(frozen=True, eq=False)
class ChebCoefficients:
    """Chebyshev coefficients of a function on [-B, B] with fitted decay rate."""

    B: float
    coeffs: NDArray[np.float64]
    rho_hat: float

    def evaluate(self, x: ArrayLike) -> NDArray[np.float64]:
        return chebyshev.chebval(np.asarray(x, dtype=float) / self.B, self.coeffs)


def _fit_decay(coeffs: NDArray[np.float64]) -> float:
    """exp(-slope) of log|c_k| against k for k >= 2 above the rounding floor"""
    k = np.arange(coeffs.size)
    mags = np.abs(coeffs)
    floor = 1e-13 * max(float(mags.max()), 1e-300)
    usable = (k >= 2) & (mags > floor)
    if np.count_nonzero(usable) < 2:
        return math.inf
    slope, _ = np.polyfit(k[usable], np.log(mags[usable]), 1)
    return math.exp(-slope) if slope < 0 else 1.0


def cheb_projection(
    samples: ArrayLike, B: float, J: int | None = None
) -> ChebCoefficients:
    """
    Chebyshev coefficients from samples at chebyshev_nodes(B, N).

    Interpolation coefficients via a type-II DCT stand in for the projection
    integrals; the first J + 1 (default all N) are kept.
    """
    y = np.asarray(samples, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValidationError("samples must be a nonempty 1-D array")
    if not np.all(np.isfinite(y)):
        raise ValidationError("samples must be finite")
    N = y.size
    J = N - 1 if J is None else J
    if not 0 <= J < N:
        raise ValidationError(f"J must be in [0, {N - 1}]")

    coeffs = dct(y, type=2) / N
    coeffs[0] /= 2.0
    coeffs = coeffs[: J + 1]
    return ChebCoefficients(B=float(B), coeffs=coeffs, rho_hat=_fit_decay(coeffs))


def cheb_project_function(
    h: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    B: float,
    J: int,
    N: int | None = None,
) -> ChebCoefficients:
    """Sample h at N >= J + 1 nodes (default 4(J + 1)) and project"""
    N = N or 4 * (J + 1)
    return cheb_projection(h(chebyshev_nodes(B, N)), B, J)


def rho_ellipse(B: float, M_g: float) -> float:
    """pi/(4 B M_g) + sqrt(1 + (pi/(4 B M_g))^2)"""
    if not (B > 0 and M_g > 0):
        raise ValidationError("B and M_g must be > 0")
    a = math.pi / (4.0 * B * M_g)
    return a + math.sqrt(1.0 + a * a)


def bernstein_tail_bound(C_h: float, rho: float, J: int) -> float:
    """2 C_h / ((rho - 1) rho^J)"""
    if not (rho > 1 and C_h > 0):
        raise ValidationError("need rho > 1 and C_h > 0")
    return 2.0 * C_h / ((rho - 1.0) * rho**J)


def bernstein_polyellipse_bound(
    C_h: float, rhos: Sequence[float], J: int, d: int | None = None
) -> float:
    """2^d C_h prod(rho/(rho-1)) sum(rho^-(floor(J/d)+1))"""
    rhos = [float(r) for r in rhos]
    d = len(rhos) if d is None else d
    if d != len(rhos) or d < 1:
        raise ValidationError("d must equal the number of radii")
    if not C_h > 0 or any(r <= 1 for r in rhos):
        raise ValidationError("need C_h > 0 and every rho > 1")
    power = J // d + 1
    return (
        2.0**d
        * C_h
        * math.prod(r / (r - 1.0) for r in rhos)
        * math.fsum(r ** (-power) for r in rhos)
    )


def lemma_log_density_constant(
    B: float, M_g: float, kappa_sup_value: float, C: float = 1.0
) -> float:
    """C_h = C B M_g + sup|kappa| for the log mixture likelihood ratio"""
    return C * B * M_g + kappa_sup_value


def measured_bernstein_constant(coeffs: ArrayLike, rho: float) -> float:
    """Smallest C_h with |c_k| <= 2 C_h rho^-k for every given k"""
    c = np.abs(np.asarray(coeffs, dtype=float))
    return float(np.max(c * rho ** np.arange(c.size)) / 2.0)


def chebyshev_decay_report(
    model: ExpFamilyModel,
    grid: ArrayLike,
    weights: ArrayLike,
    B: float,
    J: int = 40,
    N: int = 512,
    C: float = 1.0,
) -> dict[str, Any]:
    """
    Chebyshev decay of log l_g(x) = log sum_k g_k exp(theta_k x - kappa(theta_k))
    on [-B, B], checked against the ellipse bound.

    The lemma constant C is also measured: the smallest value making the
    displayed C_h satisfy the coefficient bound.
    """
    theta = np.asarray(grid, dtype=float)
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    theta, log_w = theta[keep], np.log(w[keep])
    kappa = model.kappa(theta)

    def h(x: NDArray[np.float64]) -> NDArray[np.float64]:
        return logsumexp(x[:, None] * theta[None, :] - kappa[None, :] + log_w, axis=1)

    M_g = float(np.max(np.abs(theta)))
    cheb = cheb_project_function(h, B, J, N)
    rho = rho_ellipse(B, M_g)
    ksup = float(np.max(np.abs(kappa)))
    C_h = lemma_log_density_constant(B, M_g, ksup, C)
    k = np.arange(cheb.coeffs.size)
    measured = measured_bernstein_constant(cheb.coeffs, rho)
    return {
        "B": B,
        "M_g": M_g,
        "rho_ellipse": rho,
        "rho_hat": cheb.rho_hat,
        "C_h": C_h,
        "C_measured": max(0.0, (measured - ksup) / (B * M_g)),
        "bound_holds": bool(np.all(np.abs(cheb.coeffs) <= 2.0 * C_h * rho ** (-k))),
        "coefficients": cheb.coeffs,
    }

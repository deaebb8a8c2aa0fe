"""
Exponential family mixture models.

Each model is an exponential family p_theta(x) = exp(theta*x - kappa(theta)) p0(x)
over a Lebesgue or counting reference measure. Three closed-form families are
supported:

- Gaussian location: kappa(theta) = theta^2/2, p0 = N(0, 1)
- Scaled chi-square: kappa(theta) = -(nu/2) log(1 - 2 sigma2 theta / nu),
  p0 = sigma2 * chi2_nu / nu, tilted draws are Gamma(nu/2, nu/(2 sigma2) - theta)
- Unit Poisson: kappa(theta) = e^theta - 1, p0 = Poisson(1)
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum
from typing import Any, Protocol, runtime_checkable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import bisect
from scipy.special import gammaln

from quadnpmle.constants import BISECTION_XTOL, PRIOR_GRID_SIZE
from quadnpmle.errors import ValidationError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class ModelKind(str, Enum):
    """Supported exponential families."""

    GAUSSIAN_LOCATION = "gl"
    SCALED_CHI_SQUARE = "sc"
    POISSON_UNIT = "poisson"


class ReferenceKind(str, Enum):
    """Reference measure of the family."""

    LEBESGUE = "lebesgue"
    COUNTING = "counting"


@dataclass(frozen=True)
class ExpFamilyModel:
    """
    Immutable exponential family with support radius M.

    Build instances with make_model() so parameters are validated.
    """

    kind: ModelKind
    nu: int | None = None
    sigma2: float | None = None
    M: float = math.inf

    # === Domain ===

    @property
    def canonical_domain(self) -> tuple[float, float]:
        """Endpoints of Theta; the upper end is open for scaled chi-square"""
        if self.kind is ModelKind.SCALED_CHI_SQUARE:
            return (-math.inf, self.nu / (2.0 * self.sigma2))
        return (-math.inf, math.inf)

    @property
    def reference_kind(self) -> ReferenceKind:
        if self.kind is ModelKind.POISSON_UNIT:
            return ReferenceKind.COUNTING
        return ReferenceKind.LEBESGUE

    @property
    def tail_exponents(self) -> tuple[float, float] | None:
        """(alpha1, alpha2) bounds on kappa; only the Gaussian family has them"""
        if self.kind is ModelKind.GAUSSIAN_LOCATION:
            return (1.0, 1.0)
        return None

    @property
    def scenario(self) -> str | None:
        """S1 for a bounded parameter set, S2 for unbounded with tail exponents"""
        if math.isfinite(self.M):
            return "S1"
        if self.tail_exponents is not None:
            return "S2"
        return None

    @property
    def label(self) -> str:
        if self.kind is ModelKind.SCALED_CHI_SQUARE:
            return f"sc(nu={self.nu},sigma2={self.sigma2:g})"
        return self.kind.value

    def check_theta(self, theta: ArrayLike) -> NDArray[np.float64]:
        """Return theta as an array, raising ValidationError outside Theta"""
        t = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(t)):
            raise ValidationError("theta must be finite")
        _, upper = self.canonical_domain
        if np.any(t >= upper):
            raise ValidationError(f"theta outside canonical domain (< {upper:g})")
        return t

    def check_support(self, x: ArrayLike) -> NDArray[np.float64]:
        """Return x as an array, raising ValidationError outside the data support"""
        v = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValidationError("observations must be finite")
        if self.kind is ModelKind.SCALED_CHI_SQUARE and np.any(v <= 0):
            raise ValidationError("scaled chi-square observations must be > 0")
        if self.kind is ModelKind.POISSON_UNIT and (
            np.any(v < 0) or np.any(v != np.floor(v))
        ):
            raise ValidationError("Poisson observations must be integers >= 0")
        return v

    # === Cumulant function ===

    def kappa(self, theta: ArrayLike) -> NDArray[np.float64]:
        t = self.check_theta(theta)
        if self.kind is ModelKind.GAUSSIAN_LOCATION:
            return 0.5 * t * t
        if self.kind is ModelKind.SCALED_CHI_SQUARE:
            return -0.5 * self.nu * np.log1p(-2.0 * self.sigma2 * t / self.nu)
        return np.expm1(t)

    def kappa_prime(self, theta: ArrayLike) -> NDArray[np.float64]:
        t = self.check_theta(theta)
        if self.kind is ModelKind.GAUSSIAN_LOCATION:
            return t.copy()
        if self.kind is ModelKind.SCALED_CHI_SQUARE:
            return self.sigma2 / (1.0 - 2.0 * self.sigma2 * t / self.nu)
        return np.exp(t)

    def kappa_double_prime(self, theta: ArrayLike) -> NDArray[np.float64]:
        t = self.check_theta(theta)
        if self.kind is ModelKind.GAUSSIAN_LOCATION:
            return np.ones_like(t)
        if self.kind is ModelKind.SCALED_CHI_SQUARE:
            base = 1.0 - 2.0 * self.sigma2 * t / self.nu
            return (2.0 * self.sigma2**2 / self.nu) / (base * base)
        return np.exp(t)

    @property
    def kappa_prime_range(self) -> tuple[float, float]:
        """Open range of kappa' over Theta"""
        if self.kind is ModelKind.GAUSSIAN_LOCATION:
            return (-math.inf, math.inf)
        return (0.0, math.inf)

    def kappa_prime_inverse(self, y: float, xtol: float = BISECTION_XTOL) -> float:
        """
        Solve kappa'(theta) = y by bisection with bracket expansion.

        Raises:
            ValidationError: If y is outside the range of kappa'
        """
        lo_y, hi_y = self.kappa_prime_range
        if not (lo_y < y < hi_y):
            raise ValidationError(f"{y:g} is outside the range of kappa' for {self.label}")
        if self.kind is ModelKind.GAUSSIAN_LOCATION:
            return float(y)

        def f(t: float) -> float:
            return float(self.kappa_prime(t)) - y

        _, upper = self.canonical_domain
        lo, hi = -1.0, min(1.0, 0.5 * upper) if math.isfinite(upper) else 1.0
        for _ in range(400):
            if f(lo) <= 0:
                break
            lo = 2.0 * lo
        for _ in range(400):
            if f(hi) >= 0:
                break
            hi = upper - (upper - hi) / 2.0 if math.isfinite(upper) else 2.0 * hi
        if f(lo) == 0:
            return lo
        if f(hi) == 0:
            return hi
        return float(bisect(f, lo, hi, xtol=xtol, maxiter=2000))

    # === Densities ===

    def log_likelihood_ratio(self, theta: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
        """log l_theta(x) = theta*x - kappa(theta), broadcast over theta and x"""
        t = self.check_theta(theta)
        return t * np.asarray(x, dtype=float) - self.kappa(t)

    def log_base_density(self, x: ArrayLike) -> NDArray[np.float64]:
        """log p0(x) with respect to the reference measure"""
        v = self.check_support(x)
        if self.kind is ModelKind.GAUSSIAN_LOCATION:
            return -0.5 * v * v - _LOG_SQRT_2PI
        if self.kind is ModelKind.SCALED_CHI_SQUARE:
            half_nu = 0.5 * self.nu
            rate = self.nu / (2.0 * self.sigma2)
            return (
                half_nu * math.log(rate)
                + (half_nu - 1.0) * np.log(v)
                - gammaln(half_nu)
                - rate * v
            )
        return -1.0 - gammaln(v + 1.0)

    def log_density(self, theta: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
        """log p_theta(x)"""
        return self.log_likelihood_ratio(theta, x) + self.log_base_density(x)

    # === Sampling ===

    def sample(self, theta: ArrayLike, rng: np.random.Generator) -> NDArray[np.float64]:
        """Draw one observation per theta"""
        t = self.check_theta(theta)
        if self.kind is ModelKind.GAUSSIAN_LOCATION:
            return rng.normal(loc=t, scale=1.0)
        if self.kind is ModelKind.SCALED_CHI_SQUARE:
            rate = self.nu / (2.0 * self.sigma2) - t
            return rng.gamma(shape=0.5 * self.nu, scale=1.0 / rate)
        return rng.poisson(np.exp(t)).astype(float)

    # === Serialization ===

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "nu": self.nu, "sigma2": self.sigma2, "M": self.M}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExpFamilyModel:
        params = {"nu": data.get("nu"), "sigma2": data.get("sigma2")}
        return make_model(data["kind"], params, float(data.get("M", math.inf)))


def make_model(
    kind: ModelKind | str,
    params: Mapping[str, Any] | None = None,
    M: float = math.inf,
) -> ExpFamilyModel:
    """
    Build a validated exponential family model.

    Args:
        kind: ModelKind or its value ("gl", "sc", "poisson")
        params: {"nu", "sigma2"} for scaled chi-square, ignored otherwise
        M: Support radius of the mixing distribution (math.inf for unbounded)

    Returns:
        ExpFamilyModel

    Raises:
        ValidationError: Invalid parameters or [-M, M] not inside Theta
    """
    try:
        kind = ModelKind(kind)
    except ValueError:
        raise ValidationError(f"Unknown model kind: {kind!r}") from None

    M = float(M)
    if not M > 0:
        raise ValidationError(f"Support radius M must be > 0, got {M:g}")

    if kind is not ModelKind.SCALED_CHI_SQUARE:
        return ExpFamilyModel(kind=kind, M=M)

    params = dict(params or {})
    nu, sigma2 = params.get("nu"), params.get("sigma2")
    if nu is None or sigma2 is None:
        raise ValidationError("Scaled chi-square needs nu and sigma2")
    if float(nu) != int(float(nu)) or int(float(nu)) < 2:
        raise ValidationError(f"nu must be an integer >= 2, got {nu}")
    sigma2 = float(sigma2)
    if not (sigma2 > 0 and math.isfinite(sigma2)):
        raise ValidationError(f"sigma2 must be > 0, got {sigma2:g}")
    nu = int(float(nu))
    theta_max = nu / (2.0 * sigma2)
    if M >= theta_max:
        raise ValidationError(
            f"M = {M:g} must be < nu/(2 sigma2) = {theta_max:g} for scaled chi-square"
        )
    return ExpFamilyModel(kind=kind, nu=nu, sigma2=sigma2, M=M)


# === Module-level operations ===


def _out(value: NDArray, like: ArrayLike) -> float | NDArray[np.float64]:
    return float(value) if np.ndim(like) == 0 else value


def kappa(model: ExpFamilyModel, theta: ArrayLike) -> float | NDArray[np.float64]:
    return _out(model.kappa(theta), theta)


def kappa_prime(model: ExpFamilyModel, theta: ArrayLike) -> float | NDArray[np.float64]:
    return _out(model.kappa_prime(theta), theta)


def kappa_double_prime(
    model: ExpFamilyModel, theta: ArrayLike
) -> float | NDArray[np.float64]:
    return _out(model.kappa_double_prime(theta), theta)


def log_likelihood_ratio(
    model: ExpFamilyModel, theta: ArrayLike, x: ArrayLike
) -> float | NDArray[np.float64]:
    value = model.log_likelihood_ratio(theta, x)
    return float(value) if value.ndim == 0 else value


# === Priors ===


@runtime_checkable
class Prior(Protocol):
    """Anything that can draw mixing parameters."""

    def sample_theta(self, rng: np.random.Generator, n: int) -> NDArray[np.float64]: ...

    def support(self) -> tuple[float, float]: ...


@dataclass(frozen=True)
class UniformPrior:
    """Uniform distribution on [low, high]."""

    low: float
    high: float

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise ValidationError("UniformPrior needs low < high")

    def sample_theta(self, rng: np.random.Generator, n: int) -> NDArray[np.float64]:
        return rng.uniform(self.low, self.high, size=n)

    def support(self) -> tuple[float, float]:
        return (self.low, self.high)

    def discretize(
        self, grid_size: int = PRIOR_GRID_SIZE
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Midpoint rule: grid_size equal-weight atoms"""
        h = (self.high - self.low) / grid_size
        grid = self.low + h * (np.arange(grid_size) + 0.5)
        return grid, np.full(grid_size, 1.0 / grid_size)


@dataclass(frozen=True)
class PointMassPrior:
    """Dirac mass at theta."""

    theta: float

    def sample_theta(self, rng: np.random.Generator, n: int) -> NDArray[np.float64]:
        return np.full(n, float(self.theta))

    def support(self) -> tuple[float, float]:
        return (self.theta, self.theta)

    def discretize(
        self, grid_size: int = 1
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return np.array([float(self.theta)]), np.array([1.0])


@dataclass(frozen=True)
class MixtureSample:
    """Observations with the latent parameters that generated them."""

    x: NDArray[np.float64]
    theta: NDArray[np.float64]

    def __len__(self) -> int:
        return int(self.x.size)


def check_prior_support(model: ExpFamilyModel, g0: Any) -> None:
    """Raise ValidationError unless g0 is a prior supported inside Theta_0"""
    if not isinstance(g0, Prior):
        raise ValidationError(f"Unsupported prior type: {type(g0).__name__}")
    bounds = np.asarray(g0.support(), dtype=float)
    lo, hi = float(bounds.min()), float(bounds.max())
    if lo < -model.M or hi > model.M:
        raise ValidationError(
            f"Prior support [{lo:g}, {hi:g}] is outside [-M, M] with M = {model.M:g}"
        )
    model.check_theta([lo, hi])


def sample_mixture(
    model: ExpFamilyModel, g0: Prior, n: int, seed: int | None = None
) -> MixtureSample:
    """
    Draw theta_i ~ g0 then X_i ~ p_theta_i, deterministically for a given seed.

    Args:
        model: Exponential family
        g0: UniformPrior, PointMassPrior or a fitted MixingDistribution
        n: Sample size (>= 1)
        seed: Seed for numpy's default_rng

    Returns:
        MixtureSample with observations and latent parameters
    """
    if int(n) < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    check_prior_support(model, g0)
    rng = np.random.default_rng(seed)
    theta = np.asarray(g0.sample_theta(rng, int(n)), dtype=float)
    return MixtureSample(x=model.sample(theta, rng), theta=theta)

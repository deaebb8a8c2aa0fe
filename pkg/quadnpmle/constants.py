"""
Centralized numeric constants for quadnpmle.

This module contains tolerances and defaults shared across multiple modules.
Importing from here keeps the numeric contract in one place.
"""

# === COMPRESSION ===
# Standardized moment residual that still counts as "matching".
MOMENT_TOL: float = 1e-8

# Order used when nothing else is requested (simulation study default).
DEFAULT_ORDER: int = 25

# Orders above this are clamped with a warning; Golub-Welsch degrades past ~30.
MAX_ORDER: int = 40

# Default total degree for 2-D Tchakaloff compression (basis size 45).
HETERO_ORDER: int = 8

# The Lanczos sweep stops once a squared off-diagonal coefficient of the unit-mass
# measure, in standardized [-1, 1] coordinates, is at or below this.
BETA_FLOOR: float = 1e-13

# Weight normalization check for every DiscreteMeasure.
WEIGHT_SUM_TOL: float = 1e-12

# === SOLVER ===
SOLVER_TOL: float = 1e-8
MAX_EM: int = 50_000
MAX_EXCHANGE: int = 1_000
EXCHANGE_EVERY: int = 100
GRID_SIZE: int = 300

# Certificates below this cannot be resolved in double precision.
TOLERANCE_FLOOR: float = 1e-12

# Allowed objective decrease per EM step (round-off).
MONOTONE_SLACK: float = 1e-12

# Mean used for grid endpoints that fall outside the range of kappa'
# (e.g. Poisson x = 0 has no finite maximum-likelihood theta).
MEAN_FLOOR: float = 1e-2

# === ESTIMATORS ===
# Rows per block when evaluating mixtures on large query sets.
CHUNK_SIZE: int = 10_000

# Per-panel absolute tolerance for adaptive Hellinger quadrature.
HELLINGER_EPSABS: float = 1e-10

# Total integration error above which hellinger_sq fails.
HELLINGER_MAX_ERROR: float = 1e-8

# Tail mass left outside the Hellinger integration domain.
TAIL_MASS: float = 1e-10

# Grid size used when an analytic prior must be discretized.
PRIOR_GRID_SIZE: int = 2001

# === THEORY ===
BISECTION_XTOL: float = 1e-10

# === HETERO ===
HETERO_T0: float = 10.0

# === CLI EXIT CODES ===
EXIT_OK: int = 0
EXIT_VALIDATION: int = 2
EXIT_NUMERICAL: int = 3

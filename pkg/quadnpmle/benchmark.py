"""
Full versus compressed NPMLE benchmarks and empirical rate checks.

A repetition simulates one data set, fits it on the full empirical measure
and on an order-J quadrature rule over the same grid, and scores both fits
on the full sample. Timings are wall-clock per stage; comparisons use ratios.
"""

from __future__ import annotations

import math
import statistics
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Any

import numpy as np
from numpy.typing import NDArray

from quadnpmle.compression import QuadratureRule
from quadnpmle.constants import DEFAULT_ORDER, GRID_SIZE, SOLVER_TOL
from quadnpmle.errors import NumericalError, ValidationError
from quadnpmle.estimators import hellinger_sq, log_likelihood, sse_posterior_mean
from quadnpmle.logs_utils import log_timing, push_debug, safe_push_log
from quadnpmle.models import ExpFamilyModel, Prior, sample_mixture
from quadnpmle.solver import (
    FitOptions,
    FitReport,
    GridOptions,
    MixingDistribution,
    fit_compressed,
)

METHODS = ("full", "compressed")
ACCOUNTING_SLACK = 1e-3  # seconds


@dataclass
class BenchRecord:
    """One fit of one repetition."""

    method: str
    n: int
    J: int
    grid_size: int
    seed: int
    repetition: int
    preprocess: float
    solve: float
    total: float
    log_likelihood: float
    sse: float
    certificate_gap: float
    converged: bool = True
    n_atoms: int = 0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}")
        if self.total < self.preprocess + self.solve - ACCOUNTING_SLACK:
            raise ValidationError(
                f"total {self.total:.4f}s is below preprocess + solve "
                f"({self.preprocess:.4f}s + {self.solve:.4f}s)"
            )

    @property
    def wall_times(self) -> dict[str, float]:
        return {"preprocess": self.preprocess, "solve": self.solve, "total": self.total}

    def to_row(self) -> dict[str, Any]:
        return asdict(self)


FIELDNAMES = list(BenchRecord.__dataclass_fields__)


@dataclass
class RateRecord:
    """Normalized squared Hellinger distance for one (n, repetition) cell."""

    n: int
    seed: int
    repetition: int
    J: int
    hellinger_sq: float
    normalized: float
    certificate_gap: float = 0.0
    error: str = ""

    def to_row(self) -> dict[str, Any]:
        return asdict(self)


RATE_FIELDNAMES = list(RateRecord.__dataclass_fields__)


@dataclass(frozen=True)
class BenchConfig:
    """Everything a repetition needs, picklable for worker processes."""

    model: ExpFamilyModel
    prior: Prior
    n: int
    J: int = DEFAULT_ORDER
    grid_size: int = GRID_SIZE
    tol: float = SOLVER_TOL
    options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValidationError(f"n must be >= 1, got {self.n}")
        if self.J < 1:
            raise ValidationError(
                "benchmarks compare against a compressed fit; J must be >= 1"
            )


def _timed_fit(
    config: BenchConfig, x: NDArray[np.float64], J: int
) -> tuple[MixingDistribution, FitReport, QuadratureRule, float]:
    start = time.perf_counter()
    g, report, rule = fit_compressed(
        config.model,
        x,
        J,
        GridOptions(grid_size=config.grid_size),
        tol=config.tol,
        options=config.options,
    )
    total = time.perf_counter() - start
    return g, report, rule, total


def run_repetition(
    config: BenchConfig, repetition: int, seed: int
) -> list[BenchRecord]:
    """
    Fit one simulated data set both ways.

    preprocess is the compression stage (moments plus quadrature, or merging
    duplicates for the full fit); solve covers the likelihood matrix and the
    solver; total wraps the whole fit call.
    """
    sample = sample_mixture(config.model, config.prior, config.n, seed)
    records = []
    for method, J in (("full", 0), ("compressed", config.J)):
        g, report, rule, total = _timed_fit(config, sample.x, J)
        times = report.wall_times
        records.append(
            BenchRecord(
                method=method,
                n=config.n,
                J=J,
                grid_size=config.grid_size,
                seed=seed,
                repetition=repetition,
                preprocess=times["preprocess"],
                solve=times["matrix_build"] + times["solve"],
                total=total,
                log_likelihood=log_likelihood(config.model, g, sample.x),
                sse=sse_posterior_mean(config.model, g, sample.x, sample.theta),
                certificate_gap=report.certificate_gap,
                converged=report.converged,
                n_atoms=rule.measure.size,
            )
        )
    full, compressed = records
    gap = full.log_likelihood - compressed.log_likelihood
    push_debug(
        f"Repetition {repetition}: gap {gap:+.4f}, "
        f"solve speedup {full.solve / max(compressed.solve, 1e-12):.1f}x"
    )
    return records


def run_bench(
    config: BenchConfig,
    repetitions: int,
    seed: int = 0,
    parallel: bool = False,
    on_records: Callable[[list[BenchRecord]], None] | None = None,
) -> list[BenchRecord]:
    """
    Run repetitions with seeds seed, seed + 1, ...

    on_records is called after every repetition so callers can flush partial
    results. With parallel, repetitions run in worker processes; each timing
    section still runs inside a single process.
    """
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    seeds = [seed + r for r in range(repetitions)]
    records: list[BenchRecord] = []

    def collect(batch: list[BenchRecord]) -> None:
        records.extend(batch)
        if on_records is not None:
            on_records(batch)
        compressed = batch[-1]
        log_timing(f"Repetition {compressed.repetition} (compressed)", compressed.total)

    if parallel and repetitions > 1:
        work = partial(run_repetition, config)
        with ProcessPoolExecutor() as pool:
            for batch in pool.map(work, range(repetitions), seeds):
                collect(batch)
    else:
        for r, s in enumerate(seeds):
            collect(run_repetition(config, r, s))
    return records


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator > 0 else math.inf


def summarize_records(records: Sequence[BenchRecord]) -> dict[str, Any]:
    """
    Mean and median per method plus paired comparisons.

    Speedups are medians of per-repetition ratios full / compressed.
    """
    if not records:
        raise ValidationError("no records to summarize")
    summary: dict[str, Any] = {"methods": {}}
    for method in METHODS:
        rows = [r for r in records if r.method == method]
        if not rows:
            continue
        summary["methods"][method] = {
            metric: {
                "mean": statistics.fmean(getattr(r, metric) for r in rows),
                "median": statistics.median(getattr(r, metric) for r in rows),
            }
            for metric in ("preprocess", "solve", "total", "log_likelihood", "sse")
        }

    pairs: dict[int, dict[str, BenchRecord]] = {}
    for r in records:
        pairs.setdefault(r.repetition, {})[r.method] = r
    paired = [p for p in pairs.values() if len(p) == 2]
    if paired:
        gaps = [
            p["full"].log_likelihood - p["compressed"].log_likelihood for p in paired
        ]
        sse_rel = [
            abs(p["compressed"].sse - p["full"].sse) / max(p["full"].sse, 1e-300)
            for p in paired
        ]
        summary["repetitions"] = len(paired)
        summary["likelihood_gap"] = {
            "max_abs": max(abs(v) for v in gaps),
            "values": gaps,
        }
        summary["solve_speedup"] = statistics.median(
            _ratio(p["full"].solve, p["compressed"].solve) for p in paired
        )
        summary["total_speedup"] = statistics.median(
            _ratio(p["full"].total, p["compressed"].total) for p in paired
        )
        summary["sse_within_1pct"] = sum(v <= 0.01 for v in sse_rel)
    return summary


def run_rate_cell(config: BenchConfig, repetition: int, seed: int) -> RateRecord:
    """
    H^2(f_g_hat, f_g0) * n / (log n)^2 for one compressed fit.

    Integration failures are recorded on the row instead of raised.
    """
    sample = sample_mixture(config.model, config.prior, config.n, seed)
    g, report, _, _ = _timed_fit(config, sample.x, config.J)
    scale = config.n / math.log(config.n) ** 2 if config.n > 1 else math.nan
    try:
        h2 = hellinger_sq(config.model, g, config.prior)
    except NumericalError as e:
        safe_push_log(
            f"❌ Hellinger failed for n={config.n}, repetition {repetition}: {e}"
        )
        return RateRecord(
            n=config.n,
            seed=seed,
            repetition=repetition,
            J=config.J,
            hellinger_sq=math.nan,
            normalized=math.nan,
            certificate_gap=report.certificate_gap,
            error=str(e),
        )
    return RateRecord(
        n=config.n,
        seed=seed,
        repetition=repetition,
        J=config.J,
        hellinger_sq=h2,
        normalized=h2 * scale,
        certificate_gap=report.certificate_gap,
    )


def run_rate(
    config: BenchConfig,
    ns: Sequence[int],
    repetitions: int,
    seed: int = 0,
    on_record: Callable[[RateRecord], None] | None = None,
) -> list[RateRecord]:
    """Every (n, repetition) cell, with seeds seed + repetition shared across n"""
    if not ns or repetitions < 1:
        raise ValidationError("need at least one n and one repetition")
    records = []
    for n in ns:
        cell_config = BenchConfig(
            model=config.model,
            prior=config.prior,
            n=int(n),
            J=config.J,
            grid_size=config.grid_size,
            tol=config.tol,
            options=config.options,
        )
        for r in range(repetitions):
            record = run_rate_cell(cell_config, r, seed + r)
            records.append(record)
            if on_record is not None:
                on_record(record)
        safe_push_log(f"✅ Rate cells done for n={n}")
    return records


def rate_medians(records: Sequence[RateRecord]) -> dict[int, float]:
    """Median normalized H^2 per n, ignoring failed cells"""
    by_n: dict[int, list[float]] = {}
    for r in records:
        if not r.error:
            by_n.setdefault(r.n, []).append(r.normalized)
    return {n: statistics.median(values) for n, values in sorted(by_n.items())}

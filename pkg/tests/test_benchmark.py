"""
Tests for full versus compressed benchmarks (quadnpmle/benchmark.py)

This module tests:
- Record validation and timing accounting
- Paired summaries and speedup ratios
- Single repetitions and repetition loops
- Hellinger rate cells and their medians
"""

import math

import pytest

from quadnpmle.benchmark import (
    FIELDNAMES,
    BenchConfig,
    BenchRecord,
    RateRecord,
    rate_medians,
    run_bench,
    run_rate,
    run_repetition,
    summarize_records,
)
from quadnpmle.errors import IntegrationError, ValidationError
from quadnpmle.models import PointMassPrior, UniformPrior, make_model

GL = make_model("gl")


def record(method="full", repetition=0, solve=1.0, total=1.5, log_lik=-10.0, sse=2.0):
    return BenchRecord(
        method=method,
        n=100,
        J=0 if method == "full" else 10,
        grid_size=50,
        seed=repetition,
        repetition=repetition,
        preprocess=0.1,
        solve=solve,
        total=total,
        log_likelihood=log_lik,
        sse=sse,
        certificate_gap=1e-9,
    )


def small_config(**overrides):
    params = dict(model=GL, prior=UniformPrior(-2, 2), n=400, J=8, grid_size=40)
    params.update(overrides)
    return BenchConfig(**params)


class TestBenchRecord:
    """Tests for BenchRecord validation."""

    def test_total_covers_stages(self):
        """total below preprocess + solve is rejected."""
        with pytest.raises(ValidationError, match="below preprocess"):
            record(solve=1.0, total=0.5)

    def test_unknown_method(self):
        """Only full and compressed are valid methods."""
        with pytest.raises(ValidationError):
            record(method="sketch")

    def test_row_matches_fieldnames(self):
        """to_row() keys follow the CSV column order."""
        assert list(record().to_row()) == FIELDNAMES
        assert record().wall_times == {"preprocess": 0.1, "solve": 1.0, "total": 1.5}


class TestBenchConfig:
    """Tests for BenchConfig validation."""

    @pytest.mark.parametrize("overrides", [{"n": 0}, {"J": 0}])
    def test_invalid(self, overrides):
        """n >= 1 and a compressed order J >= 1 are required."""
        with pytest.raises(ValidationError):
            small_config(**overrides)


class TestSummarize:
    """Tests for summarize_records()."""

    def test_paired_ratios(self):
        """Speedups are medians of per-repetition full / compressed ratios."""
        records = []
        solves = [(1.0, 0.01), (2.0, 0.04), (3.0, 0.1)]
        for r, (full_solve, comp_solve) in enumerate(solves):
            records.append(record("full", r, solve=full_solve, total=full_solve + 0.2))
            records.append(
                record(
                    "compressed",
                    r,
                    solve=comp_solve,
                    total=comp_solve + 0.2,
                    log_lik=-10.1,
                )
            )

        summary = summarize_records(records)

        assert set(summary) == {
            "methods",
            "repetitions",
            "likelihood_gap",
            "solve_speedup",
            "total_speedup",
            "sse_within_1pct",
        }
        assert summary["repetitions"] == 3
        assert summary["solve_speedup"] == pytest.approx(50.0)
        assert summary["likelihood_gap"]["max_abs"] == pytest.approx(0.1)
        assert summary["sse_within_1pct"] == 3
        assert summary["methods"]["full"]["solve"]["median"] == pytest.approx(2.0)

    def test_sse_outside_one_percent(self):
        """A 5% SSE difference is not counted as parity."""
        records = [record("full", sse=2.0), record("compressed", sse=2.1)]
        assert summarize_records(records)["sse_within_1pct"] == 0

    def test_unpaired_records(self):
        """Without pairs only per-method statistics are reported."""
        summary = summarize_records([record("full")])
        assert set(summary) == {"methods"}

    def test_empty(self):
        """No records is an error."""
        with pytest.raises(ValidationError):
            summarize_records([])


class TestRunRepetition:
    """Tests for run_repetition() and run_bench()."""

    def test_one_repetition(self):
        """Both fits score the same data; the full fit is never beaten."""
        full, compressed = run_repetition(small_config(), repetition=0, seed=5)

        assert (full.method, compressed.method) == ("full", "compressed")
        assert (full.J, compressed.J) == (0, 8)
        assert full.n_atoms == 400
        assert compressed.n_atoms == 8
        assert full.seed == compressed.seed == 5
        assert full.converged and compressed.converged
        assert full.log_likelihood >= compressed.log_likelihood - 1e-4
        for r in (full, compressed):
            assert r.total >= r.preprocess + r.solve - 1e-3

    def test_run_bench_flushes_batches(self):
        """on_records sees every repetition; seeds advance by one."""
        batches = []
        records = run_bench(small_config(n=200), 2, seed=7, on_records=batches.append)

        assert len(records) == 4
        assert len(batches) == 2
        assert [r.seed for r in records] == [7, 7, 8, 8]

    def test_seeded_results_repeat(self):
        """The same seed gives the same scores."""
        a = run_repetition(small_config(n=200), 0, 3)
        b = run_repetition(small_config(n=200), 0, 3)

        assert [r.log_likelihood for r in a] == [r.log_likelihood for r in b]
        assert [r.sse for r in a] == [r.sse for r in b]

    def test_invalid_repetitions(self):
        """At least one repetition is required."""
        with pytest.raises(ValidationError):
            run_bench(small_config(), 0)


class TestRate:
    """Tests for run_rate() and rate_medians()."""

    def test_rate_rows(self):
        """One row per (n, repetition) with normalized = H^2 n / (log n)^2."""
        config = small_config(prior=PointMassPrior(0.0), n=300, J=6, grid_size=30)
        seen = []

        records = run_rate(config, [300, 600], 2, seed=1, on_record=seen.append)

        cells = [(r.n, r.repetition) for r in records]
        assert cells == [(300, 0), (300, 1), (600, 0), (600, 1)]
        assert len(seen) == 4
        for r in records:
            assert not r.error
            assert 0.0 <= r.hellinger_sq <= 2.0
            scale = r.n / math.log(r.n) ** 2
            assert r.normalized == pytest.approx(r.hellinger_sq * scale)

    def test_integration_failure_is_recorded(self, mocker):
        """A failed Hellinger integral lands in the error column."""
        mocker.patch(
            "quadnpmle.benchmark.hellinger_sq",
            side_effect=IntegrationError("tolerance missed", estimate=0.1, error=1e-6),
        )
        records = run_rate(small_config(n=200), [200], 1)

        assert records[0].error
        assert math.isnan(records[0].normalized)
        assert rate_medians(records) == {}

    def test_medians_skip_failures(self):
        """Failed cells are left out of the per-n median."""
        records = [
            RateRecord(
                n=100, seed=0, repetition=0, J=5, hellinger_sq=0.1, normalized=1.0
            ),
            RateRecord(
                n=100, seed=1, repetition=1, J=5, hellinger_sq=0.3, normalized=3.0
            ),
            RateRecord(
                n=100,
                seed=2,
                repetition=2,
                J=5,
                hellinger_sq=math.nan,
                normalized=math.nan,
                error="failed",
            ),
            RateRecord(
                n=50, seed=0, repetition=0, J=5, hellinger_sq=0.2, normalized=2.0
            ),
        ]

        assert rate_medians(records) == {50: 2.0, 100: 2.0}

    def test_invalid(self):
        """An empty n list is rejected."""
        with pytest.raises(ValidationError):
            run_rate(small_config(), [], 1)


@pytest.mark.slow
class TestAcceptanceBenchmark:
    """Acceptance-scale runs on Uniform[-2, 2] Gaussian location data."""

    @pytest.mark.performance
    def test_speedup(self):
        """n = 1e5, J = 25, 300-point grid: solve >= 50x, end-to-end >= 5x."""
        config = BenchConfig(model=GL, prior=UniformPrior(-2, 2), n=100_000, J=25)
        summary = summarize_records(run_bench(config, 10, seed=0))

        solve, total = summary["solve_speedup"], summary["total_speedup"]
        assert solve >= 50, f"solve speedup {solve:.1f}"
        assert total >= 5, f"total speedup {total:.1f}"
        assert summary["likelihood_gap"]["max_abs"] <= 0.5

    def test_sse_parity(self):
        """n = 1e4: compressed SSE within 1% of the full fit in 9 of 10 runs."""
        config = BenchConfig(model=GL, prior=UniformPrior(-2, 2), n=10_000, J=25)
        summary = summarize_records(run_bench(config, 10, seed=100))

        assert summary["sse_within_1pct"] >= 9
        assert summary["likelihood_gap"]["max_abs"] <= 0.5

    def test_rate_scaling(self):
        """Median n H^2 / (log n)^2 at n = 3e4 is at most twice its n = 1e3 value."""
        config = BenchConfig(model=GL, prior=UniformPrior(-2, 2), n=1000, J=25)
        records = run_rate(config, [1000, 3000, 10_000, 30_000], 10, seed=0)
        medians = rate_medians(records)

        assert len(records) == 40
        assert medians[30_000] <= 2 * medians[1000], f"medians {medians}"

"""
Command-line interface for quadnpmle.

    quadnpmle simulate   draw mixture data (x, optional s2) plus latent theta
    quadnpmle compress   build the quadrature rule for a data file
    quadnpmle plan       order J_n, support bound and solver tolerance
    quadnpmle fit        full or compressed NPMLE (--hetero for x,s2 data)
    quadnpmle eval       densities and posterior means from a fit JSON
    quadnpmle bench      full vs compressed fits over repetitions
    quadnpmle rate       normalized Hellinger distance across sample sizes

Logs go to stderr. Tables and JSON go to --output, or stdout when omitted.
Flags override the --config file, which overrides the environment.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from quadnpmle import __version__
from quadnpmle.benchmark import (
    FIELDNAMES,
    RATE_FIELDNAMES,
    BenchConfig,
    BenchRecord,
    RateRecord,
    rate_medians,
    run_bench,
    run_rate,
    summarize_records,
)
from quadnpmle.compression import compress, empirical_measure
from quadnpmle.config import (
    ALGORITHMS,
    GRID_MODES,
    Settings,
    get_settings,
    print_config_summary,
)
from quadnpmle.constants import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION
from quadnpmle.errors import NumericalError, ValidationError
from quadnpmle.estimators import log_likelihood, mixture_density, posterior_means
from quadnpmle.hetero import (
    fit_hetero,
    hetero_density,
    hetero_log_likelihood,
    hetero_metadata,
    hetero_posterior_mean,
    sample_hetero,
    validate_observations,
)
from quadnpmle.io_utils import read_observations, write_observations, write_rows
from quadnpmle.json_utils import dumps, load_json_strict, safe_save_json
from quadnpmle.logs_utils import (
    log_timing,
    log_title,
    register_main_push_log,
    safe_push_log,
    set_debug,
)
from quadnpmle.models import (
    ExpFamilyModel,
    ModelKind,
    PointMassPrior,
    Prior,
    UniformPrior,
    make_model,
    sample_mixture,
)
from quadnpmle.solver import (
    FitOptions,
    FitReport,
    GridOptions,
    MixingDistribution,
    fit_compressed,
)
from quadnpmle.theory import (
    TheoryConstants,
    below_numeric_floor,
    hetero_delta_n,
    jn_hetero,
    jn_hetero_exact,
    jn_theorem1,
    kappa_sup,
    solver_tolerance_for,
    support_bound,
)

PLOT_POINTS = 200


# === Context ===


@dataclass(frozen=True)
class RunContext:
    """Flags merged over settings, shared by every subcommand."""

    settings: Settings
    model: ExpFamilyModel
    order: int
    seed: int
    deterministic: bool
    grid: GridOptions
    options: FitOptions
    output: Path | None

    @property
    def tol(self) -> float:
        return self.options.tol


def _pick(flag: Any, setting: Any) -> Any:
    return setting if flag is None else flag


def _radius(args: argparse.Namespace) -> float:
    """--m-radius, or inf where the family allows an unbounded parameter set"""
    if args.m_radius is not None:
        return args.m_radius
    if ModelKind(args.model) is ModelKind.SCALED_CHI_SQUARE:
        bound = "nu/(2 sigma2)"
        if args.nu is not None and args.sigma2 is not None and args.sigma2 > 0:
            bound = f"{args.nu / (2.0 * args.sigma2):g}"
        raise ValidationError(f"--m-radius is required for sc and must be < {bound}")
    return math.inf


def _context(args: argparse.Namespace, settings: Settings) -> RunContext:
    params = {"nu": args.nu, "sigma2": args.sigma2}
    model = make_model(args.model, params, _radius(args))
    interval = tuple(args.grid_interval) if args.grid_interval else None
    options = FitOptions(
        tol=_pick(args.tol, settings.SOLVER_TOL),
        max_em=settings.MAX_EM,
        max_exchange=settings.MAX_EXCHANGE,
        exchange_every=settings.EXCHANGE_EVERY,
        algorithm=_pick(args.algorithm, settings.ALGORITHM),
    )
    return RunContext(
        settings=settings,
        model=model,
        order=_pick(args.order, settings.DEFAULT_ORDER),
        seed=_pick(args.seed, settings.SEED),
        deterministic=args.deterministic or settings.DETERMINISTIC,
        grid=GridOptions(
            grid_size=_pick(args.grid_size, settings.GRID_SIZE),
            mode=_pick(args.grid_mode, settings.GRID_MODE),
            interval=interval,
        ),
        options=options,
        output=Path(args.output) if args.output else None,
    )


def _prior(args: argparse.Namespace, settings: Settings) -> Prior:
    if args.prior == "point":
        return PointMassPrior(args.point)
    low = _pick(args.prior_low, settings.PRIOR_LOW)
    return UniformPrior(low, _pick(args.prior_high, settings.PRIOR_HIGH))


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(
            f"{what} must be comma-separated numbers, got {text!r}"
        ) from None
    if not values:
        raise ValidationError(f"{what} is empty")
    return values


def _parse_ints(text: str, what: str) -> list[int]:
    values = _parse_floats(text, what)
    if any(not v.is_integer() or v < 1 for v in values):
        raise ValidationError(f"{what} must be positive integers")
    return [int(v) for v in values]


# === Output helpers ===


def _emit_json(data: Mapping[str, Any], output: Path | None) -> None:
    if output is None:
        print(dumps(dict(data)))
        return
    if not safe_save_json(output, dict(data)):
        raise ValidationError(f"Could not write {output}")
    safe_push_log(f"✅ Wrote {output}")


def _emit_rows(
    fieldnames: list[str], rows: Iterable[Mapping[str, Any]], output: Path | None
) -> None:
    if output is None:
        writer = csv.DictWriter(sys.stdout, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
        return
    write_rows(output, fieldnames, rows)
    safe_push_log(f"✅ Wrote {output}")


def _fit_payload(
    model_info: Mapping[str, Any],
    g: MixingDistribution,
    report: FitReport,
    log_lik: float,
) -> dict[str, Any]:
    report.extra["log_likelihood"] = log_lik
    return {
        "version": __version__,
        "model": dict(model_info),
        "mixing": g.to_dict(),
        "report": report.to_dict(),
    }


def _plot_points(model: ExpFamilyModel, x: np.ndarray) -> np.ndarray:
    if model.kind is ModelKind.POISSON_UNIT:
        return np.arange(0.0, float(x.max()) + 1.0)
    lo, hi = float(x.min()), float(x.max())
    if model.kind is ModelKind.SCALED_CHI_SQUARE:
        lo = max(lo, hi * 1e-6)
    return np.linspace(lo, hi, PLOT_POINTS) if hi > lo else np.array([lo])


# === Subcommands ===


def cmd_simulate(args: argparse.Namespace, ctx: RunContext) -> int:
    n = _pick(args.n, ctx.settings.BENCH_N)
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    prior = _prior(args, ctx.settings)
    output = ctx.output or ctx.settings.OUTPUT_FOLDER / "simulated.csv"
    latent = output.with_name(f"{output.stem}_latent.csv")
    if args.latent:
        latent = Path(args.latent)

    if args.hetero:
        if ctx.model.kind is not ModelKind.GAUSSIAN_LOCATION:
            raise ValidationError("--hetero simulates Gaussian data; use --model gl")
        variances = _parse_floats(args.variances, "--variances")
        sample = sample_hetero(prior, variances, n, ctx.seed)
        write_observations(output, sample.x, s2=sample.s2)
    else:
        sample = sample_mixture(ctx.model, prior, n, ctx.seed)
        write_observations(output, sample.x)
    write_rows(latent, ["theta"], ({"theta": repr(float(t))} for t in sample.theta))
    safe_push_log(f"✅ Simulated {n} observations -> {output} (latent: {latent.name})")
    return EXIT_OK


def cmd_compress(args: argparse.Namespace, ctx: RunContext) -> int:
    obs = read_observations(args.input)
    if args.hetero:
        if obs.s2 is None:
            raise ValidationError("--hetero needs an s2 column")
        hetero = validate_observations(obs.x, obs.s2, ctx.settings.HETERO_T0)
        order = _pick(args.order, ctx.settings.HETERO_ORDER)
        measure = empirical_measure(hetero.pairs())
        rule = compress(measure, order, moment_tol=ctx.settings.MOMENT_TOL)
    else:
        x = ctx.model.check_support(obs.x)
        rule = compress(
            x,
            ctx.order,
            ctx.model,
            max_order=ctx.settings.MAX_ORDER,
            moment_tol=ctx.settings.MOMENT_TOL,
        )
    safe_push_log(
        f"🗜️ {len(obs)} observations -> {rule.measure.size} atoms "
        f"({rule.construction.value}, max residual {rule.max_residual:.2e})"
    )
    _emit_json(rule.to_dict(), ctx.output)
    return EXIT_OK


def cmd_plan(args: argparse.Namespace, ctx: RunContext) -> int:
    if args.input:
        x = np.abs(read_observations(args.input).x)
        n = _pick(args.n, x.size)
        x_abs = _pick(args.x_abs_max, float(x.max()))
    else:
        if args.n is None or args.x_abs_max is None:
            raise ValidationError("plan needs --input or both --n and --x-abs-max")
        n, x_abs = args.n, args.x_abs_max

    constants = TheoryConstants.for_model(
        ctx.model,
        C_universal=ctx.settings.THEORY_C,
        C_T0=ctx.settings.THEORY_C_T0,
        gamma=args.gamma,
    )
    delta_n = _pick(args.delta, float(n) ** (-constants.gamma))
    M_n = support_bound(ctx.model, x_abs)
    ksup = kappa_sup(ctx.model, M_n)
    J_n = jn_theorem1(x_abs, M_n, ksup, delta_n, n, constants.C_universal)
    tol = solver_tolerance_for(delta_n, n)

    plan: dict[str, Any] = {
        "model": ctx.model.to_dict(),
        "scenario": ctx.model.scenario,
        "n": n,
        "X_abs_max": x_abs,
        "M_n": M_n,
        "kappa_sup": ksup,
        "delta_n": delta_n,
        "J_n": J_n,
        "J_used": min(J_n, ctx.settings.MAX_ORDER),
        "solver_tolerance": tol,
        "tolerance_below_floor": below_numeric_floor(tol),
        "constants": constants.to_dict(),
    }
    if args.hetero:
        T0 = ctx.settings.HETERO_T0
        plan["hetero"] = {
            **hetero_metadata(T0),
            "J_n": jn_hetero(x_abs, ctx.model.M, T0, constants.gamma, n, constants.C_T0),
            "J_exact": jn_hetero_exact(
                x_abs, ctx.model.M, T0, constants.gamma, n, constants.C_T0
            ),
            "delta_n": hetero_delta_n(x_abs, ctx.model.M, T0),
        }
    if J_n > ctx.settings.MAX_ORDER:
        safe_push_log(f"⚠️ J_n = {J_n} exceeds MAX_ORDER; fits would use {plan['J_used']}")
    _emit_json(plan, ctx.output)
    return EXIT_OK


def _write_fit_plot_data(
    folder: Path, model: ExpFamilyModel | None, g: MixingDistribution, x: np.ndarray
) -> None:
    rows = ({"theta": t, "weight": w} for t, w in zip(g.grid, g.weights))
    write_rows(folder / "mixing.csv", ["theta", "weight"], rows)
    if model is not None:
        points = _plot_points(model, x)
        density = np.atleast_1d(mixture_density(model, g, points))
        rows = ({"x": p, "density": d} for p, d in zip(points, density))
        write_rows(folder / "density.csv", ["x", "density"], rows)
    safe_push_log(f"📈 Plot data written to {folder}")


def cmd_fit(args: argparse.Namespace, ctx: RunContext) -> int:
    obs = read_observations(args.input)
    log_title(f"Fitting {len(obs)} observations")

    if args.hetero:
        if obs.s2 is None:
            raise ValidationError("--hetero needs an s2 column")
        T0 = ctx.settings.HETERO_T0
        g, report, _ = fit_hetero(
            obs.x,
            obs.s2,
            J=_pick(args.order, ctx.settings.HETERO_ORDER),
            grid_options=ctx.grid,
            tol=ctx.tol,
            T0=T0,
            M=ctx.model.M,
            options=ctx.options,
            moment_tol=ctx.settings.MOMENT_TOL,
        )
        log_lik = hetero_log_likelihood(g, obs.x, 1.0 / obs.s2)
        payload = _fit_payload(hetero_metadata(T0), g, report, log_lik)
        plot_model = None
    else:
        g, report, _ = fit_compressed(
            ctx.model,
            obs.x,
            ctx.order,
            ctx.grid,
            tol=ctx.tol,
            delta_n=args.delta,
            options=ctx.options,
            max_order=ctx.settings.MAX_ORDER,
            moment_tol=ctx.settings.MOMENT_TOL,
        )
        log_lik = log_likelihood(ctx.model, g, obs.x)
        payload = _fit_payload(ctx.model.to_dict(), g, report, log_lik)
        plot_model = ctx.model

    for stage, seconds in report.wall_times.items():
        log_timing(stage, seconds)
    safe_push_log(
        f"{'✅' if report.converged else '⚠️'} log-likelihood {log_lik:.6f}, "
        f"certificate {report.certificate_gap:.2e}"
    )
    _emit_json(payload, ctx.output)
    if args.plot_data:
        _write_fit_plot_data(Path(args.plot_data), plot_model, g, obs.x)
    return EXIT_OK if report.converged else EXIT_NUMERICAL


def cmd_eval(args: argparse.Namespace, ctx: RunContext) -> int:
    fitted = load_json_strict(args.fit)
    try:
        g = MixingDistribution.from_dict(fitted["mixing"])
        model_info = fitted["model"]
    except (KeyError, TypeError) as e:
        raise ValidationError(f"{args.fit}: not a fit output ({e})") from None
    obs = read_observations(args.input)

    if model_info.get("model") == "hetero":
        if obs.s2 is None:
            raise ValidationError("hetero fits need an s2 column to evaluate")
        tau = 1.0 / obs.s2
        density = np.atleast_1d(hetero_density(g, obs.x, tau))
        means = np.atleast_1d(hetero_posterior_mean(g, obs.x, tau))
    else:
        model = ExpFamilyModel.from_dict(model_info)
        density = np.atleast_1d(mixture_density(model, g, obs.x))
        means = posterior_means(model, g, obs.x)

    fieldnames = ["x", "density", "posterior_mean"]
    if obs.theta is not None:
        fieldnames += ["theta", "squared_error"]

    def rows() -> Iterable[dict[str, Any]]:
        for i in range(len(obs)):
            row = {
                "x": repr(float(obs.x[i])),
                "density": repr(float(density[i])),
                "posterior_mean": repr(float(means[i])),
            }
            if obs.theta is not None:
                row["theta"] = repr(float(obs.theta[i]))
                row["squared_error"] = repr(float((obs.theta[i] - means[i]) ** 2))
            yield row

    _emit_rows(fieldnames, rows(), ctx.output)
    if obs.theta is not None:
        safe_push_log(f"📊 SSE {math.fsum((obs.theta - means) ** 2):.6f}")
    return EXIT_OK


def _bench_config(args: argparse.Namespace, ctx: RunContext, n: int) -> BenchConfig:
    return BenchConfig(
        model=ctx.model,
        prior=_prior(args, ctx.settings),
        n=n,
        J=ctx.order,
        grid_size=ctx.grid.grid_size,
        tol=ctx.tol,
        options=ctx.options,
    )


def _write_bench_plot_data(folder: Path, records: Sequence[BenchRecord]) -> None:
    base = ["repetition", "method"]
    rows = [r.to_row() for r in records]
    write_rows(folder / "plot_time.csv", base + ["preprocess", "solve", "total"], rows)
    write_rows(folder / "plot_loglik.csv", base + ["log_likelihood"], rows)
    write_rows(folder / "plot_sse.csv", base + ["sse"], rows)


def cmd_bench(args: argparse.Namespace, ctx: RunContext) -> int:
    n = _pick(args.n, ctx.settings.BENCH_N)
    repetitions = _pick(args.repetitions, ctx.settings.BENCH_REPETITIONS)
    config = _bench_config(args, ctx, n)
    folder = ctx.output or ctx.settings.OUTPUT_FOLDER / "bench"
    records_path = folder / "records.csv"
    records_path.unlink(missing_ok=True)

    parallel = args.parallel and not ctx.deterministic
    if args.parallel and ctx.deterministic:
        safe_push_log("🔒 Deterministic mode: repetitions run sequentially")
    log_title(f"Benchmark: n={n}, J={config.J}, grid={config.grid_size}, R={repetitions}")

    def flush(batch: list[BenchRecord]) -> None:
        write_rows(records_path, FIELDNAMES, [r.to_row() for r in batch], append=True)

    records = run_bench(
        config, repetitions, ctx.seed, parallel=parallel, on_records=flush
    )
    summary = summarize_records(records)
    safe_save_json(folder / "summary.json", summary)
    _write_bench_plot_data(folder, records)
    safe_push_log(
        f"✅ Solve speedup {summary['solve_speedup']:.1f}x, "
        f"end-to-end {summary['total_speedup']:.1f}x, "
        f"max |gap| {summary['likelihood_gap']['max_abs']:.4f}"
    )
    print(dumps(summary))
    return EXIT_OK


def cmd_rate(args: argparse.Namespace, ctx: RunContext) -> int:
    ns = _parse_ints(args.ns, "--ns")
    repetitions = _pick(args.repetitions, ctx.settings.BENCH_REPETITIONS)
    config = _bench_config(args, ctx, ns[0])
    folder = ctx.output or ctx.settings.OUTPUT_FOLDER / "rate"
    table = folder / "rate.csv"
    table.unlink(missing_ok=True)

    def flush(record: RateRecord) -> None:
        write_rows(table, RATE_FIELDNAMES, [record.to_row()], append=True)

    records = run_rate(config, ns, repetitions, ctx.seed, on_record=flush)
    medians = rate_medians(records)
    failed = sum(1 for r in records if r.error)
    result = {
        "table": str(table),
        "rows": len(records),
        "failed": failed,
        "medians": medians,
    }
    print(dumps(result))
    if failed:
        safe_push_log(f"❌ {failed} rate cells failed; see the error column in {table}")
        return EXIT_NUMERICAL
    return EXIT_OK


# === Parser ===


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("model and run options")
    group.add_argument("--model", choices=[k.value for k in ModelKind], default="gl")
    group.add_argument("--nu", type=float, default=None, help="Degrees of freedom (sc)")
    group.add_argument("--sigma2", type=float, default=None, help="Scale (sc)")
    group.add_argument(
        "--m-radius",
        type=float,
        default=None,
        help="Support radius M (default: inf; required for sc, below nu/(2 sigma2))",
    )
    group.add_argument("--input", default=None, help="Input CSV (column x, optional s2, theta)")
    group.add_argument("--output", default=None, help="Output file or folder")
    group.add_argument("--seed", type=int, default=None)
    group.add_argument(
        "--deterministic", action="store_true", help="Serial reductions, no parallel runs"
    )
    group.add_argument("--order", type=int, default=None, help="Quadrature order J (0 = full)")
    group.add_argument("--grid-size", type=int, default=None)
    group.add_argument("--grid-mode", choices=GRID_MODES, default=None)
    group.add_argument(
        "--grid-interval", type=float, nargs=2, metavar=("LO", "HI"), default=None
    )
    group.add_argument("--tol", type=float, default=None, help="Certificate tolerance")
    group.add_argument("--algorithm", choices=ALGORITHMS, default=None)
    group.add_argument("--config", default=None, help="Flat KEY=VALUE config file")
    group.add_argument("--debug", action="store_true")
    return common


def _add_prior_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--prior", choices=("uniform", "point"), default="uniform")
    parser.add_argument("--prior-low", type=float, default=None)
    parser.add_argument("--prior-high", type=float, default=None)
    parser.add_argument("--point", type=float, default=0.0, help="Atom of the point prior")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadnpmle",
        description="NPMLE for exponential family mixtures with moment-matching compression",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()

    p = sub.add_parser("simulate", parents=[common], help="Simulate mixture data")
    p.add_argument("--n", type=int, default=None)
    _add_prior_options(p)
    p.add_argument("--hetero", action="store_true", help="Heteroscedastic Gaussian data")
    p.add_argument("--variances", default="0.5,1,2", help="Comma-separated s2 choices")
    p.add_argument("--latent", default=None, help="Latent theta CSV path")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("compress", parents=[common], help="Compress a data file")
    p.add_argument("--hetero", action="store_true", help="Tchakaloff on (x, 1/s2)")
    p.set_defaults(handler=cmd_compress, needs_input=True)

    p = sub.add_parser("plan", parents=[common], help="Order and tolerance prescription")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--x-abs-max", type=float, default=None)
    p.add_argument("--delta", type=float, default=None, help="Target gap (default n^-gamma)")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--hetero", action="store_true")
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("fit", parents=[common], help="Fit the NPMLE")
    p.add_argument("--hetero", action="store_true", help="Input has x,s2 columns")
    p.add_argument("--delta", type=float, default=None, help="Set tol to delta / (2n)")
    p.add_argument("--plot-data", default=None, help="Folder for mixing/density CSVs")
    p.set_defaults(handler=cmd_fit, needs_input=True)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a fitted model")
    p.add_argument("--fit", required=True, help="Fit JSON written by 'fit'")
    p.set_defaults(handler=cmd_eval, needs_input=True)

    p = sub.add_parser("bench", parents=[common], help="Full vs compressed benchmark")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--parallel", action="store_true", help="Repetitions in worker processes")
    _add_prior_options(p)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("rate", parents=[common], help="Hellinger rate table")
    p.add_argument("--ns", default="1000,3000,10000,30000")
    p.add_argument("--repetitions", type=int, default=None)
    _add_prior_options(p)
    p.set_defaults(handler=cmd_rate)
    return parser


def _stderr_sink(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_VALIDATION

    register_main_push_log(_stderr_sink)
    if args.debug:
        set_debug(True)
    try:
        settings = get_settings(args.config)
        if args.debug or settings.DEBUG:
            print_config_summary(settings)
        if getattr(args, "needs_input", False) and not args.input:
            raise ValidationError(f"'{args.command}' needs --input")
        return args.handler(args, _context(args, settings))
    except ValidationError as e:
        safe_push_log(f"❌ {e}")
        return EXIT_VALIDATION
    except NumericalError as e:
        safe_push_log(f"❌ {e}")
        if e.diagnostics:
            safe_push_log(f"   diagnostics: {e.diagnostics}")
        return EXIT_NUMERICAL
    finally:
        set_debug(None)
        register_main_push_log(None)


if __name__ == "__main__":
    sys.exit(main())

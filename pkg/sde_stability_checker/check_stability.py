#!/usr/bin/env python3
"""
Command-line entry point for the SDE stability laboratory.
Exits 1 when an assumption, property or rate verdict fails.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, Final, List, NoReturn, Optional, Sequence, Tuple

import numpy as np

from .artifacts import ArtifactWriter, RunManifest, Stopwatch
from .coeffs import AssumptionReport, GridSpec, SdePair, check_assumptions
from .config import (
    ExperimentConfig,
    ExperimentKind,
    config_hash,
    config_to_dict,
    default_config,
    load_config,
    tolerance_profile,
)
from .errors import ConfigurationError, DomainError, PreconditionError
from .mollify import drift_distance_bound, mollification_distance_bound, mollify
from .parametrix import MonteCarloSpec, ParametrixModel, certify_gaussian_bound, inequality_micro_suite
from .rate_lab import (
    RATES_CSV_HEADER,
    ErrorKind,
    RateExperimentConfig,
    Verdict,
    key_estimate_ladder,
    perturbed_pair,
    run_stability_experiment,
)
from .sde_sim import (
    MIN_KDE_SAMPLES,
    BvFunction,
    GridDoublingDiagnostic,
    bv_error,
    grid_doubling_diagnostic,
    pth_moment_sup_error,
    simulate_pair,
    stopped_error,
    terminal_error_estimate,
)
from .weighted_norm import EPSILON_CSV_HEADER, EpsilonReport, epsilon_p
from .yw_functions import YwShape, validate_properties, yw_params

logger = logging.getLogger(__name__)

EXIT_OK: Final[int] = 0
EXIT_FAILED: Final[int] = 1
EXIT_USAGE: Final[int] = 2
EXIT_INTERRUPTED: Final[int] = 130
SEPARATOR: Final[str] = "-" * 60
RECORD_CHOICES: Final[Tuple[str, ...]] = ("terminal", "sup", "full-paths")

Outcome = Tuple[bool, Optional[GridDoublingDiagnostic]]
Runner = Callable[[ExperimentConfig, ArtifactWriter], Outcome]


class _ArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; raise instead so main() owns the exit code."""

    def error(self, message: str) -> NoReturn:
        raise ConfigurationError(message, "argv")


def _int_list(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def _y_grid(text: str) -> Tuple[float, float, int]:
    parts = text.split(",")
    try:
        if len(parts) != 3:
            raise ValueError
        return float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start,stop,count, got '{text}'") from None


def parse_arguments(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = _ArgumentParser(
        prog="check-sde-stability",
        description="Check assumptions, norms and convergence rates of perturbed one-dimensional SDEs",
    )
    parser.add_argument("command", choices=[k.value for k in ExperimentKind], help="Experiment to run")
    parser.add_argument("--config", type=Path, help="Path to a JSON experiment configuration")
    parser.add_argument("--seed", type=int, help="Master seed (unsigned 64-bit)")
    parser.add_argument("--workers", type=int, help="Worker threads for simulation and Monte Carlo")
    parser.add_argument("--out", type=Path, help="Output directory for results and the manifest")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    parser.add_argument("--steps", type=int, help="Euler steps per path (power of two)")
    parser.add_argument("--paths", type=int, help="Number of simulated paths")
    parser.add_argument(
        "--record", action="append", choices=RECORD_CHOICES, help="Per-path quantities to keep (repeatable)"
    )
    parser.add_argument("--p", type=float, help="Moment order p >= 1")
    parser.add_argument("--n", type=int, help="Mollification level for the mollify command")
    parser.add_argument("--ladder", type=_int_list, help="Mollification ladder, e.g. 2,4,8,16,32")
    parser.add_argument("--error-kind", choices=[k.value for k in ErrorKind], help="Error functional for rates")
    parser.add_argument("--delta", type=float, help="Yamada-Watanabe delta > 1")
    parser.add_argument("--kappa", type=float, help="Yamada-Watanabe kappa in (0, 1)")
    parser.add_argument("--shape", choices=[s.value for s in YwShape], help="Yamada-Watanabe psi shape")
    parser.add_argument("--t", type=float, help="Time of the density estimate")
    parser.add_argument("--y-grid", type=_y_grid, help="Density grid as start,stop,count")
    parser.add_argument("--order", type=int, help="Parametrix truncation order")
    return parser.parse_args(argv)


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Configuration file (or defaults) with command-line flags applied on top."""
    kind = ExperimentKind(args.command)
    cfg = load_config(args.config) if args.config else default_config(kind)
    if cfg.experiment.kind is not kind:
        logger.info("configuration describes '%s'; running '%s'", cfg.experiment.kind.value, kind.value)

    record = cfg.plan.record
    if args.record:
        record = replace(
            record,
            terminal="terminal" in args.record,
            sup="sup" in args.record,
            full_paths="full-paths" in args.record,
        )
    plan = replace(
        cfg.plan,
        seed=cfg.plan.seed if args.seed is None else args.seed,
        steps=cfg.plan.steps if args.steps is None else args.steps,
        paths=cfg.plan.paths if args.paths is None else args.paths,
        record=record,
    )

    e = cfg.experiment
    experiment = replace(
        e,
        kind=kind,
        p=e.p if args.p is None else args.p,
        mollify_n=e.mollify_n if args.n is None else args.n,
        n_ladder=e.n_ladder if args.ladder is None else args.ladder,
        error_kind=ErrorKind(args.error_kind) if args.error_kind else e.error_kind,
        delta=e.delta if args.delta is None else args.delta,
        kappa=e.kappa if args.kappa is None else args.kappa,
        yw_shape=YwShape(args.shape) if args.shape else e.yw_shape,
        t=e.t if args.t is None else args.t,
        y_grid=args.y_grid or e.y_grid,
        order=e.order if args.order is None else args.order,
    )
    output = replace(cfg.output, directory=str(args.out)) if args.out else cfg.output
    workers = cfg.workers if args.workers is None else args.workers
    if workers < 1:
        raise ConfigurationError("must be >= 1", "--workers")
    return replace(cfg, plan=plan, experiment=experiment, output=output, workers=workers)


def rate_experiment(cfg: ExperimentConfig, pair: SdePair) -> RateExperimentConfig:
    e = cfg.experiment
    record = cfg.plan.record
    return RateExperimentConfig(
        base_pair=pair,
        n_ladder=e.n_ladder,
        p=e.p,
        plan=cfg.plan,
        error_kind=e.error_kind,
        stopping_rule=record.stopping_rules[0] if record.stopping_rules else None,
        bv_function=record.bv_functions[0] if record.bv_functions else BvFunction.heaviside(),
        bv_power=e.bv_power,
        slope_tolerance=e.slope_tolerance,
        quadrature=cfg.quadrature,
        common_random_numbers=e.common_random_numbers,
        workers=cfg.workers,
        grid_doubling=e.grid_doubling,
    )


def _grid(cfg: ExperimentConfig) -> GridSpec:
    e = cfg.experiment
    return GridSpec(
        points=e.check_points,
        radius=cfg.quadrature.truncation_radius,
        n_pairs=e.check_pairs,
        seed=cfg.plan.seed,
    )


def _status(passed: bool) -> str:
    return "PASS" if passed else "FAIL"


def _print_conditions(report: AssumptionReport) -> None:
    for c in report.conditions:
        measured = "n/a" if c.measured is None else f"{c.measured:.6g}"
        declared = "n/a" if c.declared is None else f"{c.declared:.6g}"
        print(f"{_status(c.passed)}: {c.name:8s} measured {measured}, declared {declared} {c.detail}".rstrip())


def _conditions_payload(report: AssumptionReport) -> Dict[str, object]:
    return {
        "p": report.p,
        "passed": report.passed,
        "conditions": [
            {
                "name": c.name,
                "passed": c.passed,
                "measured": c.measured,
                "declared": c.declared,
                "witness": list(c.witness),
                "detail": c.detail,
            }
            for c in report.conditions
        ],
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def run_check(cfg: ExperimentConfig, writer: ArtifactWriter) -> Outcome:
    pair = cfg.build_pair()
    print(f"CHECK: assumptions of the coefficient pair at p = {cfg.experiment.p:g}")
    print(SEPARATOR)
    report = check_assumptions(pair, cfg.experiment.p, _grid(cfg))
    _print_conditions(report)
    writer.write_json("check.json", _conditions_payload(report))
    return report.passed, None


def run_mollify(cfg: ExperimentConfig, writer: ArtifactWriter) -> Outcome:
    pair = cfg.build_pair()
    n, p = cfg.experiment.mollify_n, cfg.experiment.p
    drift, diffusion = pair.exact.drift, pair.exact.diffusion
    drift_n = mollify(drift, n, cfg.quadrature)
    diffusion_n = mollify(diffusion, n, cfg.quadrature)
    mollified = pair.with_perturbation(drift_n, diffusion_n)
    measure = cfg.build_measure(pair)
    print(f"CHECK: mollification at n = {n}")
    print(SEPARATOR)

    x = pair.standard_grid(points=2001, radius=1.0)
    writer.write_csv(
        "mollify.csv",
        ("x", "drift", "drift_n", "diffusion", "diffusion_n"),
        (
            tuple(f"{v:.12g}" for v in row)
            for row in zip(x, drift(x), drift_n(x), diffusion(x), diffusion_n(x), strict=True)
        ),
    )
    report = check_assumptions(mollified, p, _grid(cfg))
    _print_conditions(report)
    distances = epsilon_p(mollified, p, measure, cfg.quadrature)
    drift_bound = drift_distance_bound(drift, p, measure)
    diffusion_bound = (
        mollification_distance_bound(diffusion, n, p, measure) if diffusion.holder_eta is not None else None
    )
    within = distances.drift_distance <= drift_bound * (1 + 1e-9) and (
        diffusion_bound is None or distances.diffusion_distance <= diffusion_bound * (1 + 1e-9)
    )
    print(f"{_status(within)}: distances {distances.drift_distance:.6g} (bound {drift_bound:.6g}), "
          f"{distances.diffusion_distance:.6g} (bound {diffusion_bound})")
    writer.write_json(
        "mollify.json",
        {
            "n": n,
            "assumptions": _conditions_payload(report),
            "drift_distance": distances.drift_distance,
            "drift_bound": drift_bound,
            "diffusion_distance": distances.diffusion_distance,
            "diffusion_bound": diffusion_bound,
            "within_bounds": within,
        },
    )
    return report.passed and within, None


def run_norm(cfg: ExperimentConfig, writer: ArtifactWriter) -> Outcome:
    pair = cfg.build_pair()
    measure = cfg.build_measure(pair)
    p = cfg.experiment.p
    rows: List[Tuple[str, EpsilonReport]] = []
    if pair.is_identical:
        rate_cfg = rate_experiment(cfg, pair)
        for n in cfg.experiment.n_ladder:
            rows.append((str(n), epsilon_p(perturbed_pair(rate_cfg, n), p, measure, cfg.quadrature)))
    else:
        rows.append(("", epsilon_p(pair, p, measure, cfg.quadrature)))
    print(f"CHECK: weighted distances at p = {p:g} (x0 = {measure.x0:g}, lambda = {measure.lam:g}, T = {measure.T:g})")
    print(SEPARATOR)
    for n, r in rows:
        label = f"n = {n}: " if n else ""
        print(f"INFO: {label}epsilon_{p:g} = {r.epsilon:.6g} (A-({p:g}) {'met' if r.meets_assumption else 'violated'})")
    writer.write_csv("epsilon.csv", ("n", *EPSILON_CSV_HEADER), ((n, *r.csv_row()) for n, r in rows))
    return all(r.meets_assumption for _, r in rows), None


def run_yw_validate(cfg: ExperimentConfig, writer: ArtifactWriter) -> Outcome:
    e = cfg.experiment
    params = yw_params(e.delta, e.kappa, e.yw_shape)
    drift = cfg.build_pair().exact.drift
    report = validate_properties(
        params,
        grid_points=e.check_points,
        drift=drift if drift.osl_L is not None else None,
        seed=cfg.plan.seed,
    )
    print(f"CHECK: penalty function with delta = {e.delta:g}, kappa = {e.kappa:g} ({e.yw_shape.value})")
    print(SEPARATOR)
    for r in report.properties:
        print(f"{_status(r.passed)}: {r.name:9s} worst excess {r.worst:.3g}")
    writer.write_json(
        "yw.json",
        {
            "delta": e.delta,
            "kappa": e.kappa,
            "shape": e.yw_shape.value,
            "mu": report.mu,
            "c": report.c,
            "passed": report.passed,
            "properties": [
                {"name": r.name, "passed": r.passed, "worst": r.worst, "witness": r.witness} for r in report.properties
            ],
        },
    )
    return report.passed, None


def run_density(cfg: ExperimentConfig, writer: ArtifactWriter) -> Outcome:
    e = cfg.experiment
    pair = cfg.build_pair()
    model = ParametrixModel.from_pair(pair)
    spec = MonteCarloSpec(
        samples=e.mc_samples,
        max_samples=8 * e.mc_samples,
        chunk_size=min(20_000, e.mc_samples),
        seed=cfg.plan.seed,
        workers=cfg.workers,
        max_order=max(e.order, 0),
    )
    print(f"CHECK: parametrix density at t = {e.t:g} up to order {e.order}")
    print(SEPARATOR)
    start, stop, count = e.y_grid
    rows = []
    for y in np.linspace(start, stop, count):
        est = model.density_estimate(e.t, float(y), pair.x0, e.order, spec)
        if est.low_precision:
            logger.warning("y = %g: Monte Carlo budget exhausted before the requested precision", y)
        rows.append(
            (
                f"{est.y:.12g}",
                f"{est.frozen:.12g}",
                *(f"{c.value:.12g}" for c in est.corrections),
                f"{est.total:.12g}",
                f"{est.tail_bound:.12g}",
                "true" if est.low_precision else "false",
            )
        )
    header = ("y", "frozen", *(f"term_{m}" for m in range(1, e.order + 1)), "density", "tail_bound", "low_precision")
    writer.write_csv("density.csv", header, rows)
    if cfg.output.plot_script:
        writer.write_plot_script("density_plot.py", "density.csv", "y", "density", "parametrix density", False, False)

    theta = model.check_theta_bound(n_samples=e.check_pairs, rng_seed=cfg.plan.seed, x0=pair.x0)
    print(f"{_status(theta.passed)}: kernel bound, max ratio {theta.max_ratio:.6g} over {theta.samples} samples")
    inequalities = inequality_micro_suite(n=e.check_pairs, seed=cfg.plan.seed, lam=model.params.lam, eta=model.params.eta)
    for check in inequalities:
        print(f"{_status(check.passed)}: {check.name} max excess {check.max_excess:.3g}")

    payload: Dict[str, object] = {
        "theta_bound": {
            "max_ratio": theta.max_ratio,
            "worst": list(theta.worst),
            "violations": theta.violations,
            "samples": theta.samples,
            "c0": theta.c0,
            "passed": theta.passed,
        },
        "inequalities": [{"name": c.name, "max_excess": c.max_excess, "passed": c.passed} for c in inequalities],
    }
    passed = theta.passed and all(c.passed for c in inequalities)
    if cfg.plan.paths >= MIN_KDE_SAMPLES:
        ensemble = simulate_pair(pair, cfg.plan, cfg.workers)
        samples = ensemble.x_terminal[np.isfinite(ensemble.x_terminal)]
        cert = certify_gaussian_bound(samples, pair.T, pair.x0, pair.effective_lambda)
        print(f"{_status(cert.passed)}: Gaussian envelope constant {cert.c_hat:.6g} +- {cert.c_hat_stderr:.2g}")
        payload["gaussian_bound"] = {
            "c_hat": cert.c_hat,
            "c_hat_stderr": cert.c_hat_stderr,
            "c_hat_half": cert.c_hat_half,
            "relative_change": cert.relative_change,
            "region": list(cert.region),
            "argmax": cert.argmax,
            "passed": cert.passed,
        }
        passed = passed and cert.passed
    writer.write_json("density.json", payload)
    return passed, None


def run_simulate(cfg: ExperimentConfig, writer: ArtifactWriter) -> Outcome:
    pair = cfg.build_pair()
    plan = cfg.plan
    print(f"CHECK: coupled Euler scheme, {plan.paths} paths x {plan.steps} steps")
    print(SEPARATOR)
    assumptions = check_assumptions(pair, cfg.experiment.p, _grid(cfg))
    ensemble = simulate_pair(pair, plan, cfg.workers, assumptions=assumptions)

    estimates = [("terminal", terminal_error_estimate(ensemble))]
    if ensemble.sup_error is not None:
        estimates.append(("sup", pth_moment_sup_error(ensemble, 1.0)))
        if cfg.experiment.p != 1.0:
            estimates.append((f"sup-p{cfg.experiment.p:g}", pth_moment_sup_error(ensemble, cfg.experiment.p)))
    estimates.extend((f"stopped-{rule.label}", stopped_error(ensemble, rule)) for rule in plan.record.stopping_rules)
    estimates.extend(
        (f"bv-{g.label}", bv_error(ensemble, g, cfg.experiment.bv_power)) for g in plan.record.bv_functions
    )
    for name, est in estimates:
        print(f"INFO: {name}: {est.mean:.6g} +- {est.stderr:.2g} [{est.ci_low:.6g}, {est.ci_high:.6g}]")
    writer.write_csv(
        "simulate.csv",
        ("functional", "mean", "stderr", "ci_low", "ci_high", "n"),
        (
            (name, f"{e.mean:.12g}", f"{e.stderr:.12g}", f"{e.ci_low:.12g}", f"{e.ci_high:.12g}", str(e.n))
            for name, e in estimates
        ),
    )
    if cfg.output.per_path_dump and ensemble.paths is not None and ensemble.hat_paths is not None:
        writer.write_paths("paths.bin", ensemble.paths)
        writer.write_paths("hat_paths.bin", ensemble.hat_paths)
    diagnostic = None
    if cfg.experiment.grid_doubling:
        diagnostic = grid_doubling_diagnostic(pair, plan, workers=cfg.workers, fine=ensemble)
    if ensemble.flagged:
        print(f"FAIL: {ensemble.flagged} paths became non-finite")
    return ensemble.flagged == 0, diagnostic


def run_rates(cfg: ExperimentConfig, writer: ArtifactWriter) -> Outcome:
    pair = cfg.build_pair()
    rate_cfg = rate_experiment(cfg, pair)
    print(f"CHECK: {rate_cfg.error_kind.value} error over the ladder {list(rate_cfg.n_ladder)}")
    print(SEPARATOR)
    result = run_stability_experiment(rate_cfg)
    fit = result.fit
    writer.write_csv("rates.csv", RATES_CSV_HEADER, (point.csv_row() for point in fit.points))
    if cfg.output.plot_script:
        writer.write_plot_script("rates_plot.py", "rates.csv", "epsilon", "error", "strong error against perturbation size")
    writer.write_json(
        "fit.json",
        {
            "verdict": fit.verdict.value,
            "expected": fit.exponent.describe(),
            "slope": fit.slope,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
            "slope_stderr": fit.slope_stderr,
            "correlation": fit.correlation,
            "usable_levels": [p.n for p in fit.usable_points],
            "bounds": {str(p.n): p.bound for p in fit.points if p.bound is not None},
            "provenance": result.provenance,
        },
    )
    if rate_cfg.error_kind is ErrorKind.SUP and cfg.plan.record.key_estimate_p is not None:
        ladder = key_estimate_ladder(
            pair, rate_cfg.n_ladder, cfg.plan, cfg.plan.record.key_estimate_p, cfg.quadrature, cfg.workers
        )
        writer.write_csv(
            "key_estimate.csv",
            ("n", "drift_ratio", "diffusion_ratio"),
            ((str(r.n), f"{r.drift_ratio:.12g}", f"{r.diffusion_ratio:.12g}") for r in ladder.reports),
        )
        print(f"{_status(ladder.within_band)}: key estimate ratios within a factor {ladder.band:g}")
    slope = "n/a" if fit.slope is None else f"{fit.slope:.4f}"
    print(f"{_status(fit.verdict is Verdict.CONSISTENT)}: slope {slope}, expected {fit.exponent.describe()} -> {fit.verdict.value}")
    return fit.verdict is Verdict.CONSISTENT, result.grid_doubling


COMMANDS: Final[Dict[ExperimentKind, Runner]] = {
    ExperimentKind.CHECK: run_check,
    ExperimentKind.MOLLIFY: run_mollify,
    ExperimentKind.NORM: run_norm,
    ExperimentKind.YW_VALIDATE: run_yw_validate,
    ExperimentKind.DENSITY: run_density,
    ExperimentKind.SIMULATE: run_simulate,
    ExperimentKind.RATES: run_rates,
}


def run(command: ExperimentKind, cfg: ExperimentConfig) -> int:
    """Run one subcommand, write its artifacts and the manifest, return the exit code.

    The manifest is written even when the subcommand raises; its ``status`` is then
    ``error`` or ``interrupted`` and the exception propagates to ``main``.
    """
    profile, _ = tolerance_profile()
    clock = Stopwatch.start()
    writer = ArtifactWriter(Path(cfg.output.directory))
    passed = False
    diagnostic: Optional[GridDoublingDiagnostic] = None
    status, error = "error", None
    try:
        writer.write_json("config.json", config_to_dict(cfg))
        passed, diagnostic = COMMANDS[command](cfg, writer)
        status = "passed" if passed else "failed"
    except KeyboardInterrupt:
        status = "interrupted"
        raise
    except Exception as e:
        error = str(e)
        raise
    finally:
        q = cfg.quadrature
        writer.close(
            RunManifest(
                command=command.value,
                config_hash=config_hash(cfg),
                master_seed=cfg.plan.seed,
                started_at=clock.started_at,
                wall_clock_seconds=clock.elapsed(),
                tolerance_profile=profile,
                tolerances={
                    "quadrature": {"rel_tol": q.rel_tol, "abs_tol": q.abs_tol, "limit": q.limit},
                    "truncation_radius": q.truncation_radius,
                    "slope_tolerance": cfg.experiment.slope_tolerance,
                },
                status=status,
                error=error,
                grid_doubling=None if diagnostic is None else diagnostic.as_dict(),
            )
        )
    print(SEPARATOR)
    print(f"{_status(passed)}: {command.value} finished; results in {writer.directory}")
    return EXIT_OK if passed else EXIT_FAILED


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; maps failures onto exit codes."""
    try:
        args = parse_arguments(argv)
        configure_logging(args.verbose)
        cfg = resolve_config(args)
        return run(ExperimentKind(args.command), cfg)
    except (ConfigurationError, DomainError, PreconditionError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("\nWARNING: Operation cancelled by user", file=sys.stderr)
        return EXIT_INTERRUPTED
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        print(f"ERROR: Unexpected error: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())

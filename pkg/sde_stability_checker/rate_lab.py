"""
Stability experiments: mollify the coefficients along a ladder of levels n,
measure the perturbation size and the simulated strong error for every level,
and compare the fitted log-log slope against the theoretical exponent.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Final, Optional, Sequence, Tuple, final

import numpy as np
import scipy.stats

from .coeffs import Coefficient, SdePair
from .errors import DomainError, PreconditionError
from .mollify import mollify
from .quadrature import DEFAULT_QUADRATURE, QuadratureSpec
from .sde_sim import (
    BvFunction,
    Estimate,
    GridDoublingDiagnostic,
    PathEnsemble,
    RecordSpec,
    SimulationPlan,
    StoppingRule,
    bv_error,
    grid_doubling_diagnostic,
    kde_density,
    key_estimate_integrals,
    pth_moment_sup_error,
    simulate_pair,
    stopped_error,
    summarize,
)
from .weighted_norm import WeightedMeasure, difference, epsilon_p, weighted_lp_power

logger = logging.getLogger(__name__)

DEFAULT_LADDER: Final[Tuple[int, ...]] = (2, 4, 8, 16, 32)
DEFAULT_SLOPE_TOLERANCE: Final[float] = 0.15
MIN_FIT_POINTS: Final[int] = 3
LOG_RATE_MIN_CORRELATION: Final[float] = 0.9
KEY_ESTIMATE_BAND: Final[float] = 10.0


class Theorem(Enum):
    STOPPED_L1 = "stopped-L1"
    SUP_L1 = "sup-L1"
    LP_MOMENT = "Lp-moment"
    LP_JENSEN = "Lp-jensen"
    BV = "bv"


class ErrorKind(Enum):
    STOPPED = "stopped"
    SUP = "sup"
    P_MOMENT = "p-moment"
    BV = "bv"


class EpsilonOrder(Enum):
    """Which perturbation size the bound is stated in: eps_1, eps_p or eps_2p."""

    ONE = "1"
    P = "p"
    TWO_P = "2p"

    def exponent(self, p: float) -> float:
        return {EpsilonOrder.ONE: 1.0, EpsilonOrder.P: p, EpsilonOrder.TWO_P: 2.0 * p}[self]


class Verdict(Enum):
    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"
    INCONCLUSIVE = "inconclusive"


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class RateExponent:
    """Either a power eps^value or, when logarithmic, (1 / log(1/eps))^log_power."""

    value: Optional[float]
    log_power: Optional[float]
    epsilon_order: EpsilonOrder

    @property
    def logarithmic(self) -> bool:
        return self.value is None

    def describe(self) -> str:
        if self.value is not None:
            return f"eps_{self.epsilon_order.value}^{self.value:g}"
        return f"(1/log(1/eps_{self.epsilon_order.value}))^{self.log_power:g}"


def theoretical_exponent(alpha: float, theorem: Theorem) -> RateExponent:
    """Rate promised for Holder exponent eta = 1/2 + alpha of the diffusion."""
    if not 0.0 <= alpha <= 0.5:
        raise DomainError(f"alpha must lie in [0, 1/2], got {alpha}")
    one = EpsilonOrder.ONE
    if alpha == 0.0:
        power = 1.0 if theorem in (Theorem.STOPPED_L1, Theorem.LP_MOMENT) else 0.5
        return RateExponent(value=None, log_power=power, epsilon_order=one)
    if theorem is Theorem.STOPPED_L1:
        return RateExponent(value=2 * alpha / (2 * alpha + 1), log_power=None, epsilon_order=one)
    if theorem is Theorem.SUP_L1:
        return RateExponent(value=alpha, log_power=None, epsilon_order=one)
    if theorem is Theorem.LP_MOMENT:
        if alpha == 0.5:
            return RateExponent(value=0.5, log_power=None, epsilon_order=EpsilonOrder.P)
        return RateExponent(value=2 * alpha / (2 * alpha + 1), log_power=None, epsilon_order=one)
    if theorem is Theorem.LP_JENSEN:
        if alpha == 0.5:
            return RateExponent(value=0.5, log_power=None, epsilon_order=EpsilonOrder.TWO_P)
        return RateExponent(value=alpha / (2 * alpha + 1), log_power=None, epsilon_order=one)
    return RateExponent(value=alpha / (2 * alpha + 1), log_power=None, epsilon_order=one)


def theorem_for(error_kind: ErrorKind, p: float) -> Theorem:
    if error_kind is ErrorKind.STOPPED:
        return Theorem.STOPPED_L1
    if error_kind is ErrorKind.SUP:
        return Theorem.SUP_L1
    if error_kind is ErrorKind.BV:
        return Theorem.BV
    if p >= 2:
        return Theorem.LP_MOMENT
    if p > 1:
        return Theorem.LP_JENSEN
    return Theorem.SUP_L1


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class LogLogFit:
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float


def fit_loglog(points: Sequence[Tuple[float, float]]) -> LogLogFit:
    """Least squares on (log eps, log error)."""
    if len(points) < MIN_FIT_POINTS:
        raise PreconditionError(f"a slope fit needs at least {MIN_FIT_POINTS} points, got {len(points)}")
    eps = np.array([p[0] for p in points], dtype=float)
    err = np.array([p[1] for p in points], dtype=float)
    if np.any(eps <= 0) or np.any(err <= 0):
        raise DomainError("log-log fit needs positive values")
    result = scipy.stats.linregress(np.log(eps), np.log(err))
    return LogLogFit(
        slope=float(result.slope),
        intercept=float(result.intercept),
        r_squared=float(result.rvalue) ** 2,
        slope_stderr=float(result.stderr),
    )


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class LogRateFit:
    slope: float
    intercept: float
    correlation: float


def fit_log_rate(points: Sequence[Tuple[float, float]], power: float = 1.0) -> LogRateFit:
    """Linear fit of error against (1 / log(1/eps))^power."""
    if len(points) < MIN_FIT_POINTS:
        raise PreconditionError(f"a fit needs at least {MIN_FIT_POINTS} points, got {len(points)}")
    eps = np.array([p[0] for p in points], dtype=float)
    if np.any(eps <= 0) or np.any(eps >= 1):
        raise DomainError("logarithmic fit needs 0 < eps < 1")
    x = (1.0 / np.log(1.0 / eps)) ** power
    y = np.array([p[1] for p in points], dtype=float)
    result = scipy.stats.linregress(x, y)
    return LogRateFit(slope=float(result.slope), intercept=float(result.intercept), correlation=float(result.rvalue))


def avikainen_bound(total_variation: float, r: float, q: float, sup_density: float, moment_q: float) -> float:
    """3^{r+1} V^r (sup p)^{q/(q+1)} (E|X - X_hat|^q)^{1/(q+1)}."""
    if r < 1 or q <= 0:
        raise DomainError("need r >= 1 and q > 0")
    return 3.0 ** (r + 1) * total_variation**r * sup_density ** (q / (q + 1)) * moment_q ** (1.0 / (q + 1))


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class RateExperimentConfig:
    base_pair: SdePair
    n_ladder: Tuple[int, ...] = DEFAULT_LADDER
    p: float = 1.0
    plan: SimulationPlan = field(default_factory=SimulationPlan)
    error_kind: ErrorKind = ErrorKind.SUP
    stopping_rule: Optional[StoppingRule] = None
    bv_function: BvFunction = field(default_factory=BvFunction.heaviside)
    bv_power: float = 1.0
    slope_tolerance: float = DEFAULT_SLOPE_TOLERANCE
    quadrature: QuadratureSpec = DEFAULT_QUADRATURE
    common_random_numbers: bool = True
    workers: int = 1
    grid_doubling: bool = True

    def __post_init__(self) -> None:
        if len(self.n_ladder) < MIN_FIT_POINTS:
            raise PreconditionError(f"the ladder needs at least {MIN_FIT_POINTS} levels for a slope fit")
        if list(self.n_ladder) != sorted(set(self.n_ladder)) or self.n_ladder[0] < 1:
            raise PreconditionError("the ladder must be strictly increasing positive integers")
        if not self.p >= 1:
            raise DomainError(f"p must be >= 1, got {self.p}")

    @property
    def theorem(self) -> Theorem:
        return theorem_for(self.error_kind, self.p)

    @property
    def rule(self) -> StoppingRule:
        return self.stopping_rule or StoppingRule.at(self.base_pair.T)

    def record_spec(self) -> RecordSpec:
        base = self.plan.record
        rules = base.stopping_rules
        if self.error_kind is ErrorKind.STOPPED and self.rule not in rules:
            rules = rules + (self.rule,)
        bv = base.bv_functions
        if self.error_kind is ErrorKind.BV and self.bv_function not in bv:
            bv = bv + (self.bv_function,)
        return replace(base, sup=True, stopping_rules=rules, bv_functions=bv)


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class RatePoint:
    n: int
    epsilon: float
    error: Estimate
    seed: int
    usable: bool
    bound: Optional[float] = None

    def csv_row(self) -> Tuple[str, ...]:
        log_eps = math.log(self.epsilon) if self.epsilon > 0 else math.nan
        log_err = math.log(self.error.mean) if self.error.mean > 0 else math.nan
        return (
            str(self.n),
            f"{self.epsilon:.12g}",
            f"{self.error.mean:.12g}",
            f"{self.error.stderr:.12g}",
            f"{log_eps:.12g}",
            f"{log_err:.12g}",
        )


RATES_CSV_HEADER: Final[Tuple[str, ...]] = ("n", "epsilon", "error", "error_se", "log_eps", "log_err")


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class RateFit:
    points: Tuple[RatePoint, ...]
    exponent: RateExponent
    verdict: Verdict
    slope: Optional[float] = None
    intercept: Optional[float] = None
    r_squared: Optional[float] = None
    slope_stderr: Optional[float] = None
    correlation: Optional[float] = None

    @property
    def usable_points(self) -> Tuple[RatePoint, ...]:
        return tuple(p for p in self.points if p.usable)


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class StabilityResult:
    fit: RateFit
    provenance: Dict[str, Any]
    grid_doubling: Optional[GridDoublingDiagnostic] = None


def _seed_for(cfg: RateExperimentConfig, n: int) -> int:
    if cfg.common_random_numbers:
        return cfg.plan.seed
    return int(np.random.SeedSequence([cfg.plan.seed, n]).generate_state(1, dtype=np.uint64)[0])


def _measure_error(cfg: RateExperimentConfig, ensemble: PathEnsemble) -> Estimate:
    if cfg.error_kind is ErrorKind.STOPPED:
        return stopped_error(ensemble, cfg.rule)
    if cfg.error_kind is ErrorKind.SUP:
        return pth_moment_sup_error(ensemble, 1.0)
    if cfg.error_kind is ErrorKind.P_MOMENT:
        return pth_moment_sup_error(ensemble, cfg.p)
    return bv_error(ensemble, cfg.bv_function, cfg.bv_power)


def _avikainen(cfg: RateExperimentConfig, ensemble: PathEnsemble) -> Optional[float]:
    finite = ensemble.x_terminal[np.isfinite(ensemble.x_terminal)]
    if finite.size < 1000 or np.ptp(finite) == 0:
        return None
    sup_density = float(np.max(kde_density(finite).density))
    moment = summarize(ensemble.terminal_error).mean
    return avikainen_bound(cfg.bv_function.total_variation, cfg.bv_power, 1.0, sup_density, moment)


def perturbed_pair(cfg: RateExperimentConfig, n: int) -> SdePair:
    base = cfg.base_pair
    return base.with_perturbation(
        mollify(base.exact.drift, n, cfg.quadrature),
        mollify(base.exact.diffusion, n, cfg.quadrature),
    )


def run_stability_experiment(cfg: RateExperimentConfig) -> StabilityResult:
    exponent = theoretical_exponent(cfg.base_pair.effective_alpha, cfg.theorem)
    eps_p = exponent.epsilon_order.exponent(cfg.p)
    record = cfg.record_spec()
    measure = WeightedMeasure.for_pair(cfg.base_pair)
    logger.info("rate experiment: %s error, theorem %s, expecting %s", cfg.error_kind.value, cfg.theorem.value, exponent.describe())

    points = []
    pairs = {}
    for n in cfg.n_ladder:
        pair = perturbed_pair(cfg, n)
        report = epsilon_p(pair, eps_p, measure, cfg.quadrature)
        seed = _seed_for(cfg, n)
        if not report.meets_assumption:
            logger.warning("level n=%d excluded: epsilon_%g = %.4g violates the smallness assumption", n, eps_p, report.epsilon)
            continue
        plan = replace(cfg.plan, seed=seed, record=record)
        ensemble = simulate_pair(pair, plan, cfg.workers)
        error = _measure_error(cfg, ensemble)
        bound = _avikainen(cfg, ensemble) if cfg.error_kind is ErrorKind.BV else None
        usable = error.excludes_zero and report.epsilon > 0 and error.mean > 0
        points.append(RatePoint(n=n, epsilon=report.epsilon, error=error, seed=seed, usable=usable, bound=bound))
        pairs[n] = (pair, plan)
        logger.info("n=%d: epsilon=%.6g error=%.6g +- %.2g", n, report.epsilon, error.mean, error.stderr)

    fit = _fit(points, exponent, cfg.slope_tolerance)

    diagnostic = None
    usable = [p for p in points if p.usable]
    if cfg.grid_doubling and usable:
        pair, plan = pairs[usable[-1].n]
        diagnostic = grid_doubling_diagnostic(pair, plan, lambda e: _measure_error(cfg, e), cfg.workers)

    provenance: Dict[str, Any] = {
        "theorem": cfg.theorem.value,
        "error_kind": cfg.error_kind.value,
        "alpha": cfg.base_pair.effective_alpha,
        "p": cfg.p,
        "epsilon_order": exponent.epsilon_order.value,
        "ladder": list(cfg.n_ladder),
        "seeds": {str(p.n): p.seed for p in points},
        "common_random_numbers": cfg.common_random_numbers,
        "steps": cfg.plan.steps,
        "paths": cfg.plan.paths,
        "slope_tolerance": cfg.slope_tolerance,
    }
    if diagnostic is not None:
        provenance["grid_doubling"] = diagnostic.as_dict()
    return StabilityResult(fit=fit, provenance=provenance, grid_doubling=diagnostic)


def _fit(points: Sequence[RatePoint], exponent: RateExponent, tolerance: float) -> RateFit:
    usable = [p for p in points if p.usable]
    if len(usable) < MIN_FIT_POINTS:
        logger.warning("only %d usable levels; the fit is inconclusive", len(usable))
        return RateFit(points=tuple(points), exponent=exponent, verdict=Verdict.INCONCLUSIVE)
    data = [(p.epsilon, p.error.mean) for p in usable]
    if exponent.logarithmic:
        assert exponent.log_power is not None
        log_fit = fit_log_rate(data, exponent.log_power)
        verdict = Verdict.CONSISTENT if log_fit.correlation >= LOG_RATE_MIN_CORRELATION else Verdict.INCONSISTENT
        return RateFit(
            points=tuple(points),
            exponent=exponent,
            verdict=verdict,
            slope=log_fit.slope,
            intercept=log_fit.intercept,
            correlation=log_fit.correlation,
        )
    assert exponent.value is not None
    fit = fit_loglog(data)
    verdict = Verdict.CONSISTENT if fit.slope >= exponent.value - tolerance else Verdict.INCONSISTENT
    return RateFit(
        points=tuple(points),
        exponent=exponent,
        verdict=verdict,
        slope=fit.slope,
        intercept=fit.intercept,
        r_squared=fit.r_squared,
        slope_stderr=fit.slope_stderr,
    )


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class SeedStability:
    slope: float
    other_slope: float
    combined_stderr: float

    @property
    def difference(self) -> float:
        return abs(self.slope - self.other_slope)

    @property
    def stable(self) -> bool:
        return self.difference < 3.0 * self.combined_stderr


def slope_seed_stability(cfg: RateExperimentConfig, other_seed: int) -> SeedStability:
    """Refit with another master seed and compare the slopes."""
    first = run_stability_experiment(replace(cfg, grid_doubling=False)).fit
    other = run_stability_experiment(replace(cfg, plan=replace(cfg.plan, seed=other_seed), grid_doubling=False)).fit
    if first.slope is None or other.slope is None:
        raise PreconditionError("both runs need a slope fit")
    errors = [s for s in (first.slope_stderr, other.slope_stderr) if s is not None]
    combined = math.sqrt(sum(s * s for s in errors)) if errors else 0.0
    return SeedStability(slope=first.slope, other_slope=other.slope, combined_stderr=combined)


# ---------------------------------------------------------------------------
# Key estimate: time-integrated coefficient gaps along the perturbed path
# ---------------------------------------------------------------------------


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class KeyEstimateReport:
    n: Optional[int]
    drift_integral: Estimate
    drift_norm: float
    diffusion_integral: Estimate
    diffusion_norm: float
    flagged: bool

    @property
    def drift_ratio(self) -> float:
        return _ratio(self.drift_integral.mean, self.drift_norm)

    @property
    def diffusion_ratio(self) -> float:
        return _ratio(self.diffusion_integral.mean, self.diffusion_norm)


def _ratio(numerator: float, norm: float) -> float:
    if norm > 0:
        return numerator / norm
    return 0.0 if numerator == 0 else math.inf


def key_estimate_check(
    pair: SdePair,
    plan: SimulationPlan,
    p: float = 1.0,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    workers: int = 1,
    n: Optional[int] = None,
) -> KeyEstimateReport:
    """int_0^T E|b - b_hat|^p(X_hat_s) ds against ||b - b_hat||_p^p, and the sigma analogue with 2p."""
    record = replace(plan.record, key_estimate_p=p)
    ensemble = simulate_pair(pair, replace(plan, record=record), workers)
    drift, diffusion = key_estimate_integrals(ensemble)
    measure = WeightedMeasure.for_pair(pair)
    if pair.is_identical:
        drift_norm = diffusion_norm = 0.0
    else:
        drift_norm = _gap_norm(pair.exact.drift, pair.perturbed.drift, p, measure, quad)
        diffusion_norm = _gap_norm(pair.exact.diffusion, pair.perturbed.diffusion, 2 * p, measure, quad)
    flagged = (drift_norm == 0 and drift.mean > 0) or (diffusion_norm == 0 and diffusion.mean > 0)
    if flagged:
        logger.warning("nonzero coefficient gap along paths where the weighted norm vanishes")
    return KeyEstimateReport(
        n=n,
        drift_integral=drift,
        drift_norm=drift_norm,
        diffusion_integral=diffusion,
        diffusion_norm=diffusion_norm,
        flagged=flagged,
    )


def _gap_norm(f: Coefficient, g: Coefficient, p: float, measure: WeightedMeasure, quad: QuadratureSpec) -> float:
    if f is g:
        return 0.0
    func, points = difference(f, g)
    return weighted_lp_power(func, p, measure, quad, points)


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class KeyEstimateLadder:
    reports: Tuple[KeyEstimateReport, ...]
    band: float = KEY_ESTIMATE_BAND

    @staticmethod
    def _spread(ratios: Sequence[float]) -> Optional[float]:
        positive = [r for r in ratios if r > 0 and math.isfinite(r)]
        if not positive:
            return None
        return max(positive) / min(positive)

    @property
    def drift_spread(self) -> Optional[float]:
        return self._spread([r.drift_ratio for r in self.reports if r.drift_norm > 0])

    @property
    def diffusion_spread(self) -> Optional[float]:
        return self._spread([r.diffusion_ratio for r in self.reports if r.diffusion_norm > 0])

    @property
    def within_band(self) -> bool:
        spreads = [s for s in (self.drift_spread, self.diffusion_spread) if s is not None]
        return not any(r.flagged for r in self.reports) and all(s < self.band for s in spreads)


def key_estimate_ladder(
    base_pair: SdePair,
    ladder: Sequence[int],
    plan: SimulationPlan,
    p: float = 1.0,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    workers: int = 1,
) -> KeyEstimateLadder:
    reports = []
    for n in ladder:
        pair = base_pair.with_perturbation(
            mollify(base_pair.exact.drift, n, quad), mollify(base_pair.exact.diffusion, n, quad)
        )
        reports.append(key_estimate_check(pair, plan, p, quad, workers, n=n))
    return KeyEstimateLadder(reports=tuple(reports))



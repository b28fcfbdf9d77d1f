"""
Coupled Euler-Maruyama simulation of (X, X_hat) on a shared Brownian path.

Path i draws its increments from a Philox stream keyed by (seed, i), so every
path is the same whatever the block size or number of workers. Paths are
simulated in blocks; each block is vectorised over its paths.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Final, Mapping, Optional, Tuple, final

import numpy as np
import scipy.stats

from .coeffs import AssumptionReport, SdePair
from .errors import ConfigurationError, DomainError, PreconditionError
from .mollify import simulation_evaluator

logger = logging.getLogger(__name__)


DEFAULT_STEPS: Final[int] = 2**12
DEFAULT_PATHS: Final[int] = 10_000
DEFAULT_BLOCK_SIZE: Final[int] = 1024
DEFAULT_MEMORY_BUDGET: Final[int] = 256 * 2**20
DEFAULT_BATCHES: Final[int] = 20
CONFIDENCE: Final[float] = 0.95
MIN_KDE_SAMPLES: Final[int] = 1000
# integral of K^2 for the standard Gaussian kernel
KERNEL_ROUGHNESS: Final[float] = 1.0 / (2.0 * math.sqrt(math.pi))
KDE_GRID_POINTS: Final[int] = 512
# tabulation window of mollified coefficients, in units of sqrt(lambda T)
TABLE_RADIUS: Final[float] = 12.0


def counter_generator(seed: int, index: int) -> np.random.Generator:
    """Generator on the Philox stream keyed by (seed, index)."""
    if seed < 0 or index < 0:
        raise DomainError("seed and stream index must be nonnegative")
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


class StoppingKind(Enum):
    DETERMINISTIC = "deterministic"
    EXIT = "exit"


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class StoppingRule:
    """A deterministic time, or the first exit of X from (x0 - r, x0 + r), capped at T."""

    kind: StoppingKind
    time: Optional[float] = None
    radius: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind is StoppingKind.DETERMINISTIC:
            if self.time is None or not self.time > 0:
                raise DomainError("a deterministic stopping rule needs a positive time")
        elif self.radius is None or not self.radius > 0:
            raise DomainError("an exit rule needs a positive radius")

    @classmethod
    def at(cls, time: float) -> "StoppingRule":
        return cls(kind=StoppingKind.DETERMINISTIC, time=time)

    @classmethod
    def exit(cls, radius: float) -> "StoppingRule":
        return cls(kind=StoppingKind.EXIT, radius=radius)

    @property
    def label(self) -> str:
        if self.kind is StoppingKind.DETERMINISTIC:
            return f"deterministic({self.time:g})"
        return f"exit({self.radius:g})"


class BvKind(Enum):
    HEAVISIDE = "heaviside"
    WINDOW = "window"
    CONSTANT = "constant"


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class BvFunction:
    """Bounded-variation test function g with its total variation V(g)."""

    kind: BvKind
    lower: float = 0.0
    upper: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind is BvKind.WINDOW and (self.upper is None or not self.upper > self.lower):
            raise DomainError("a window needs lower < upper")

    @classmethod
    def heaviside(cls, theta: float = 0.0) -> "BvFunction":
        return cls(kind=BvKind.HEAVISIDE, lower=theta)

    @classmethod
    def window(cls, a: float, b: float) -> "BvFunction":
        return cls(kind=BvKind.WINDOW, lower=a, upper=b)

    @property
    def total_variation(self) -> float:
        return {BvKind.HEAVISIDE: 1.0, BvKind.WINDOW: 2.0, BvKind.CONSTANT: 0.0}[self.kind]

    @property
    def label(self) -> str:
        if self.kind is BvKind.HEAVISIDE:
            return f"heaviside({self.lower:g})"
        if self.kind is BvKind.WINDOW:
            return f"window({self.lower:g},{self.upper:g})"
        return "constant"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind is BvKind.HEAVISIDE:
            return (x >= self.lower).astype(float)
        if self.kind is BvKind.WINDOW:
            assert self.upper is not None
            return ((x >= self.lower) & (x <= self.upper)).astype(float)
        return np.ones_like(x)


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class RecordSpec:
    terminal: bool = True
    sup: bool = True
    stopping_rules: Tuple[StoppingRule, ...] = ()
    bv_functions: Tuple[BvFunction, ...] = ()
    full_paths: bool = False
    key_estimate_p: Optional[float] = None

    def __post_init__(self) -> None:
        if self.key_estimate_p is not None and not self.key_estimate_p >= 1:
            raise DomainError("key estimate exponent must be >= 1")


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class SimulationPlan:
    steps: int = DEFAULT_STEPS
    paths: int = DEFAULT_PATHS
    seed: int = 0
    record: RecordSpec = field(default_factory=RecordSpec)
    block_size: int = DEFAULT_BLOCK_SIZE
    memory_budget: int = DEFAULT_MEMORY_BUDGET

    def __post_init__(self) -> None:
        if self.steps < 2 or self.steps & (self.steps - 1):
            raise ConfigurationError(f"must be a power of two >= 2, got {self.steps}", "plan.steps")
        if self.paths < 1:
            raise ConfigurationError("must be >= 1", "plan.paths")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("must be an unsigned 64-bit integer", "plan.seed")
        if self.block_size < 1:
            raise ConfigurationError("must be >= 1", "plan.block_size")
        if self.record.full_paths and self.full_path_bytes > self.memory_budget:
            raise ConfigurationError(
                f"full paths need {self.full_path_bytes} bytes, budget is {self.memory_budget}",
                "plan.record.full_paths",
            )

    @property
    def full_path_bytes(self) -> int:
        return 2 * self.paths * (self.steps + 1) * 8


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class Estimate:
    """Sample mean with a batch-means confidence interval."""

    mean: float
    stderr: float
    ci_low: float
    ci_high: float
    n: int

    @property
    def excludes_zero(self) -> bool:
        return self.ci_low > 0 or self.ci_high < 0


def summarize(values: np.ndarray, batches: int = DEFAULT_BATCHES, confidence: float = CONFIDENCE) -> Estimate:
    """Mean of the finite entries; the CI uses ``batches`` contiguous batch means."""
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values)]
    n = int(finite.size)
    if n == 0:
        raise PreconditionError("no finite values to summarize")
    mean = float(np.mean(finite))
    if n < 2:
        return Estimate(mean=mean, stderr=math.inf, ci_low=-math.inf, ci_high=math.inf, n=n)
    if n >= 2 * batches:
        groups = np.array([np.mean(b) for b in np.array_split(finite, batches)])
        dof = batches - 1
        stderr = float(np.std(groups, ddof=1) / math.sqrt(batches))
    else:
        dof = n - 1
        stderr = float(np.std(finite, ddof=1) / math.sqrt(n))
    half = float(scipy.stats.t.ppf(0.5 + confidence / 2.0, dof)) * stderr
    return Estimate(mean=mean, stderr=stderr, ci_low=mean - half, ci_high=mean + half, n=n)


@final
@dataclass(frozen=True, slots=True, kw_only=True, eq=False)
class PathEnsemble:
    """Per-path error functionals of one coupled simulation.

    Paths whose state became non-finite carry NaN in every functional and are
    counted in ``flagged``.
    """

    plan: SimulationPlan
    x0: float
    T: float
    steps: int
    terminal_error: np.ndarray
    x_terminal: np.ndarray
    xhat_terminal: np.ndarray
    sup_error: Optional[np.ndarray] = None
    stopped: Mapping[StoppingRule, np.ndarray] = field(default_factory=dict)
    bv_values: Mapping[BvFunction, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    drift_gap: Optional[np.ndarray] = None
    diffusion_gap: Optional[np.ndarray] = None
    paths: Optional[np.ndarray] = None
    hat_paths: Optional[np.ndarray] = None
    flagged: int = 0

    @property
    def h(self) -> float:
        return self.T / self.steps


@dataclass(slots=True)
class _BlockResult:
    terminal: np.ndarray
    sup: np.ndarray
    x: np.ndarray
    xh: np.ndarray
    stopped: Dict[StoppingRule, np.ndarray]
    drift_gap: Optional[np.ndarray]
    diffusion_gap: Optional[np.ndarray]
    paths: Optional[np.ndarray]
    hat_paths: Optional[np.ndarray]
    flagged: int


@final
class _BlockRunner:
    __slots__ = ("pair", "plan", "coarsen", "steps", "h", "b", "s", "b_hat", "s_hat")

    def __init__(self, pair: SdePair, plan: SimulationPlan, coarsen: int):
        self.pair = pair
        self.plan = plan
        self.coarsen = coarsen
        self.steps = plan.steps // coarsen
        self.h = pair.T / self.steps
        lam = pair.exact.diffusion.ellipticity_lambda or 1.0
        lam = max(lam, pair.perturbed.diffusion.ellipticity_lambda or 1.0)
        half = TABLE_RADIUS * math.sqrt(lam * pair.T) + (pair.exact.drift.bound_K or 0.0) * pair.T
        window = (pair.x0 - half, pair.x0 + half)
        self.b = simulation_evaluator(pair.exact.drift, window)
        self.s = simulation_evaluator(pair.exact.diffusion, window)
        if pair.is_identical:
            self.b_hat, self.s_hat = self.b, self.s
        else:
            self.b_hat = simulation_evaluator(pair.perturbed.drift, window)
            self.s_hat = simulation_evaluator(pair.perturbed.diffusion, window)

    def increments(self, start: int, stop: int) -> np.ndarray:
        fine = self.plan.steps
        dw = np.empty((stop - start, fine))
        for row, index in enumerate(range(start, stop)):
            dw[row] = counter_generator(self.plan.seed, index).standard_normal(fine)
        dw *= math.sqrt(self.pair.T / fine)
        if self.coarsen > 1:
            dw = dw.reshape(stop - start, self.steps, self.coarsen).sum(axis=2)
        return dw

    def run(self, start: int, stop: int) -> "_BlockResult":
        record = self.plan.record
        size = stop - start
        h, steps, x0 = self.h, self.steps, self.pair.x0
        dw = self.increments(start, start + size)

        x = np.full(size, x0)
        xh = np.full(size, x0)
        sup = np.zeros(size)
        deterministic = {
            rule: min(steps, math.ceil(rule.time / h - 1e-9))
            for rule in record.stopping_rules
            if rule.kind is StoppingKind.DETERMINISTIC and rule.time is not None
        }
        exits = [r for r in record.stopping_rules if r.kind is StoppingKind.EXIT]
        stopped = {rule: np.full(size, np.nan) for rule in record.stopping_rules}
        for rule, index in deterministic.items():
            if index == 0:
                stopped[rule][:] = 0.0
        active = {rule: np.ones(size, dtype=bool) for rule in exits}

        key_p = record.key_estimate_p
        drift_gap = diffusion_gap = None
        if key_p is not None:
            drift_gap = np.zeros(size)
            diffusion_gap = np.zeros(size)
            g_b, g_s = self._gaps(xh, key_p)

        paths = hat_paths = None
        if record.full_paths:
            paths = np.empty((size, steps + 1))
            hat_paths = np.empty((size, steps + 1))
            paths[:, 0] = x0
            hat_paths[:, 0] = x0

        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(steps):
                step = dw[:, k]
                x, xh = x + self.b(x) * h + self.s(x) * step, xh + self.b_hat(xh) * h + self.s_hat(xh) * step
                y = np.abs(x - xh)
                sup = np.maximum(sup, y)
                for rule, index in deterministic.items():
                    if index == k + 1:
                        stopped[rule] = y.copy()
                for rule in exits:
                    assert rule.radius is not None
                    hit = active[rule] & (np.abs(x - x0) >= rule.radius)
                    stopped[rule][hit] = y[hit]
                    active[rule] &= ~hit
                if drift_gap is not None and diffusion_gap is not None and key_p is not None:
                    new_b, new_s = self._gaps(xh, key_p)
                    drift_gap += 0.5 * h * (g_b + new_b)
                    diffusion_gap += 0.5 * h * (g_s + new_s)
                    g_b, g_s = new_b, new_s
                if paths is not None and hat_paths is not None:
                    paths[:, k + 1] = x
                    hat_paths[:, k + 1] = xh

        terminal = np.abs(x - xh)
        for rule in exits:
            stopped[rule][active[rule]] = terminal[active[rule]]
        bad = ~(np.isfinite(x) & np.isfinite(xh))
        if bad.any():
            terminal[bad] = np.nan
            sup[bad] = np.nan
            for values in stopped.values():
                values[bad] = np.nan
        return _BlockResult(
            terminal=terminal,
            sup=sup,
            x=x,
            xh=xh,
            stopped=stopped,
            drift_gap=drift_gap,
            diffusion_gap=diffusion_gap,
            paths=paths,
            hat_paths=hat_paths,
            flagged=int(bad.sum()),
        )

    def _gaps(self, xh: np.ndarray, p: float) -> Tuple[np.ndarray, np.ndarray]:
        drift = np.abs(self.b(xh) - self.b_hat(xh)) ** p
        diffusion = np.abs(self.s(xh) - self.s_hat(xh)) ** (2.0 * p)
        return drift, diffusion


def simulate_pair(
    pair: SdePair,
    plan: SimulationPlan,
    workers: int = 1,
    coarsen: int = 1,
    assumptions: Optional[AssumptionReport] = None,
) -> PathEnsemble:
    """Simulate the coupled pair with identical increments for both equations.

    ``coarsen`` sums consecutive increments of the same Brownian path so that
    the run uses ``plan.steps // coarsen`` steps.
    """
    if workers < 1:
        raise DomainError("workers must be >= 1")
    if coarsen < 1 or plan.steps % coarsen or plan.steps // coarsen < 1:
        raise DomainError(f"cannot coarsen {plan.steps} steps by {coarsen}")
    if assumptions is not None and not assumptions.passed:
        failed = ", ".join(c.name for c in assumptions.failed())
        logger.warning("simulating a pair that fails assumption(s) %s", failed)

    runner = _BlockRunner(pair, plan, coarsen)
    blocks = [(start, min(start + plan.block_size, plan.paths)) for start in range(0, plan.paths, plan.block_size)]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(lambda block: runner.run(*block), blocks))

    def joined(name: str) -> np.ndarray:
        return np.concatenate([getattr(r, name) for r in results])

    record = plan.record
    stopped = {rule: np.concatenate([r.stopped[rule] for r in results]) for rule in record.stopping_rules}
    x_terminal = joined("x")
    xhat_terminal = joined("xh")
    bv_values = {g: (g(x_terminal), g(xhat_terminal)) for g in record.bv_functions}
    flagged = sum(r.flagged for r in results)
    if flagged:
        logger.warning("%d of %d paths became non-finite and were excluded", flagged, plan.paths)
    return PathEnsemble(
        plan=plan,
        x0=pair.x0,
        T=pair.T,
        steps=runner.steps,
        terminal_error=joined("terminal"),
        x_terminal=x_terminal,
        xhat_terminal=xhat_terminal,
        sup_error=joined("sup") if record.sup else None,
        stopped=stopped,
        bv_values=bv_values,
        drift_gap=joined("drift_gap") if record.key_estimate_p is not None else None,
        diffusion_gap=joined("diffusion_gap") if record.key_estimate_p is not None else None,
        paths=joined("paths") if record.full_paths else None,
        hat_paths=joined("hat_paths") if record.full_paths else None,
        flagged=flagged,
    )


def terminal_error_estimate(ensemble: PathEnsemble) -> Estimate:
    return summarize(ensemble.terminal_error)


def stopped_error(ensemble: PathEnsemble, rule: StoppingRule) -> Estimate:
    """E|X_tau - X_hat_tau| for a recorded rule; tau is capped at T."""
    if rule not in ensemble.stopped:
        raise PreconditionError(f"stopping rule {rule.label} was not recorded")
    return summarize(ensemble.stopped[rule])


def pth_moment_sup_error(ensemble: PathEnsemble, p: float) -> Estimate:
    if not p >= 1:
        raise DomainError(f"p must be >= 1, got {p}")
    if ensemble.sup_error is None:
        raise PreconditionError("sup error was not recorded")
    return summarize(ensemble.sup_error**p)


def bv_error(ensemble: PathEnsemble, g: BvFunction, r: float = 1.0) -> Estimate:
    """E|g(X_T) - g(X_hat_T)|^r."""
    if not r >= 1:
        raise DomainError(f"r must be >= 1, got {r}")
    if g not in ensemble.bv_values:
        raise PreconditionError(f"BV function {g.label} was not recorded")
    gx, gxh = ensemble.bv_values[g]
    return summarize(np.abs(gx - gxh) ** r)


def key_estimate_integrals(ensemble: PathEnsemble) -> Tuple[Estimate, Estimate]:
    """Estimates of int_0^T E|b - b_hat|^p(X_hat_s) ds and the sigma analogue."""
    if ensemble.drift_gap is None or ensemble.diffusion_gap is None:
        raise PreconditionError("key estimate integrals were not recorded")
    return summarize(ensemble.drift_gap), summarize(ensemble.diffusion_gap)


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class GridDoublingDiagnostic:
    steps: int
    fine: float
    coarse: float

    @property
    def abs_change(self) -> float:
        return abs(self.fine - self.coarse)

    @property
    def rel_change(self) -> float:
        return self.abs_change / abs(self.fine) if self.fine else (0.0 if self.coarse == 0 else math.inf)

    def as_dict(self) -> Dict[str, float]:
        return {
            "steps": self.steps,
            "fine": self.fine,
            "coarse": self.coarse,
            "abs_change": self.abs_change,
            "rel_change": self.rel_change,
        }


def grid_doubling_diagnostic(
    pair: SdePair,
    plan: SimulationPlan,
    functional: Callable[[PathEnsemble], Estimate] = terminal_error_estimate,
    workers: int = 1,
    fine: Optional[PathEnsemble] = None,
) -> GridDoublingDiagnostic:
    """Change of a mean error functional between the N and N/2 grids of the same Brownian paths."""
    if fine is None:
        fine = simulate_pair(pair, plan, workers)
    coarse = simulate_pair(pair, plan, workers, coarsen=2)
    result = GridDoublingDiagnostic(steps=plan.steps, fine=functional(fine).mean, coarse=functional(coarse).mean)
    logger.info("grid doubling: %.6g (N=%d) vs %.6g (N=%d)", result.fine, plan.steps, result.coarse, plan.steps // 2)
    return result


# ---------------------------------------------------------------------------
# Kernel density estimate
# ---------------------------------------------------------------------------


@final
@dataclass(frozen=True, slots=True, kw_only=True, eq=False)
class KdeResult:
    grid: np.ndarray
    density: np.ndarray
    stderr: np.ndarray
    bandwidth: float
    n: int


def kde_density(
    samples: np.ndarray,
    bandwidth: Optional[float] = None,
    grid: Optional[np.ndarray] = None,
    grid_points: int = KDE_GRID_POINTS,
) -> KdeResult:
    """Gaussian-kernel density estimate with pointwise standard errors sqrt(f R(K) / (n h)).

    Without an explicit ``bandwidth`` Scott's rule from ``scipy.stats.gaussian_kde`` is used.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < MIN_KDE_SAMPLES:
        raise PreconditionError(f"need at least {MIN_KDE_SAMPLES} samples, got {samples.size}")
    if not np.all(np.isfinite(samples)):
        raise DomainError("samples must be finite")
    if bandwidth is not None and not bandwidth > 0:
        raise DomainError("bandwidth must be positive")
    spread = float(np.std(samples, ddof=1))
    if spread == 0:
        raise PreconditionError("degenerate sample: zero variance")

    # gaussian_kde scales a scalar bw_method by the sample standard deviation
    kde = scipy.stats.gaussian_kde(samples, bw_method="scott" if bandwidth is None else bandwidth / spread)
    h = float(bandwidth) if bandwidth is not None else float(kde.factor * spread)
    if grid is None:
        grid = np.linspace(samples.min() - 3 * h, samples.max() + 3 * h, grid_points)
    grid = np.asarray(grid, dtype=float)

    density = kde(grid)
    stderr = np.sqrt(density * KERNEL_ROUGHNESS / (samples.size * h))
    return KdeResult(grid=grid, density=density, stderr=stderr, bandwidth=h, n=int(samples.size))

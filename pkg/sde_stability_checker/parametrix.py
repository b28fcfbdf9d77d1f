"""
Parametrix expansion of the transition density of dX = b(X) dt + sigma(X) dW.

The density is written as the frozen Gaussian kernel plus correction terms

    p_t(x0, y) = p_t^y(x0, y) + sum_{m >= 1} I_t^m(y, x0)

where p_t^z(x, .) is Gaussian with mean x + b(z) t and variance a(z) t,
a = sigma^2, and I^m is an integral over the time simplex and m spatial points
of products of the parametrix kernel theta_hat with frozen kernels. The
correction terms are estimated by Monte Carlo; their size is controlled by an
explicit Gamma-function majorant series.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Final, Optional, Sequence, Tuple, final

import numpy as np
import scipy.special

from .coeffs import Coefficient, SdePair
from .errors import DomainError, PreconditionError
from .sde_sim import KdeResult, counter_generator, kde_density

logger = logging.getLogger(__name__)

THETA_BOUND_TOLERANCE: Final[float] = 1e-9
DEFAULT_MAX_ORDER: Final[int] = 2
# Chapman-Kolmogorov for p_{8 lambda} holds with equality
CHAINING_CONSTANT: Final[float] = 1.0
# gaps below this underflow the log densities; such samples carry weight 0
MIN_GAP: Final[float] = 1e-290
MAJORANT_MAX_TERMS: Final[int] = 10_000_000
# largest argument of exp that stays finite in double precision
MAX_EXPONENT: Final[float] = 709.0
KDE_SUPPORT_REL_ERROR: Final[float] = 0.1
CERTIFICATE_STABILITY: Final[float] = 0.1


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class FrozenKernelParams:
    t0: float
    K: float
    lam: float
    eta: float

    def __post_init__(self) -> None:
        if not self.t0 > 0:
            raise DomainError(f"t0 must be positive, got {self.t0}")
        if not self.K >= 0:
            raise DomainError(f"K must be nonnegative, got {self.K}")
        if not self.lam >= 1:
            raise DomainError(f"lambda must be >= 1, got {self.lam}")
        if not 0.5 <= self.eta <= 1.0:
            raise DomainError(f"eta must lie in [1/2, 1], got {self.eta}")

    @classmethod
    def from_coefficients(cls, drift: Coefficient, diffusion: Coefficient, t0: float) -> "FrozenKernelParams":
        """K bounds both |b| and the Holder constant of a = sigma^2, which is 2 sqrt(lambda) K_sigma."""
        lam = diffusion.require("ellipticity_lambda")
        holder_a = 2.0 * math.sqrt(lam) * diffusion.require("bound_K")
        return cls(
            t0=t0,
            K=max(drift.require("bound_K"), holder_a),
            lam=lam,
            eta=diffusion.require("holder_eta"),
        )

    @classmethod
    def from_pair(cls, pair: SdePair) -> "FrozenKernelParams":
        exact = cls.from_coefficients(pair.exact.drift, pair.exact.diffusion, pair.T)
        perturbed = cls.from_coefficients(pair.perturbed.drift, pair.perturbed.diffusion, pair.T)
        return cls(
            t0=pair.T,
            K=max(exact.K, perturbed.K),
            lam=max(exact.lam, perturbed.lam),
            eta=min(exact.eta, perturbed.eta),
        )


def gaussian_kernel(c: float, t: float | np.ndarray, x: float | np.ndarray, z: float | np.ndarray) -> np.ndarray:
    """p_c(t, x, z) = exp(-|x - z|^2 / (2 c t)) / sqrt(2 pi c t)."""
    t = np.asarray(t, dtype=float)
    if not c > 0 or np.any(t <= 0):
        raise DomainError("gaussian kernel needs c > 0 and t > 0")
    d = np.asarray(x, dtype=float) - np.asarray(z, dtype=float)
    result: np.ndarray = np.exp(-d * d / (2.0 * c * t)) / np.sqrt(2.0 * math.pi * c * t)
    return result


def _log_gaussian(c: float | np.ndarray, t: np.ndarray, d: np.ndarray) -> np.ndarray:
    result: np.ndarray = -d * d / (2.0 * c * t) - 0.5 * np.log(2.0 * math.pi * c * t)
    return result


def c0_constant(params: FrozenKernelParams) -> float:
    K, lam, t0, eta = params.K, params.lam, params.t0, params.eta
    growth = t0 * K * K / (4.0 * lam)
    if growth > MAX_EXPONENT:
        return math.inf
    first = 8.0 * K * lam**1.5 * math.exp(growth - 0.5) * t0 ** ((1.0 - eta) / 2.0)
    second = 2.0 ** ((3.0 * eta + 1.0) / 2.0) * (4.0 + math.e) * K * lam ** (2.0 + eta / 2.0)
    second *= math.exp(growth - 1.0 - eta / 2.0)
    return first + second


def chaining_constant(params: FrozenKernelParams) -> float:
    return CHAINING_CONSTANT


def majorant_constant(params: FrozenKernelParams) -> float:
    """C = C0 sqrt(8 lambda) exp(K^2 t0 / 2) times the chaining constant; +inf when it overflows."""
    c0 = c0_constant(params)
    if c0 == 0 or math.isinf(c0):
        return c0
    log_c = (
        math.log(c0)
        + 0.5 * math.log(8.0 * params.lam)
        + params.K * params.K * params.t0 / 2.0
        + math.log(chaining_constant(params))
    )
    return math.inf if log_c > MAX_EXPONENT else math.exp(log_c)


def _log_majorant_terms(m: np.ndarray, t: float, params: FrozenKernelParams) -> np.ndarray:
    beta = params.eta / 2.0
    C = majorant_constant(params)
    if C == 0:
        return np.full(m.shape, -np.inf)
    log_base = beta * math.log(t) + math.log(C) + float(scipy.special.gammaln(beta))
    result: np.ndarray = m * log_base - scipy.special.gammaln(1.0 + m * beta)
    return result


def series_majorant(m: int, t: float, params: FrozenKernelParams) -> float:
    """(t^{eta/2} C Gamma(eta/2))^m / Gamma(1 + m eta/2).

    The m-th term chains m kernel-bound factors |theta_hat| p^z <= C0 s^{eta/2 - 1}
    p_{8 lambda} over the gaps s_1, ..., s_m of 0 < r_m < ... < r_1 < t, with a last
    gap of exponent 0. The Gaussians chain exactly, and the remaining time
    integral is the Dirichlet integral

        int prod_i s_i^{eta/2 - 1} ds = Gamma(eta/2)^m t^{m eta/2} / Gamma(1 + m eta/2).

    The power of t is therefore m eta/2. The form t^{m(1 - eta/2)} often quoted
    for this series matches it only at eta = 1, and for eta < 1 it
    under-estimates the term at small t.
    """
    if m < 1:
        raise DomainError("series majorant starts at m = 1")
    if not t > 0:
        raise DomainError("t must be positive")
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.exp(_log_majorant_terms(np.array([float(m)]), t, params))[0])


def majorant_tail(M: int, t: float, params: FrozenKernelParams) -> float:
    """sum_{m > M} series_majorant(m, t); +inf when it overflows."""
    if M < 0:
        raise DomainError("truncation order must be nonnegative")
    if not t > 0:
        raise DomainError("t must be positive")
    C = majorant_constant(params)
    if C == 0:
        return 0.0
    beta = params.eta / 2.0
    log_z = beta * math.log(t) + math.log(C) + math.lgamma(beta)
    # terms peak near m = z^{1/beta} / beta
    log_peak = log_z / beta - math.log(beta)
    if log_peak > math.log(MAJORANT_MAX_TERMS):
        return math.inf
    last = int(max(M + 200, 2.0 * math.exp(log_peak) + 200))
    if last > MAJORANT_MAX_TERMS:
        return math.inf
    terms = _log_majorant_terms(np.arange(M + 1, last + 1, dtype=float), t, params)
    log_tail = float(scipy.special.logsumexp(terms))
    if log_tail > MAX_EXPONENT:
        return math.inf
    return math.exp(log_tail)


class TimeSampling(Enum):
    DIRICHLET = "dirichlet"
    UNIFORM = "uniform"


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class MonteCarloSpec:
    """Sample budget for the correction terms.

    Samples are drawn in fixed-size chunks; chunk k always uses the stream
    keyed by (seed, k), so the estimate does not depend on ``workers``.
    """

    samples: int = 200_000
    max_samples: int = 1_600_000
    chunk_size: int = 20_000
    rel_tol: float = 0.02
    abs_tol: float = 1e-4
    seed: int = 0
    workers: int = 1
    time_sampling: TimeSampling = TimeSampling.DIRICHLET
    max_order: int = DEFAULT_MAX_ORDER

    def __post_init__(self) -> None:
        if self.samples < 1 or self.chunk_size < 1 or self.max_samples < self.samples:
            raise DomainError("invalid Monte Carlo sample budget")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class TermEstimate:
    order: int
    value: float
    stderr: float
    samples: int
    low_precision: bool = False


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class DensityEstimate:
    t: float
    y: float
    x0: float
    frozen: float
    corrections: Tuple[TermEstimate, ...]
    tail_bound: float

    @property
    def total(self) -> float:
        return self.frozen + sum(c.value for c in self.corrections)

    @property
    def low_precision(self) -> bool:
        return any(c.low_precision for c in self.corrections)


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class ThetaBoundReport:
    max_ratio: float
    worst: Tuple[float, float, float]
    violations: int
    samples: int
    c0: float
    passed: bool


@final
class ParametrixModel:
    """Kernels of one side (b, sigma) of a coefficient pair."""

    __slots__ = ("drift", "diffusion", "params")

    def __init__(self, drift: Coefficient, diffusion: Coefficient, params: FrozenKernelParams):
        self.drift = drift
        self.diffusion = diffusion
        self.params = params

    @classmethod
    def from_coefficients(cls, drift: Coefficient, diffusion: Coefficient, t0: float) -> "ParametrixModel":
        return cls(drift, diffusion, FrozenKernelParams.from_coefficients(drift, diffusion, t0))

    @classmethod
    def from_pair(cls, pair: SdePair, perturbed: bool = False) -> "ParametrixModel":
        side = pair.perturbed if perturbed else pair.exact
        return cls.from_coefficients(side.drift, side.diffusion, pair.T)

    @property
    def is_constant(self) -> bool:
        return self.drift.constant is not None and self.diffusion.constant is not None

    def _a(self, x: np.ndarray) -> np.ndarray:
        sigma = self.diffusion(x)
        result: np.ndarray = sigma * sigma
        return result

    def frozen_kernel(self, t: float | np.ndarray, x: float | np.ndarray, y: float | np.ndarray, z: float | np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise DomainError("t must be positive")
        return np.exp(self._log_frozen(t, np.asarray(x, dtype=float), np.asarray(y, dtype=float), np.asarray(z, dtype=float)))

    def _log_frozen(self, t: np.ndarray, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        return _log_gaussian(self._a(z), t, y - x - self.drift(z) * t)

    def theta_hat(self, t: float | np.ndarray, x: float | np.ndarray, z: float | np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise DomainError("t must be positive")
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        a_x, a_z = self._a(x), self._a(z)
        b_x, b_z = self.drift(x), self.drift(z)
        w = z - x - b_z * t
        diffusion_part = 0.5 * (a_x - a_z) * (w * w / (t * t * a_z * a_z) - 1.0 / (t * a_z))
        drift_part = (b_x - b_z) * w / (t * a_z)
        result: np.ndarray = diffusion_part - drift_part
        return result

    # ------------------------------------------------------------------
    # Lemma bound |theta_hat| p^z <= C0 t^{eta/2 - 1} p_{8 lambda}
    # ------------------------------------------------------------------

    def check_theta_bound(
        self,
        n_samples: int = 100_000,
        rng_seed: int = 0,
        c0_scale: float = 1.0,
        x0: float = 0.0,
    ) -> ThetaBoundReport:
        """Largest sampled ratio of the two sides of the pointwise kernel bound.

        Times are log-uniform over six decades below t0; half of the (x, z)
        offsets are on the local scale sqrt(8 lambda t), half on the global one.
        """
        if n_samples < 2:
            raise DomainError("need at least two samples")
        params = self.params
        c0 = c0_constant(params) * c0_scale
        rng = np.random.default_rng(rng_seed)
        t = params.t0 * 10.0 ** (-6.0 * rng.uniform(0.0, 1.0, n_samples))
        global_scale = math.sqrt(8.0 * params.lam * params.t0)
        x = x0 + rng.uniform(-10.0, 10.0, n_samples) * global_scale
        local = np.sqrt(8.0 * params.lam * t)
        scale = np.where(np.arange(n_samples) % 2 == 0, local, global_scale)
        z = x + rng.uniform(-10.0, 10.0, n_samples) * scale

        theta = self.theta_hat(t, x, z)
        if c0 == 0:
            ratio = np.where(theta == 0, 0.0, np.inf)
        else:
            with np.errstate(divide="ignore"):
                log_lhs = np.log(np.abs(theta)) + self._log_frozen(t, x, z, z)
            log_rhs = math.log(c0) + (params.eta / 2.0 - 1.0) * np.log(t) + _log_gaussian(8.0 * params.lam, t, x - z)
            ratio = np.where(theta == 0, 0.0, np.exp(log_lhs - log_rhs))
        worst = int(np.argmax(ratio))
        violations = int(np.count_nonzero(ratio > 1.0 + THETA_BOUND_TOLERANCE))
        max_ratio = float(ratio[worst])
        if violations:
            logger.warning("kernel bound violated at %d of %d samples (max ratio %.4g)", violations, n_samples, max_ratio)
        return ThetaBoundReport(
            max_ratio=max_ratio,
            worst=(float(t[worst]), float(x[worst]), float(z[worst])),
            violations=violations,
            samples=n_samples,
            c0=c0,
            passed=violations == 0,
        )

    # ------------------------------------------------------------------
    # Correction terms
    # ------------------------------------------------------------------

    def _term_weights(self, m: int, t: float, y: float, x0: float, spec: MonteCarloSpec, chunk: int) -> np.ndarray:
        rng = counter_generator(spec.seed, chunk)
        size = spec.chunk_size
        eta = self.params.eta
        if spec.time_sampling is TimeSampling.DIRICHLET:
            alpha = np.array([eta / 2.0] * m + [1.0])
        else:
            alpha = np.ones(m + 1)
        gaps = rng.dirichlet(alpha, size)
        usable = np.all(gaps > MIN_GAP, axis=1)
        gaps = np.where(usable[:, None], gaps, 1.0 / (m + 1))
        log_q = (
            float(scipy.special.gammaln(alpha.sum()) - scipy.special.gammaln(alpha).sum())
            + np.sum((alpha - 1.0) * np.log(gaps), axis=1)
            - m * math.log(t)
        )
        steps = t * gaps
        # times[:, i] = t_i for i = 0..m, t_0 = t
        times = t - np.hstack([np.zeros((size, 1)), np.cumsum(steps[:, :m], axis=1)])

        # Brownian bridge from (0, x0) to (t, y) with variance scale 2 lambda
        c = 2.0 * self.params.lam
        points = np.empty((size, m + 2))
        points[:, 0] = y
        points[:, m + 1] = x0
        previous_time = np.zeros(size)
        for i in range(m, 0, -1):
            tau = times[:, i]
            remaining = t - previous_time
            mean = points[:, i + 1] + (y - points[:, i + 1]) * (tau - previous_time) / remaining
            variance = c * (tau - previous_time) * (t - tau) / remaining
            points[:, i] = mean + np.sqrt(variance) * rng.standard_normal(size)
            log_q = log_q + _log_gaussian(1.0, variance, points[:, i] - mean)
            previous_time = tau

        log_value = self._log_frozen(steps[:, m], points[:, m + 1], points[:, m], points[:, m])
        sign = np.ones(size)
        for i in range(m):
            s = steps[:, i]
            theta = self.theta_hat(s, points[:, i + 1], points[:, i])
            sign *= np.sign(theta)
            with np.errstate(divide="ignore"):
                log_value = log_value + np.log(np.abs(theta)) + self._log_frozen(s, points[:, i + 1], points[:, i], points[:, i])
        weights = np.where(usable & (sign != 0), sign * np.exp(log_value - log_q), 0.0)
        return weights

    def parametrix_term(self, m: int, t: float, y: float, x0: float, spec: MonteCarloSpec = MonteCarloSpec()) -> TermEstimate:
        """Monte Carlo estimate of the m-th correction term with its standard error."""
        if m < 1 or m > spec.max_order:
            raise DomainError(f"correction order must lie in [1, {spec.max_order}], got {m}")
        if not t > 0:
            raise DomainError("t must be positive")
        if self.is_constant:
            return TermEstimate(order=m, value=0.0, stderr=0.0, samples=0)

        chunks: list[np.ndarray] = []
        wanted = math.ceil(spec.samples / spec.chunk_size)
        ceiling = math.ceil(spec.max_samples / spec.chunk_size)
        low_precision = False
        with ThreadPoolExecutor(max_workers=spec.workers) as executor:
            while True:
                start = len(chunks)
                chunks.extend(executor.map(lambda k: self._term_weights(m, t, y, x0, spec, k), range(start, wanted)))
                weights = np.concatenate(chunks)
                value = float(np.mean(weights))
                stderr = float(np.std(weights, ddof=1) / math.sqrt(weights.size))
                if stderr <= max(spec.abs_tol, spec.rel_tol * abs(value)):
                    break
                if wanted >= ceiling:
                    low_precision = True
                    logger.warning(
                        "correction term %d at (t=%g, y=%g) is low precision: %.3e +- %.3e", m, t, y, value, stderr
                    )
                    break
                wanted = min(2 * wanted, ceiling)
        return TermEstimate(order=m, value=value, stderr=stderr, samples=int(weights.size), low_precision=low_precision)

    def density_estimate(self, t: float, y: float, x0: float, M: int = DEFAULT_MAX_ORDER, spec: MonteCarloSpec = MonteCarloSpec()) -> DensityEstimate:
        if not t > 0:
            raise DomainError("t must be positive")
        if M < 0 or M > spec.max_order:
            raise DomainError(f"truncation order must lie in [0, {spec.max_order}], got {M}")
        frozen = float(self.frozen_kernel(t, x0, y, y))
        corrections = tuple(self.parametrix_term(m, t, y, x0, spec) for m in range(1, M + 1))
        if self.is_constant:
            tail = 0.0
        else:
            envelope = float(gaussian_kernel(8.0 * self.params.lam, t, x0, y))
            tail = envelope * majorant_tail(M, t, self.params)
        return DensityEstimate(t=t, y=y, x0=x0, frozen=frozen, corrections=corrections, tail_bound=tail)


# ---------------------------------------------------------------------------
# Gaussian upper bound from simulated samples
# ---------------------------------------------------------------------------


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class GaussianBoundCertificate:
    c_hat: float
    c_hat_stderr: float
    c_hat_half: float
    relative_change: float
    region: Tuple[float, float]
    argmax: float
    finite: bool
    stable: bool

    @property
    def passed(self) -> bool:
        return self.finite and self.stable


def _ratio_maximum(kde: KdeResult, t: float, x0: float, lam: float) -> Tuple[float, float, float, Tuple[float, float]]:
    support = kde.stderr <= KDE_SUPPORT_REL_ERROR * kde.density
    if not np.any(support):
        raise PreconditionError("no grid point has adequate sample support")
    grid = kde.grid[support]
    envelope = gaussian_kernel(8.0 * lam, t, x0, grid)
    ratio = kde.density[support] / envelope
    worst = int(np.argmax(ratio))
    return float(ratio[worst]), float(kde.stderr[support][worst] / envelope[worst]), float(grid[worst]), (float(grid[0]), float(grid[-1]))


def certify_gaussian_bound(
    samples: np.ndarray,
    t: float,
    x0: float,
    lam: float,
    bandwidth: Optional[float] = None,
    grid: Optional[np.ndarray] = None,
    stability: float = CERTIFICATE_STABILITY,
) -> GaussianBoundCertificate:
    """C_hat = max over the supported grid of kde(y) / p_{8 lambda}(t, x0, y).

    Stability compares against the estimate from the first half of the sample.
    ``lam`` may lie below 1; a too-narrow envelope then fails the certificate.
    """
    if not t > 0 or not lam > 0:
        raise DomainError("need t > 0 and lambda > 0")
    samples = np.asarray(samples, dtype=float)
    full = kde_density(samples, bandwidth=bandwidth, grid=grid)
    half = kde_density(samples[: samples.size // 2], bandwidth=bandwidth, grid=full.grid)
    c_hat, c_hat_stderr, argmax, region = _ratio_maximum(full, t, x0, lam)
    c_half, _, _, _ = _ratio_maximum(half, t, x0, lam)
    requested = (float(full.grid[0]), float(full.grid[-1]))
    if region != requested:
        logger.warning("sample support only covers [%.4g, %.4g] of [%.4g, %.4g]", *region, *requested)
    change = abs(c_hat - c_half) / c_hat if c_hat > 0 else 0.0
    return GaussianBoundCertificate(
        c_hat=c_hat,
        c_hat_stderr=c_hat_stderr,
        c_hat_half=c_half,
        relative_change=change,
        region=region,
        argmax=argmax,
        finite=math.isfinite(c_hat),
        stable=change <= stability,
    )


# ---------------------------------------------------------------------------
# Elementary inequalities behind the kernel bound
# ---------------------------------------------------------------------------


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class InequalityCheck:
    name: str
    max_excess: float
    passed: bool


def inequality_micro_suite(n: int = 1_000_000, seed: int = 0, lam: float = 1.0, eta: float = 1.0) -> Sequence[InequalityCheck]:
    """u exp(-u^2 / 4) <= sqrt(2/e) and |d|^eta t^{-eta/2} exp(-d^2 / (16 lambda t)) <= (8 lambda eta / e)^{eta/2}."""
    rng = np.random.default_rng(seed)
    u = np.abs(rng.normal(0.0, 3.0, n))
    first = u * np.exp(-u * u / 4.0) - math.sqrt(2.0 / math.e)
    t = 10.0 ** rng.uniform(-6.0, 1.0, n)
    d = rng.normal(0.0, 1.0, n) * np.sqrt(16.0 * lam * t) * rng.uniform(0.0, 4.0, n)
    second = np.abs(d) ** eta * t ** (-eta / 2.0) * np.exp(-d * d / (16.0 * lam * t)) - (8.0 * lam * eta / math.e) ** (eta / 2.0)
    checks = []
    for name, excess, scale in (
        ("gaussian-moment", first, math.sqrt(2.0 / math.e)),
        ("holder-moment", second, (8.0 * lam * eta / math.e) ** (eta / 2.0)),
    ):
        worst = float(np.max(excess))
        checks.append(InequalityCheck(name=name, max_excess=worst, passed=worst <= 1e-12 * scale))
    return checks

"""
Gaussian-weighted L^p norms and the perturbation size epsilon_p of a pair.

The weight is exp(-|x - x0|^2 / (16 lambda T)); integrals are truncated to
|x - x0| <= R sqrt(8 lambda T) and the discarded tail is bounded explicitly.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Final, Iterable, Optional, Sequence, Tuple, Union, final

import numpy as np
import scipy.special

from .coeffs import Coefficient, SdePair
from .errors import DomainError
from .quadrature import DEFAULT_QUADRATURE, QuadratureSpec, integrate

logger = logging.getLogger(__name__)

ScalarFunction = Callable[[float], float]
Integrand = Union[Coefficient, ScalarFunction]

# Grow the truncation radius by this factor until the tail bound is negligible
RADIUS_GROWTH: Final[float] = 1.5
MAX_RADIUS: Final[float] = 60.0
EPSILON_CSV_HEADER: Final[Tuple[str, ...]] = ("p", "norm_b", "norm_sigma", "epsilon_p", "meets_A_p")


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class WeightedMeasure:
    x0: float
    lam: float
    T: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.x0):
            raise DomainError("x0 must be finite")
        if not self.lam >= 1:
            raise DomainError(f"lambda must be >= 1, got {self.lam}")
        if not self.T > 0:
            raise DomainError(f"T must be positive, got {self.T}")

    @classmethod
    def for_pair(cls, pair: SdePair) -> "WeightedMeasure":
        return cls(x0=pair.x0, lam=pair.effective_lambda, T=pair.T)

    @property
    def scale(self) -> float:
        """sqrt(8 lambda T), the standard deviation of the weight."""
        return math.sqrt(8.0 * self.lam * self.T)

    @property
    def half_mass(self) -> float:
        """sqrt(pi lambda T)."""
        return math.sqrt(math.pi * self.lam * self.T)

    @property
    def total_mass(self) -> float:
        return 4.0 * self.half_mass

    def weight(self, x: np.ndarray | float) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.x0
        result: np.ndarray = np.exp(-d * d / (16.0 * self.lam * self.T))
        return result

    def window(self, radius: float) -> Tuple[float, float]:
        half = radius * self.scale
        return self.x0 - half, self.x0 + half


def tail_bound(sup_f: float, p: float, m: WeightedMeasure, radius: float) -> float:
    """Upper bound of int_{|x - x0| > R sqrt(8 lambda T)} |f|^p w for |f| <= sup_f."""
    return sup_f**p * math.sqrt(16.0 * math.pi * m.lam * m.T) * float(scipy.special.erfc(radius / math.sqrt(2.0)))


def _as_scalar(f: Integrand) -> Tuple[ScalarFunction, Tuple[float, ...]]:
    if isinstance(f, Coefficient):
        return f.value, f.breakpoints
    return f, ()


def difference(
    f: Coefficient, g: Coefficient
) -> Tuple[ScalarFunction, Tuple[float, ...]]:
    """x -> f(x) - g(x) with the union of both breakpoint sets."""
    if f is g:
        return (lambda x: 0.0), ()

    def diff(x: float) -> float:
        return f.value(x) - g.value(x)

    return diff, tuple(sorted(set(f.breakpoints) | set(g.breakpoints)))


def weighted_lp_norm(
    f: Integrand,
    p: float,
    m: WeightedMeasure,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    breakpoints: Iterable[float] = (),
    sup_bound: Optional[float] = None,
) -> float:
    """(int |f|^p exp(-|x - x0|^2 / (16 lambda T)) dx)^(1/p)."""
    return weighted_lp_power(f, p, m, quad, breakpoints, sup_bound) ** (1.0 / p)


def weighted_lp_power(
    f: Integrand,
    p: float,
    m: WeightedMeasure,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    breakpoints: Iterable[float] = (),
    sup_bound: Optional[float] = None,
) -> float:
    """||f||_p^p, the quantity the perturbation size is made of."""
    if not p >= 1:
        raise DomainError(f"p must be >= 1, got {p}")
    func, own = _as_scalar(f)
    points = tuple(own) + tuple(breakpoints)

    radius = quad.truncation_radius
    if sup_bound is not None:
        while tail_bound(sup_bound, p, m, radius) > quad.abs_tol and radius < MAX_RADIUS:
            radius *= RADIUS_GROWTH
        logger.debug("truncation radius %.3g, tail bound %.3e", radius, tail_bound(sup_bound, p, m, radius))

    def integrand(x: float) -> float:
        return float(abs(func(x)) ** p * m.weight(x))

    lo, hi = m.window(radius)
    value, _ = integrate(integrand, lo, hi, points=[b for b in points if lo < b < hi], spec=quad)
    return max(value, 0.0)


def indicator_norm(a: float, p: float, m: WeightedMeasure) -> float:
    """Closed form of the weighted norm of 1_{[x0 - a, x0 + a]}."""
    if a < 0:
        raise DomainError("half-width must be nonnegative")
    width = math.sqrt(16.0 * m.lam * m.T)
    return (width * math.sqrt(math.pi) * math.erf(a / width)) ** (1.0 / p)


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class EpsilonReport:
    """epsilon_p = max(||b - b_hat||_p^p, ||sigma - sigma_hat||_{2p}^{2p}) and the A-(p) verdict."""

    p: float
    drift_distance: float
    diffusion_distance: float
    epsilon: float
    meets_assumption: bool
    alpha: Optional[float] = None
    log_condition: Optional[bool] = None

    @property
    def norm_b(self) -> float:
        return self.drift_distance ** (1.0 / self.p)

    @property
    def norm_sigma(self) -> float:
        return self.diffusion_distance ** (1.0 / (2.0 * self.p))

    def csv_row(self) -> Tuple[str, ...]:
        return (
            f"{self.p:g}",
            f"{self.norm_b:.12g}",
            f"{self.norm_sigma:.12g}",
            f"{self.epsilon:.12g}",
            "true" if self.meets_assumption else "false",
        )


def epsilon_p(
    pair: SdePair,
    p: float,
    m: Optional[WeightedMeasure] = None,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> EpsilonReport:
    """Perturbation size of a pair under the weighted measure of the pair.

    A-(p) asks for epsilon_p < 1; in the alpha = 0 regime it additionally asks
    for 1 / log(1 / epsilon_p) < 1, i.e. log(1 / epsilon_p) > 1, reported as ``log_condition``.
    """
    if not p >= 1:
        raise DomainError(f"p must be >= 1, got {p}")
    measure = WeightedMeasure.for_pair(pair) if m is None else m
    alpha: Optional[float] = None
    if pair.exact.diffusion.holder_eta is not None and pair.perturbed.diffusion.holder_eta is not None:
        alpha = pair.effective_alpha

    if pair.is_identical:
        drift = diffusion = 0.0
    else:
        drift = _distance(pair.exact.drift, pair.perturbed.drift, p, measure, quad)
        diffusion = _distance(pair.exact.diffusion, pair.perturbed.diffusion, 2 * p, measure, quad)
    epsilon = max(drift, diffusion)

    log_condition: Optional[bool] = None
    meets = epsilon < 1.0
    if alpha is not None and alpha == 0.0:
        log_condition = epsilon == 0.0 or math.log(1.0 / epsilon) > 1.0 if meets else False
        meets = meets and log_condition
    logger.debug("epsilon_%g = %.6e (drift %.6e, diffusion %.6e)", p, epsilon, drift, diffusion)
    return EpsilonReport(
        p=p,
        drift_distance=drift,
        diffusion_distance=diffusion,
        epsilon=epsilon,
        meets_assumption=meets,
        alpha=alpha,
        log_condition=log_condition,
    )


def _distance(f: Coefficient, g: Coefficient, p: float, m: WeightedMeasure, quad: QuadratureSpec) -> float:
    if f is g:
        return 0.0
    func, points = difference(f, g)
    sup_bound = _sup_difference(f, g)
    return weighted_lp_power(func, p, m, quad, points, sup_bound)


def _sup_difference(f: Coefficient, g: Coefficient) -> Optional[float]:
    # sup |f - g| is only known for bounded drifts; diffusions use the radius as given
    if f.holder_eta is None and f.bound_K is not None and g.bound_K is not None:
        return f.bound_K + g.bound_K
    return None


def epsilon_table(reports: Sequence[EpsilonReport]) -> Sequence[Tuple[str, ...]]:
    return [EPSILON_CSV_HEADER, *(r.csv_row() for r in reports)]

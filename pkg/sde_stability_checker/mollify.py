"""
Standard bump-kernel mollification of coefficients.

``mollify(c, n)`` returns ``c_n = c * rho_n`` with ``rho_n(x) = n rho(n x)`` and
``rho(x) = mu exp(-1 / (1 - x^2))`` on (-1, 1). Piecewise-constant coefficients
use the closed form through the bump CDF; every other coefficient is convolved
with a composite Gauss-Legendre rule split at the (rescaled) breakpoints of the
base coefficient and normalised by the discrete mass of rho, so the result is a
convex combination of base values.
"""

import logging
import math
import threading
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Final, Optional, Sequence, Tuple, final

import numpy as np
import scipy.interpolate

from .coeffs import Coefficient, CoefficientKind, PiecewiseConstant
from .errors import ConfigurationError, DomainError, PreconditionError
from .quadrature import DEFAULT_QUADRATURE, CumulativeTable, QuadratureSpec, integrate, reference_rule
from .weighted_norm import WeightedMeasure

logger = logging.getLogger(__name__)

# Scalar evaluations of a mollified coefficient are memoised per coefficient
SCALAR_CACHE_SIZE: Final[int] = 65_536
# Convolution evaluates the base on (points x nodes); keep the chunk bounded
EVALUATION_CHUNK: Final[int] = 2048
SIMULATION_TABLE_STEP: Final[float] = 1e-3


def _unnormalised_bump(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1.0
    safe = np.where(inside, x, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - safe * safe)), 0.0)


@final
@dataclass(frozen=True, slots=True)
class BumpKernel:
    """rho on (-1, 1) together with its normalisation and CDF."""

    mu: float
    cdf_table: CumulativeTable = field(compare=False, repr=False)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.mu * _unnormalised_bump(x)

    def cdf(self, u: np.ndarray) -> np.ndarray:
        """int_{-1}^{u} rho, equal to 0 below -1 and 1 above 1."""
        u = np.asarray(u, dtype=float)
        return self.cdf_table(u) / self.cdf_table.total


@lru_cache(maxsize=1)
def bump_kernel() -> BumpKernel:
    mass, _ = integrate(lambda x: float(_unnormalised_bump(np.array([x]))[0]), -1.0, 1.0)
    table = CumulativeTable(_unnormalised_bump, -1.0, 1.0, panels=512, nodes=20)
    logger.debug("bump normalisation mu=%.15f", 1.0 / mass)
    return BumpKernel(1.0 / mass, table)


def bump(x: np.ndarray) -> np.ndarray:
    return bump_kernel()(x)


@final
class _PiecewiseMollifier:
    """sum_k v_k [F(n(x - a_k)) - F(n(x - a_{k+1}))] with a_0 = -inf and a_K = +inf."""

    __slots__ = ("_breaks", "_values", "_n", "_kernel")

    def __init__(self, pieces: PiecewiseConstant, n: int):
        self._breaks = np.asarray(pieces.breaks, dtype=float)
        self._values = np.asarray(pieces.values, dtype=float)
        self._n = n
        self._kernel = bump_kernel()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        cdf = self._kernel.cdf(self._n * (flat[:, None] - self._breaks[None, :]))
        ones = np.ones((flat.size, 1))
        zeros = np.zeros((flat.size, 1))
        mass = np.hstack([ones, cdf]) - np.hstack([cdf, zeros])
        result: np.ndarray = (mass @ self._values).reshape(x.shape)
        return result


@final
class _ConvolutionMollifier:
    """int rho(z) c(x - z / n) dz by a jump-split composite Gauss-Legendre rule."""

    __slots__ = ("_base", "_n", "_breaks", "_u", "_w", "_kernel", "scalar")

    def __init__(self, base: Coefficient, n: int, spec: QuadratureSpec):
        self._base = base
        self._n = n
        self._breaks = np.asarray(base.breakpoints, dtype=float)
        self._u, self._w = reference_rule(spec.panels, spec.nodes, graded=True)
        self._kernel = bump_kernel()
        self.scalar: Callable[[float], float] = lru_cache(maxsize=SCALAR_CACHE_SIZE)(self._scalar)

    def _scalar(self, x: float) -> float:
        return float(self._evaluate(np.array([x]))[0])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.size == 1:
            return np.full(x.shape, self.scalar(float(x.ravel()[0])))
        flat = x.ravel()
        out = np.empty_like(flat)
        for start in range(0, flat.size, EVALUATION_CHUNK):
            stop = start + EVALUATION_CHUNK
            out[start:stop] = self._evaluate(flat[start:stop])
        return out.reshape(x.shape)

    def _evaluate(self, x: np.ndarray) -> np.ndarray:
        m = x.size
        # substitution point z = n (x - a) of every breakpoint a, kept inside (-1, 1)
        cuts = np.clip(self._n * (x[:, None] - self._breaks[None, :]), -1.0, 1.0)
        bounds = np.sort(np.hstack([np.full((m, 1), -1.0), cuts, np.full((m, 1), 1.0)]), axis=1)
        numerator = np.zeros(m)
        denominator = np.zeros(m)
        for s in range(bounds.shape[1] - 1):
            left = bounds[:, s]
            length = bounds[:, s + 1] - left
            z = left[:, None] + length[:, None] * self._u[None, :]
            weights = length[:, None] * self._w[None, :] * self._kernel(z)
            values = self._base(x[:, None] - z / self._n)
            numerator += np.sum(weights * values, axis=1)
            denominator += np.sum(weights, axis=1)
        result: np.ndarray = numerator / denominator
        return result


@final
class TabulatedEvaluator:
    """Cubic-spline table of a smooth coefficient over a window, exact outside it.

    The table is built on first use, once, behind a lock.
    """

    __slots__ = ("_func", "_lo", "_hi", "_step", "_spline", "_lock")

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, step: float):
        if not hi > lo or not step > 0:
            raise DomainError("tabulation window must be nonempty")
        self._func = func
        self._lo = lo
        self._hi = hi
        self._step = step
        self._spline: Optional[scipy.interpolate.CubicSpline] = None
        self._lock = threading.Lock()

    def build(self) -> "TabulatedEvaluator":
        with self._lock:
            if self._spline is None:
                count = int(math.ceil((self._hi - self._lo) / self._step)) + 1
                grid = np.linspace(self._lo, self._hi, count)
                self._spline = scipy.interpolate.CubicSpline(grid, self._func(grid))
                logger.debug("tabulated coefficient on %d nodes over [%g, %g]", count, self._lo, self._hi)
        return self

    def __call__(self, x: np.ndarray) -> np.ndarray:
        spline = self.build()._spline
        assert spline is not None
        x = np.asarray(x, dtype=float)
        inside = (x >= self._lo) & (x <= self._hi)
        if inside.all():
            result: np.ndarray = spline(x)
            return result
        out = np.empty_like(x)
        out[inside] = spline(x[inside])
        out[~inside] = self._func(x[~inside])
        return out


def mollify(c: Coefficient, n: int, quad: QuadratureSpec = DEFAULT_QUADRATURE) -> Coefficient:
    """The mollified coefficient c_n with the metadata of c carried over."""
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise DomainError(f"mollification level must be an integer >= 1, got {n}")
    if c.bound_K is None:
        raise PreconditionError(f"coefficient '{c.name}' must declare bound_K before mollifying")
    n = int(n)
    name = f"mollified({c.name}, {n})"
    spec = None if c.spec is None else replace(c.spec, mollify_n=n)

    if c.constant is not None:
        return replace(c, name=name, kind=CoefficientKind.MOLLIFIED, base=c, mollify_n=n, spec=spec)

    func: Callable[[np.ndarray], np.ndarray]
    if c.pieces is not None:
        func = _PiecewiseMollifier(c.pieces, n)
    else:
        func = _ConvolutionMollifier(c, n, quad)
    shifted = {b + s / n for b in c.breakpoints for s in (-1.0, 0.0, 1.0)}
    return Coefficient(
        name=name,
        kind=CoefficientKind.MOLLIFIED,
        func=func,
        bound_K=c.bound_K,
        osl_L=c.osl_L,
        holder_eta=c.holder_eta,
        ellipticity_lambda=c.ellipticity_lambda,
        breakpoints=tuple(sorted(shifted)),
        base=c,
        mollify_n=n,
        spec=spec,
    )


def mollification_ladder(
    c: Coefficient, ladder: Sequence[int], quad: QuadratureSpec = DEFAULT_QUADRATURE
) -> Tuple[Coefficient, ...]:
    if list(ladder) != sorted(set(ladder)):
        raise DomainError("mollification ladder must be strictly increasing")
    return tuple(mollify(c, n, quad) for n in ladder)


def simulation_evaluator(
    c: Coefficient, window: Tuple[float, float], step: float = SIMULATION_TABLE_STEP
) -> Callable[[np.ndarray], np.ndarray]:
    """Fast array evaluator for the Euler loop.

    Mollified coefficients are tabulated on ``window`` with at least 64 nodes
    per kernel width 1/n; everything else is evaluated directly.
    """
    if isinstance(c.func, (_ConvolutionMollifier, _PiecewiseMollifier)) and c.mollify_n is not None:
        spacing = min(step, 1.0 / (64.0 * c.mollify_n))
        return TabulatedEvaluator(c.func, window[0], window[1], spacing).build()
    return c.func


def mollification_distance_bound(c: Coefficient, n: int, p: float, measure: WeightedMeasure) -> float:
    """||c - c_n||_{2p}^{2p} <= 4 K^{2p} sqrt(pi lambda T) / n^{2 p eta} for an eta-Holder diffusion."""
    if n < 1 or p < 1:
        raise DomainError("need n >= 1 and p >= 1")
    if c.holder_eta is None:
        raise ConfigurationError(f"coefficient '{c.name}' does not declare it", "holder_eta")
    K = c.require("bound_K")
    return 4.0 * K ** (2 * p) * measure.half_mass / float(n) ** (2 * p * c.holder_eta)


def drift_distance_bound(c: Coefficient, p: float, measure: WeightedMeasure) -> float:
    """||b - b_n||_p^p <= 2^{p+2} K^p sqrt(pi lambda T) for a drift bounded by K."""
    if p < 1:
        raise DomainError("need p >= 1")
    K = c.require("bound_K")
    return 2.0 ** (p + 2) * K**p * measure.half_mass


__all__ = [
    "BumpKernel",
    "TabulatedEvaluator",
    "bump",
    "bump_kernel",
    "drift_distance_bound",
    "mollification_distance_bound",
    "mollification_ladder",
    "mollify",
    "simulation_evaluator",
]

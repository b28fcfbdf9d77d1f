"""
Quadrature plumbing shared by the mollifier, the weighted norms and the
Yamada-Watanabe functions.

Two families of rules live here:

* ``integrate`` wraps ``scipy.integrate.quad`` and splits the interval at
  declared breakpoints (jumps or kinks of the integrand), one adaptive call per
  piece.
* ``reference_rule`` / ``CumulativeTable`` are fixed composite Gauss-Legendre
  rules that can be evaluated on whole numpy arrays at once. They back the
  inner loops (Monte Carlo, property grids) where one adaptive call per point is
  too slow.
"""

import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Final, Iterable, Optional, Sequence, Tuple, final

import numpy as np
import scipy.integrate

from .errors import DomainError, QuadratureError

logger = logging.getLogger(__name__)

ArrayFunction = Callable[[np.ndarray], np.ndarray]
ScalarFunction = Callable[[float], float]

DEFAULT_REL_TOL: Final[float] = 1e-8
DEFAULT_ABS_TOL: Final[float] = 1e-12
DEFAULT_TRUNCATION_RADIUS: Final[float] = 10.0
# quad reports its own error estimate; we only fail when it is far off target
ERROR_SLACK: Final[float] = 10.0


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class QuadratureSpec:
    """Tolerances and rule sizes used by every quadrature in the package."""

    rel_tol: float = DEFAULT_REL_TOL
    abs_tol: float = DEFAULT_ABS_TOL
    limit: int = 500
    truncation_radius: float = DEFAULT_TRUNCATION_RADIUS
    panels: int = 8
    nodes: int = 24

    def __post_init__(self) -> None:
        if self.rel_tol <= 0 or self.abs_tol < 0:
            raise DomainError("quadrature tolerances must be positive")
        if self.truncation_radius <= 0:
            raise DomainError("truncation radius must be positive")
        if self.panels < 1 or self.nodes < 2 or self.limit < 1:
            raise DomainError("quadrature rule sizes must be positive")

    def with_tolerance(self, rel_tol: float) -> "QuadratureSpec":
        return replace(self, rel_tol=rel_tol)


DEFAULT_QUADRATURE: Final[QuadratureSpec] = QuadratureSpec()


def _split_points(a: float, b: float, points: Optional[Iterable[float]]) -> list[float]:
    inner = sorted({float(p) for p in points or () if a < p < b})
    return [a, *inner, b]


def integrate(
    func: ScalarFunction,
    a: float,
    b: float,
    points: Optional[Iterable[float]] = None,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
) -> Tuple[float, float]:
    """Adaptive integral of ``func`` over [a, b], split at ``points``.

    Returns (value, absolute error estimate). Raises QuadratureError when the
    error estimate is far above max(abs_tol, rel_tol * |value|).
    """
    if not (np.isfinite(a) and np.isfinite(b)):
        raise DomainError("integration limits must be finite")
    if b < a:
        value, error = integrate(func, b, a, points, spec)
        return -value, error
    if a == b:
        return 0.0, 0.0

    edges = _split_points(a, b, points)
    total = 0.0
    error = 0.0
    for left, right in zip(edges[:-1], edges[1:]):
        value, piece_error = scipy.integrate.quad(
            func,
            left,
            right,
            epsabs=spec.abs_tol,
            epsrel=spec.rel_tol * 1e-2,
            limit=spec.limit,
        )
        total += value
        error += piece_error

    target = max(spec.abs_tol, spec.rel_tol * abs(total))
    if error > ERROR_SLACK * target:
        raise QuadratureError(
            f"quadrature on [{a}, {b}] reached error {error:.3e} > target {target:.3e}"
        )
    return total, error


@lru_cache(maxsize=64)
def reference_rule(panels: int, nodes: int, graded: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on [0, 1].

    With ``graded`` the nodes are pushed toward both ends by u -> 3u^2 - 2u^3,
    which tames |z - z0|^eta kinks sitting at the ends of a segment.
    """
    base_x, base_w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)
    centre = 0.5 * (edges[:-1] + edges[1:])
    u = (centre[:, None] + half[:, None] * base_x[None, :]).ravel()
    w = (half[:, None] * base_w[None, :]).ravel()
    if graded:
        w = w * 6.0 * u * (1.0 - u)
        u = u * u * (3.0 - 2.0 * u)
    u.setflags(write=False)
    w.setflags(write=False)
    return u, w


@final
class CumulativeTable:
    """Cached cumulative integral F(x) = int_lo^x f(z) dz of a smooth function.

    Panel boundary values are integrated once with Gauss-Legendre; evaluation at
    an arbitrary point adds a Gauss-Legendre partial integral from the nearest
    boundary on the left. Both steps are vectorised.
    """

    __slots__ = ("lo", "hi", "_func", "_edges", "_cumulative", "_base_x", "_base_w")

    def __init__(self, func: ArrayFunction, lo: float, hi: float, panels: int = 256, nodes: int = 20):
        if not hi > lo:
            raise DomainError(f"empty table interval [{lo}, {hi}]")
        self.lo = float(lo)
        self.hi = float(hi)
        self._func = func
        self._base_x, self._base_w = np.polynomial.legendre.leggauss(nodes)
        self._edges = np.linspace(self.lo, self.hi, panels + 1)
        left = self._edges[:-1]
        right = self._edges[1:]
        pieces = self._partial(left, right)
        self._cumulative = np.concatenate(([0.0], np.cumsum(pieces)))

    @property
    def total(self) -> float:
        return float(self._cumulative[-1])

    def _partial(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        half = 0.5 * (right - left)
        z = (left + half)[:, None] + half[:, None] * self._base_x[None, :]
        values = self._func(z.ravel()).reshape(z.shape)
        result: np.ndarray = half * (values @ self._base_w)
        return result

    def __call__(self, x: np.ndarray | float) -> np.ndarray:
        points = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        flat = points.ravel()
        index = np.clip(np.searchsorted(self._edges, flat, side="right") - 1, 0, len(self._edges) - 2)
        left = self._edges[index]
        values = self._cumulative[index] + self._partial(left, flat)
        return values.reshape(points.shape)


def breakpoints_in(points: Sequence[float], lo: float, hi: float) -> Tuple[float, ...]:
    """Sorted breakpoints strictly inside (lo, hi)."""
    return tuple(sorted({float(p) for p in points if lo < p < hi}))

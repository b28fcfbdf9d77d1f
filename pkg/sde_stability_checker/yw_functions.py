"""
Yamada-Watanabe approximations of |x|.

For delta > 1 and kappa in (0, 1), psi is a nonnegative density supported on
[kappa / delta, kappa] and

    phi(x) = int_0^|x| int_0^y psi(z) dz dy

is even, C^2 away from the origin, linear with slope 1 beyond kappa. phi and
phi' are computed from cumulative tables of psi and z psi, so they are cheap on
whole grids.

Two shapes are available. ``bump`` is the smooth bump exp(-1 / ((kappa - z)(z
- kappa / delta))); it is normalised to unit mass but generally exceeds the
2 / (z log delta) envelope. ``log_sine`` is 2 sin^2(pi u) / (z log delta) in the
log-coordinate u = log(z delta / kappa) / log delta; it has unit mass exactly
and stays under the envelope everywhere.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Final, Optional, Tuple, final

import numpy as np

from .coeffs import Coefficient, sign_drift
from .errors import DomainError
from .quadrature import CumulativeTable, integrate

logger = logging.getLogger(__name__)

MIN_TABLE_PANELS: Final[int] = 32
MAX_TABLE_PANELS: Final[int] = 20_000
PROPERTY_TOLERANCE: Final[float] = 1e-9
MASS_TOLERANCE: Final[float] = 1e-6


class YwShape(Enum):
    BUMP = "bump"
    LOG_SINE = "log_sine"


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class YwParams:
    delta: float
    kappa: float
    shape: YwShape = YwShape.BUMP

    def __post_init__(self) -> None:
        if not self.delta > 1:
            raise DomainError(f"delta must be > 1, got {self.delta}")
        if not 0 < self.kappa < 1:
            raise DomainError(f"kappa must lie in (0, 1), got {self.kappa}")

    @property
    def lower(self) -> float:
        return self.kappa / self.delta

    @property
    def width(self) -> float:
        return self.kappa - self.lower

    @property
    def log_mu(self) -> float:
        """log of the constant making the displayed psi a probability density."""
        shift = 4.0 / (self.width * self.width) if self.shape is YwShape.BUMP else 0.0
        return shift + math.log(_normalisation(self))

    @property
    def mu(self) -> float:
        return math.inf if self.log_mu > 709.0 else math.exp(self.log_mu)

    @property
    def c(self) -> float:
        """The constant c in phi(x) = |x| - c for |x| >= kappa."""
        mass, first_moment = _tables(self)
        return first_moment.total / mass.total


def _raw_psi(z: np.ndarray, p: YwParams) -> np.ndarray:
    """Unnormalised psi; the bump is divided by its peak value exp(-4 / width^2)."""
    z = np.asarray(z, dtype=float)
    inside = (z > p.lower) & (z < p.kappa)
    safe = np.where(inside, z, 0.5 * (p.lower + p.kappa))
    if p.shape is YwShape.BUMP:
        peak = 4.0 / (p.width * p.width)
        values = np.exp(peak - 1.0 / ((p.kappa - safe) * (safe - p.lower)))
    else:
        log_delta = math.log(p.delta)
        u = np.log(safe / p.lower) / log_delta
        values = 2.0 * np.sin(math.pi * u) ** 2 / (safe * log_delta)
    return np.where(inside, values, 0.0)


@lru_cache(maxsize=128)
def _normalisation(p: YwParams) -> float:
    if p.shape is YwShape.LOG_SINE:
        return 1.0
    mass, _ = integrate(lambda z: float(_raw_psi(np.array([z]), p)[0]), p.lower, p.kappa)
    if not mass > 0:
        raise DomainError(f"support of psi too narrow to normalise (delta={p.delta}, kappa={p.kappa})")
    return 1.0 / mass


@lru_cache(maxsize=128)
def _tables(p: YwParams) -> Tuple[CumulativeTable, CumulativeTable]:
    mu = _normalisation(p)
    panels = min(MAX_TABLE_PANELS, max(MIN_TABLE_PANELS, math.ceil(24.0 / p.width)))
    mass = CumulativeTable(lambda z: mu * _raw_psi(z, p), p.lower, p.kappa, panels=panels)
    first_moment = CumulativeTable(lambda z: z * mu * _raw_psi(z, p), p.lower, p.kappa, panels=panels)
    logger.debug("yw tables for %s on %d panels, mass %.12f", p, panels, mass.total)
    return mass, first_moment


def yw_params(delta: float, kappa: float, shape: YwShape = YwShape.BUMP) -> YwParams:
    """Validated parameters with the normalisation computed up front."""
    p = YwParams(delta=delta, kappa=kappa, shape=shape)
    _tables(p)
    return p


def psi(z: np.ndarray | float, p: YwParams) -> np.ndarray:
    return _normalisation(p) * _raw_psi(np.asarray(z, dtype=float), p)


def _Psi(s: np.ndarray, p: YwParams) -> np.ndarray:
    mass, _ = _tables(p)
    inside = mass(s) / mass.total
    return np.where(s <= p.lower, 0.0, np.where(s >= p.kappa, 1.0, inside))


def phi(x: np.ndarray | float, p: YwParams) -> np.ndarray:
    s = np.abs(np.asarray(x, dtype=float))
    mass, first_moment = _tables(p)
    total = mass.total
    inside = s * mass(s) / total - first_moment(s) / total
    c = first_moment.total / total
    return np.where(s <= p.lower, 0.0, np.where(s >= p.kappa, s - c, inside))


def phi_prime(x: np.ndarray | float, p: YwParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    result: np.ndarray = np.sign(x) * _Psi(np.abs(x), p)
    return result


def phi_double_prime(x: np.ndarray | float, p: YwParams) -> np.ndarray:
    """psi(|x|); undefined at the origin."""
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise DomainError("phi'' is not defined at x = 0")
    return psi(np.abs(x), p)


def yw_bound(x: np.ndarray | float, p: YwParams) -> np.ndarray:
    """The envelope 2 / (|x| log delta) on kappa / delta <= |x| <= kappa, zero elsewhere."""
    s = np.abs(np.asarray(x, dtype=float))
    inside = (s >= p.lower) & (s <= p.kappa)
    safe = np.where(inside, s, 1.0)
    return np.where(inside, 2.0 / (safe * math.log(p.delta)), 0.0)


def c_constant(p: YwParams) -> float:
    return p.c


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class PropertyResult:
    name: str
    passed: bool
    worst: float
    witness: Optional[float] = None


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class YwReport:
    params: YwParams
    mu: float
    c: float
    properties: Tuple[PropertyResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.properties)

    def property(self, name: str) -> PropertyResult:
        for r in self.properties:
            if r.name == name:
                return r
        raise KeyError(name)


def _worst(name: str, excess: np.ndarray, grid: np.ndarray, tol: float) -> PropertyResult:
    """Pass when every excess value is <= tol; report the largest."""
    index = int(np.argmax(excess))
    worst = float(excess[index])
    return PropertyResult(name=name, passed=worst <= tol, worst=worst, witness=float(grid[index]))


def validate_properties(
    p: YwParams,
    grid_points: int = 10_000,
    tolerance: float = PROPERTY_TOLERANCE,
    drift: Optional[Coefficient] = None,
    n_pairs: int = 10_000,
    seed: int = 0,
) -> YwReport:
    """Check the defining properties of phi on a grid.

    * ``mass``: psi integrates to 1 (independent adaptive quadrature)
    * ``sign``: phi'(x) x >= 0, phi' = 0 on |x| <= kappa/delta, phi' = sign(x) beyond kappa
    * ``slope``: |phi'| <= 1
    * ``lower``: |x| <= kappa + phi(x)
    * ``curvature``: phi''(x) <= 2 / (|x| log delta) on the support
    * ``osl``: phi'(x - y)(b(x) - b(y)) <= L |x - y| for a one-sided Lipschitz drift b
    """
    if grid_points < 2:
        raise DomainError("need at least two grid points")
    outer = np.linspace(-3.0 * p.kappa, 3.0 * p.kappa, 2 * (grid_points // 2))
    support = np.linspace(p.lower, p.kappa, grid_points + 2)[1:-1]
    grid = np.concatenate([outer, support, -support])
    grid = grid[grid != 0]

    results = []
    mass, _ = integrate(lambda z: float(psi(z, p)), p.lower, p.kappa, points=[0.5 * (p.lower + p.kappa)])
    results.append(
        PropertyResult(name="mass", passed=abs(mass - 1.0) <= MASS_TOLERANCE, worst=abs(mass - 1.0))
    )

    derivative = phi_prime(grid, p)
    s = np.abs(grid)
    wrong_sign = np.maximum(-derivative * np.sign(grid), 0.0)
    wrong_sign = np.where(s <= p.lower, np.abs(derivative), wrong_sign)
    wrong_sign = np.where(s >= p.kappa, np.abs(derivative - np.sign(grid)), wrong_sign)
    midpoint = 0.5 * (p.lower + p.kappa)
    if not phi_prime(midpoint, p) > 0:
        wrong_sign = np.append(wrong_sign, 1.0)
        grid_sign = np.append(grid, midpoint)
    else:
        grid_sign = grid
    results.append(_worst("sign", wrong_sign, grid_sign, tolerance))

    results.append(_worst("slope", np.abs(derivative) - 1.0, grid, tolerance))
    results.append(_worst("lower", s - p.kappa - phi(grid, p), grid, tolerance))

    curvature = phi_double_prime(support, p) - yw_bound(support, p)
    results.append(_worst("curvature", curvature, support, tolerance))

    b = sign_drift() if drift is None else drift
    L = b.require("osl_L")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3.0 * p.kappa, 3.0 * p.kappa, n_pairs)
    y = x + rng.choice([-1.0, 1.0], n_pairs) * rng.uniform(0.0, 2.0 * p.kappa, n_pairs)
    excess = phi_prime(x - y, p) * (b(x) - b(y)) - L * np.abs(x - y)
    results.append(_worst("osl", excess, x, tolerance))

    report = YwReport(params=p, mu=p.mu, c=p.c, properties=tuple(results))
    for r in report.properties:
        if not r.passed:
            logger.info("phi property '%s' fails by %.3e at x=%s", r.name, r.worst, r.witness)
    return report

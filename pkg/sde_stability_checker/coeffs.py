"""
Drift and diffusion coefficients with the regularity metadata the stability
theory consumes, a small library of built-in examples, and randomized probes
for the standing assumptions on a coefficient pair.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Final, Mapping, Optional, Sequence, Tuple, Union, final

import numpy as np

from .errors import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

ArrayFunction = Callable[[np.ndarray], np.ndarray]
Interval = Tuple[float, float]

# A sampled one-sided Lipschitz ratio above this is reported as unbounded
OSL_DIVERGENCE_THRESHOLD: Final[float] = 1e6
# Straddling pairs (c - s, c + s) probed around every declared breakpoint
STRADDLE_SCALES: Final[Tuple[float, ...]] = tuple(10.0 ** -k for k in range(1, 10))
DEFAULT_PROBE_TOLERANCE: Final[float] = 1e-12
DEFAULT_HOLDER_TOLERANCE: Final[float] = 1e-9
DEFAULT_GRID_RADIUS: Final[float] = 10.0
MOLLIFIED_PATTERN: Final[re.Pattern[str]] = re.compile(
    r"^\s*mollified\s*\(\s*([A-Za-z_][\w]*)\s*,\s*(\d+)\s*\)\s*$"
)


class CoefficientKind(Enum):
    ANALYTIC = "analytic-form"
    PIECEWISE = "piecewise"
    MOLLIFIED = "mollified-wrapper"


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class PiecewiseConstant:
    """Step function: ``values[i]`` on the i-th interval cut by ``breaks``.

    At a breakpoint the value of the left piece is used when
    ``left_closed_at_break`` is true (``1_{(-inf,0]} - 1_{(0,inf)}`` style), the
    right piece otherwise.
    """

    breaks: Tuple[float, ...]
    values: Tuple[float, ...]
    left_closed_at_break: bool = True

    def __post_init__(self) -> None:
        if len(self.values) != len(self.breaks) + 1:
            raise ConfigurationError("need exactly one more value than breakpoints", "values")
        if list(self.breaks) != sorted(set(self.breaks)):
            raise ConfigurationError("breakpoints must be strictly increasing", "breaks")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        side = "left" if self.left_closed_at_break else "right"
        index = np.searchsorted(np.asarray(self.breaks), x, side=side)
        result: np.ndarray = np.asarray(self.values, dtype=float)[index]
        return result

    @property
    def is_nonincreasing(self) -> bool:
        return all(a >= b for a, b in zip(self.values[:-1], self.values[1:]))


@final
@dataclass(frozen=True, slots=True, kw_only=True, eq=False)
class Coefficient:
    """A scalar coefficient R -> R plus the metadata the theorems consume.

    ``bound_K`` is the uniform bound of a drift, or the Holder constant of a
    diffusion. ``func`` must accept and return numpy arrays.
    """

    name: str
    kind: CoefficientKind
    func: ArrayFunction
    bound_K: Optional[float] = None
    osl_L: Optional[float] = None
    holder_eta: Optional[float] = None
    ellipticity_lambda: Optional[float] = None
    breakpoints: Tuple[float, ...] = ()
    pieces: Optional[PiecewiseConstant] = None
    constant: Optional[float] = None
    base: Optional["Coefficient"] = None
    mollify_n: Optional[int] = None
    spec: Optional["CoefficientSpec"] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.bound_K is not None and not self.bound_K >= 0:
            raise ConfigurationError(f"must be nonnegative, got {self.bound_K}", "bound_K")
        if self.osl_L is not None and not self.osl_L >= 0:
            raise ConfigurationError(f"must be nonnegative, got {self.osl_L}", "osl_L")
        if self.holder_eta is not None and not 0.5 <= self.holder_eta <= 1.0:
            raise ConfigurationError(f"must lie in [1/2, 1], got {self.holder_eta}", "holder_eta")
        if self.ellipticity_lambda is not None and not self.ellipticity_lambda >= 1.0:
            raise ConfigurationError(
                f"must be >= 1, got {self.ellipticity_lambda}", "ellipticity_lambda"
            )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.func(np.asarray(x, dtype=float))

    def value(self, x: float) -> float:
        return evaluate(self, x)

    @property
    def alpha(self) -> Optional[float]:
        return None if self.holder_eta is None else self.holder_eta - 0.5

    def require(self, attribute: str) -> float:
        """Metadata field ``attribute`` or a ConfigurationError naming it."""
        value = getattr(self, attribute)
        if value is None:
            raise ConfigurationError(f"coefficient '{self.name}' does not declare it", attribute)
        return float(value)


def evaluate(c: Coefficient, x: float) -> float:
    """c(x) for a single finite point."""
    if not math.isfinite(x):
        raise DomainError(f"cannot evaluate '{c.name}' at non-finite x={x}")
    return float(c.func(np.array([float(x)]))[0])


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class CoefficientPair:
    drift: Coefficient
    diffusion: Coefficient


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class SdePair:
    """The exact SDE (b, sigma) and its perturbation (b_hat, sigma_hat), same x0 and T."""

    x0: float
    T: float
    exact: CoefficientPair
    perturbed: CoefficientPair

    def __post_init__(self) -> None:
        if not math.isfinite(self.x0):
            raise DomainError("x0 must be finite")
        if not self.T > 0:
            raise DomainError(f"T must be positive, got {self.T}")

    @classmethod
    def identical(cls, x0: float, T: float, drift: Coefficient, diffusion: Coefficient) -> "SdePair":
        both = CoefficientPair(drift=drift, diffusion=diffusion)
        return cls(x0=x0, T=T, exact=both, perturbed=both)

    def with_perturbation(self, drift: Coefficient, diffusion: Coefficient) -> "SdePair":
        return SdePair(
            x0=self.x0,
            T=self.T,
            exact=self.exact,
            perturbed=CoefficientPair(drift=drift, diffusion=diffusion),
        )

    @property
    def is_identical(self) -> bool:
        return (
            self.exact.drift is self.perturbed.drift
            and self.exact.diffusion is self.perturbed.diffusion
        )

    @property
    def effective_lambda(self) -> float:
        return max(
            self.exact.diffusion.require("ellipticity_lambda"),
            self.perturbed.diffusion.require("ellipticity_lambda"),
        )

    @property
    def effective_eta(self) -> float:
        return min(
            self.exact.diffusion.require("holder_eta"),
            self.perturbed.diffusion.require("holder_eta"),
        )

    @property
    def effective_alpha(self) -> float:
        return self.effective_eta - 0.5

    @property
    def drift_bound(self) -> float:
        return max(self.exact.drift.require("bound_K"), self.perturbed.drift.require("bound_K"))

    @property
    def holder_constant(self) -> float:
        return max(
            self.exact.diffusion.require("bound_K"), self.perturbed.diffusion.require("bound_K")
        )

    def standard_grid(self, points: int = 10_000, radius: float = DEFAULT_GRID_RADIUS) -> np.ndarray:
        """Grid spanning x0 +- radius * sqrt(8 lambda T)."""
        half_width = radius * math.sqrt(8.0 * self.effective_lambda * self.T)
        return np.linspace(self.x0 - half_width, self.x0 + half_width, points)


# ---------------------------------------------------------------------------
# Built-in coefficient library
# ---------------------------------------------------------------------------


def sign_drift(scale: float = 1.0) -> Coefficient:
    """scale * (1_{(-inf,0]}(x) - 1_{(0,inf)}(x)); decreasing, hence in the class with L = 0."""
    if not scale > 0:
        raise DomainError("scale must be positive")
    pieces = PiecewiseConstant(breaks=(0.0,), values=(scale, -scale), left_closed_at_break=True)
    return Coefficient(
        name="sign_drift",
        kind=CoefficientKind.PIECEWISE,
        func=pieces,
        bound_K=scale,
        osl_L=0.0,
        breakpoints=(0.0,),
        pieces=pieces,
        spec=CoefficientSpec(name="sign_drift", params=_params(scale=scale, default=1.0)),
    )


def step_drift(theta: float = 0.0, left: float = 1.0, right: float = -1.0) -> Coefficient:
    """``left`` on (-inf, theta], ``right`` on (theta, inf).

    One-sided Lipschitz (with L = 0) exactly when the step goes down.
    """
    pieces = PiecewiseConstant(breaks=(theta,), values=(left, right), left_closed_at_break=True)
    return Coefficient(
        name="step_drift",
        kind=CoefficientKind.PIECEWISE,
        func=pieces,
        bound_K=max(abs(left), abs(right)),
        osl_L=0.0 if left >= right else None,
        breakpoints=(float(theta),),
        pieces=pieces,
        spec=CoefficientSpec(
            name="step_drift", params=(("left", left), ("right", right), ("theta", theta))
        ),
    )


def clipped_linear_drift(slope: float = 1.0, bound: float = 1.0) -> Coefficient:
    """clip(slope * x, -bound, bound): Lipschitz, bounded, one-sided Lipschitz with max(slope, 0)."""
    if not bound > 0:
        raise DomainError("bound must be positive")

    def func(x: np.ndarray) -> np.ndarray:
        return np.clip(slope * x, -bound, bound)

    kinks = () if slope == 0 else tuple(sorted((-bound / slope, bound / slope)))
    return Coefficient(
        name="clipped_linear_drift",
        kind=CoefficientKind.ANALYTIC,
        func=func,
        bound_K=bound,
        osl_L=max(slope, 0.0),
        breakpoints=kinks,
        spec=CoefficientSpec(
            name="clipped_linear_drift", params=(("bound", bound), ("slope", slope))
        ),
    )


def constant_drift(value: float = 0.0) -> Coefficient:
    if not math.isfinite(value):
        raise DomainError("a constant drift must be finite")

    def func(x: np.ndarray) -> np.ndarray:
        return np.full(np.shape(x), float(value))

    return Coefficient(
        name="constant_drift",
        kind=CoefficientKind.ANALYTIC,
        func=func,
        bound_K=abs(value),
        osl_L=0.0,
        constant=float(value),
        spec=CoefficientSpec(name="constant_drift", params=_params(value=value, default=0.0)),
    )


def constant_diffusion(value: float = 1.0) -> Coefficient:
    if value == 0 or not math.isfinite(value):
        raise DomainError("a constant diffusion must be finite and nonzero")

    def func(x: np.ndarray) -> np.ndarray:
        return np.full(np.shape(x), float(value))

    return Coefficient(
        name="constant_diffusion",
        kind=CoefficientKind.ANALYTIC,
        func=func,
        bound_K=0.0,
        holder_eta=1.0,
        ellipticity_lambda=max(value * value, 1.0 / (value * value)),
        constant=float(value),
        spec=CoefficientSpec(name="constant_diffusion", params=_params(value=value, default=1.0)),
    )


def holder_diffusion(c0: float = 1.0, c1: float = 0.25, eta: float = 0.75) -> Coefficient:
    """c0 + c1 * min(|x|^eta, 1): eta-Holder with constant c1, elliptic with
    lambda = max((c0 + c1)^2, c0^-2). eta = 1/2 is the logarithmic regime."""
    if not c0 > 0 or c1 < 0:
        raise DomainError("need c0 > 0 and c1 >= 0")
    if not 0.5 <= eta <= 1.0:
        raise DomainError(f"eta must lie in [1/2, 1], got {eta}")

    def func(x: np.ndarray) -> np.ndarray:
        return c0 + c1 * np.minimum(np.abs(x) ** eta, 1.0)

    return Coefficient(
        name="holder_diffusion",
        kind=CoefficientKind.ANALYTIC,
        func=func,
        bound_K=c1,
        holder_eta=eta,
        ellipticity_lambda=max((c0 + c1) ** 2, 1.0 / (c0 * c0), 1.0),
        breakpoints=(-1.0, 0.0, 1.0),
        spec=CoefficientSpec(name="holder_diffusion", params=(("c0", c0), ("c1", c1), ("eta", eta))),
    )


BUILTIN_COEFFICIENTS: Final[Dict[str, Callable[..., Coefficient]]] = {
    "sign_drift": sign_drift,
    "step_drift": step_drift,
    "clipped_linear_drift": clipped_linear_drift,
    "constant_drift": constant_drift,
    "constant_diffusion": constant_diffusion,
    "holder_diffusion": holder_diffusion,
}


def _params(default: float, **value: float) -> Tuple[Tuple[str, float], ...]:
    ((key, given),) = value.items()
    return () if given == default else ((key, float(given)),)


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class CoefficientSpec:
    """Declarative description of a coefficient as written in a config file."""

    name: str
    params: Tuple[Tuple[str, float], ...] = ()
    mollify_n: Optional[int] = None

    def to_json(self) -> Union[str, Dict[str, Any]]:
        if not self.params:
            if self.mollify_n is None:
                return self.name
            return f"mollified({self.name}, {self.mollify_n})"
        data: Dict[str, Any] = {"name": self.name, "params": dict(self.params)}
        if self.mollify_n is not None:
            data["mollify_n"] = self.mollify_n
        return data


def parse_coefficient(raw: Any, path: str = "coefficient") -> CoefficientSpec:
    """Parse ``"sign_drift"``, ``"mollified(sign_drift, 8)"`` or ``{"name", "params", "mollify_n"}``."""
    if isinstance(raw, str):
        match = MOLLIFIED_PATTERN.match(raw)
        if match:
            name, n = match.group(1), int(match.group(2))
            _check_builtin(name, path)
            if n < 1:
                raise ConfigurationError("mollification level must be >= 1", path)
            return CoefficientSpec(name=name, mollify_n=n)
        _check_builtin(raw.strip(), path)
        return CoefficientSpec(name=raw.strip())

    if not isinstance(raw, Mapping):
        raise ConfigurationError("expected a coefficient name or object", path)
    unknown = set(raw) - {"name", "params", "mollify_n"}
    if unknown:
        raise ConfigurationError(f"unknown key(s) {sorted(unknown)}", f"{path}.{sorted(unknown)[0]}")
    if "name" not in raw:
        raise ConfigurationError("missing coefficient name", f"{path}.name")
    name = str(raw["name"])
    _check_builtin(name, f"{path}.name")
    params_raw = raw.get("params", {})
    if not isinstance(params_raw, Mapping):
        raise ConfigurationError("params must be an object", f"{path}.params")
    params = []
    for key, value in sorted(params_raw.items()):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigurationError("parameter must be a number", f"{path}.params.{key}")
        params.append((str(key), float(value)))
    mollify_n = raw.get("mollify_n")
    if mollify_n is not None and (not isinstance(mollify_n, int) or mollify_n < 1):
        raise ConfigurationError("must be a positive integer", f"{path}.mollify_n")
    spec = CoefficientSpec(name=name, params=tuple(params), mollify_n=mollify_n)
    try:
        BUILTIN_COEFFICIENTS[name](**dict(spec.params))
    except TypeError as e:
        raise ConfigurationError(f"invalid parameters for '{name}': {e}", f"{path}.params") from e
    return spec


def _check_builtin(name: str, path: str) -> None:
    if name not in BUILTIN_COEFFICIENTS:
        raise ConfigurationError(
            f"unknown coefficient '{name}' (known: {', '.join(sorted(BUILTIN_COEFFICIENTS))})", path
        )


def build_coefficient(spec: CoefficientSpec) -> Coefficient:
    """Instantiate a declarative coefficient, mollifying it when requested."""
    coefficient = BUILTIN_COEFFICIENTS[spec.name](**dict(spec.params))
    if spec.mollify_n is None:
        return coefficient
    from .mollify import mollify

    return mollify(coefficient, spec.mollify_n)


# ---------------------------------------------------------------------------
# Assumption probes
# ---------------------------------------------------------------------------


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class ProbeResult:
    """A sampled supremum with the point (or pair) attaining it."""

    estimate: float
    witness: Tuple[float, ...]
    declared: Optional[float] = None
    within_declared: Optional[bool] = None
    bounded: bool = True


def _check_domain(domain: Interval) -> Tuple[float, float]:
    lo, hi = float(domain[0]), float(domain[1])
    if not (math.isfinite(lo) and math.isfinite(hi)) or not hi > lo:
        raise DomainError(f"empty or infinite probing domain [{lo}, {hi}]")
    return lo, hi


def _sample_pairs(
    c: Coefficient, domain: Interval, n_pairs: int, rng_seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    if n_pairs < 1:
        raise DomainError("need at least one pair")
    lo, hi = _check_domain(domain)
    rng = np.random.default_rng(rng_seed)
    x = rng.uniform(lo, hi, n_pairs)
    y = rng.uniform(lo, hi, n_pairs)
    # pairs straddling declared breakpoints at shrinking scales
    centres = [b for b in c.breakpoints if lo < b < hi]
    if centres:
        scales = np.asarray(STRADDLE_SCALES) * (hi - lo)
        cx = np.repeat(centres, len(scales))
        s = np.tile(scales, len(centres))
        x = np.concatenate([x, np.clip(cx - s, lo, hi), np.clip(cx - 0.5 * s, lo, hi)])
        y = np.concatenate([y, np.clip(cx + s, lo, hi), np.clip(cx + 0.25 * s, lo, hi)])
    keep = x != y
    return x[keep], y[keep]


def probe_one_sided_lipschitz(
    c: Coefficient,
    domain: Interval,
    n_pairs: int,
    rng_seed: int,
    tolerance: float = DEFAULT_PROBE_TOLERANCE,
) -> ProbeResult:
    """max over sampled pairs of (x - y)(f(x) - f(y)) / |x - y|^2, with the worst pair."""
    x, y = _sample_pairs(c, domain, n_pairs, rng_seed)
    diff = x - y
    ratio = diff * (c(x) - c(y)) / (diff * diff)
    worst = int(np.argmax(ratio))
    estimate = max(float(ratio[worst]), 0.0)
    bounded = estimate <= OSL_DIVERGENCE_THRESHOLD
    within: Optional[bool] = None
    if c.osl_L is not None:
        within = bounded and estimate <= c.osl_L + tolerance
    if not bounded:
        logger.debug("one-sided Lipschitz ratio of '%s' diverges near %s", c.name, (x[worst], y[worst]))
    return ProbeResult(
        estimate=estimate,
        witness=(float(x[worst]), float(y[worst])),
        declared=c.osl_L,
        within_declared=within,
        bounded=bounded,
    )


def probe_holder(
    c: Coefficient,
    domain: Interval,
    n_pairs: int,
    rng_seed: int,
    eta: Optional[float] = None,
    tolerance: float = DEFAULT_HOLDER_TOLERANCE,
) -> ProbeResult:
    """max over sampled pairs of |f(x) - f(y)| / |x - y|^eta."""
    exponent = c.require("holder_eta") if eta is None else eta
    x, y = _sample_pairs(c, domain, n_pairs, rng_seed)
    ratio = np.abs(c(x) - c(y)) / np.abs(x - y) ** exponent
    worst = int(np.argmax(ratio))
    estimate = float(ratio[worst])
    within = None if c.bound_K is None else estimate <= c.bound_K + tolerance
    return ProbeResult(
        estimate=estimate,
        witness=(float(x[worst]), float(y[worst])),
        declared=c.bound_K,
        within_declared=within,
    )


def probe_bound(c: Coefficient, grid: np.ndarray, tolerance: float = DEFAULT_PROBE_TOLERANCE) -> ProbeResult:
    values = np.abs(c(grid))
    worst = int(np.argmax(values))
    estimate = float(values[worst])
    within = None if c.bound_K is None else estimate <= c.bound_K + tolerance
    return ProbeResult(estimate=estimate, witness=(float(grid[worst]),), declared=c.bound_K, within_declared=within)


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class EllipticityProbe:
    minimum: float
    maximum: float
    witness: Tuple[float, ...]
    declared: float
    passed: bool


def probe_ellipticity(c: Coefficient, grid: np.ndarray, tolerance: float = 0.0) -> EllipticityProbe:
    lam = c.require("ellipticity_lambda")
    squared = c(grid) ** 2
    low, high = int(np.argmin(squared)), int(np.argmax(squared))
    too_low = squared < 1.0 / lam - tolerance
    too_high = squared > lam + tolerance
    bad = np.flatnonzero(too_low | too_high)
    witness = (float(grid[bad[0]]),) if bad.size else ()
    return EllipticityProbe(
        minimum=float(squared[low]),
        maximum=float(squared[high]),
        witness=witness,
        declared=lam,
        passed=not bad.size,
    )


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class GridSpec:
    """Sampling used by check_assumptions."""

    points: int = 10_000
    radius: float = DEFAULT_GRID_RADIUS
    n_pairs: int = 100_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.points < 1 or self.n_pairs < 1:
            raise DomainError("grid must be nonempty")


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class ConditionResult:
    name: str
    passed: bool
    measured: Optional[float]
    declared: Optional[float]
    witness: Tuple[float, ...] = ()
    detail: str = ""


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class AssumptionReport:
    p: float
    conditions: Tuple[ConditionResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def condition(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> Sequence[ConditionResult]:
        return [c for c in self.conditions if not c.passed]


def check_assumptions(pair: SdePair, p: float, grid: GridSpec = GridSpec()) -> AssumptionReport:
    """Probe A-(i) .. A-(iv) and compute A-(p) for a coefficient pair."""
    from .weighted_norm import WeightedMeasure, epsilon_p

    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    sides = {"exact": pair.exact, "perturbed": pair.perturbed}
    for side, coefficients in sides.items():
        for attribute in ("bound_K",):
            _require_field(coefficients.drift, f"{side}.drift.{attribute}")
        for attribute in ("bound_K", "holder_eta", "ellipticity_lambda"):
            _require_field(coefficients.diffusion, f"{side}.diffusion.{attribute}")
    _require_field(pair.exact.drift, "exact.drift.osl_L")

    points = pair.standard_grid(grid.points, grid.radius)
    domain = (float(points[0]), float(points[-1]))
    conditions = []

    osl = probe_one_sided_lipschitz(pair.exact.drift, domain, grid.n_pairs, grid.seed)
    conditions.append(
        ConditionResult(
            name="A-(i)",
            passed=bool(osl.within_declared),
            measured=osl.estimate,
            declared=osl.declared,
            witness=osl.witness,
            detail="one-sided Lipschitz" if osl.bounded else "not in the one-sided Lipschitz class",
        )
    )

    bounds = [probe_bound(c, points) for c in (pair.exact.drift, pair.perturbed.drift)]
    worst_bound = max(bounds, key=lambda r: r.estimate)
    conditions.append(
        ConditionResult(
            name="A-(ii)",
            passed=all(bool(r.within_declared) for r in bounds),
            measured=worst_bound.estimate,
            declared=pair.drift_bound,
            witness=worst_bound.witness,
        )
    )

    holders = [
        probe_holder(c, domain, grid.n_pairs, grid.seed, eta=pair.effective_eta)
        for c in (pair.exact.diffusion, pair.perturbed.diffusion)
    ]
    worst_holder = max(holders, key=lambda r: r.estimate)
    conditions.append(
        ConditionResult(
            name="A-(iii)",
            passed=all(bool(r.within_declared) for r in holders),
            measured=worst_holder.estimate,
            declared=pair.holder_constant,
            witness=worst_holder.witness,
            detail=f"eta={pair.effective_eta:g}",
        )
    )

    ellipticity = [probe_ellipticity(c, points) for c in (pair.exact.diffusion, pair.perturbed.diffusion)]
    failing = [e for e in ellipticity if not e.passed]
    conditions.append(
        ConditionResult(
            name="A-(iv)",
            passed=not failing,
            measured=max(e.maximum for e in ellipticity),
            declared=pair.effective_lambda,
            witness=failing[0].witness if failing else (),
            detail=f"min a={min(e.minimum for e in ellipticity):.6g}",
        )
    )

    measure = WeightedMeasure(x0=pair.x0, lam=pair.effective_lambda, T=pair.T)
    report = epsilon_p(pair, p, measure)
    detail = ""
    if report.log_condition is not None:
        detail = f"log condition {'holds' if report.log_condition else 'fails'}"
    conditions.append(
        ConditionResult(
            name=f"A-({p:g})",
            passed=report.meets_assumption,
            measured=report.epsilon,
            declared=1.0,
            detail=detail,
        )
    )

    result = AssumptionReport(p=p, conditions=tuple(conditions))
    for c in result.failed():
        logger.info("assumption %s fails: measured %s, declared %s", c.name, c.measured, c.declared)
    return result


def _require_field(c: Coefficient, path: str) -> None:
    attribute = path.rsplit(".", 1)[1]
    if getattr(c, attribute) is None:
        raise ConfigurationError(f"coefficient '{c.name}' does not declare {attribute}", path)

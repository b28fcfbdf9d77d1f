"""
Experiment configuration: JSON in, frozen dataclasses out, canonical JSON back.

Every section has documented defaults; unknown keys are rejected with the
dotted path of the offending key. The quadrature defaults come from the
tolerance profile selected by the SDE_STABILITY_TOLERANCE_PROFILE environment
variable.
"""

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Final, List, Mapping, Optional, Tuple, Type, TypeVar, final

from .coeffs import CoefficientPair, CoefficientSpec, SdePair, build_coefficient, parse_coefficient
from .errors import ConfigurationError
from .quadrature import QuadratureSpec
from .rate_lab import DEFAULT_LADDER, DEFAULT_SLOPE_TOLERANCE, ErrorKind
from .sde_sim import (
    DEFAULT_BLOCK_SIZE,
    DEFAULT_MEMORY_BUDGET,
    DEFAULT_PATHS,
    DEFAULT_STEPS,
    BvFunction,
    BvKind,
    RecordSpec,
    SimulationPlan,
    StoppingKind,
    StoppingRule,
)
from .weighted_norm import WeightedMeasure
from .yw_functions import YwShape

logger = logging.getLogger(__name__)

PROFILE_ENV_VAR: Final[str] = "SDE_STABILITY_TOLERANCE_PROFILE"
TOLERANCE_PROFILES: Final[Dict[str, QuadratureSpec]] = {
    "default": QuadratureSpec(),
    "strict": QuadratureSpec(rel_tol=1e-10, abs_tol=1e-14, limit=1000, panels=16, nodes=32),
    "fast": QuadratureSpec(rel_tol=1e-6, abs_tol=1e-10, limit=200, panels=4, nodes=16),
}

E = TypeVar("E", bound=Enum)


class ExperimentKind(Enum):
    CHECK = "check"
    MOLLIFY = "mollify"
    NORM = "norm"
    YW_VALIDATE = "yw-validate"
    DENSITY = "density"
    SIMULATE = "simulate"
    RATES = "rates"


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class CoefficientsConfig:
    drift: CoefficientSpec
    diffusion: CoefficientSpec
    perturbed_drift: Optional[CoefficientSpec] = None
    perturbed_diffusion: Optional[CoefficientSpec] = None


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class MeasureConfig:
    """x0 and T of the pair; ``lam`` overrides the ellipticity of the weight when set."""

    x0: float = 0.0
    T: float = 1.0
    lam: Optional[float] = None


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class ExperimentSection:
    kind: ExperimentKind
    p: float = 1.0
    n_ladder: Tuple[int, ...] = DEFAULT_LADDER
    error_kind: ErrorKind = ErrorKind.SUP
    slope_tolerance: float = DEFAULT_SLOPE_TOLERANCE
    common_random_numbers: bool = True
    grid_doubling: bool = True
    bv_power: float = 1.0
    mollify_n: int = 8
    delta: float = 2.0
    kappa: float = 0.5
    yw_shape: YwShape = YwShape.BUMP
    t: float = 1.0
    y_grid: Tuple[float, float, int] = (-3.0, 3.0, 13)
    order: int = 2
    mc_samples: int = 200_000
    check_points: int = 10_000
    check_pairs: int = 100_000


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class OutputConfig:
    directory: str = "results"
    per_path_dump: bool = False
    plot_script: bool = True


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class ExperimentConfig:
    coefficients: CoefficientsConfig
    experiment: ExperimentSection
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    plan: SimulationPlan = field(default_factory=SimulationPlan)
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    output: OutputConfig = field(default_factory=OutputConfig)
    workers: int = 1

    def build_pair(self) -> SdePair:
        drift = build_coefficient(self.coefficients.drift)
        diffusion = build_coefficient(self.coefficients.diffusion)
        pair = SdePair.identical(self.measure.x0, self.measure.T, drift, diffusion)
        hat_drift = self.coefficients.perturbed_drift
        hat_diffusion = self.coefficients.perturbed_diffusion
        if hat_drift is None and hat_diffusion is None:
            return pair
        return SdePair(
            x0=pair.x0,
            T=pair.T,
            exact=pair.exact,
            perturbed=CoefficientPair(
                drift=drift if hat_drift is None else build_coefficient(hat_drift),
                diffusion=diffusion if hat_diffusion is None else build_coefficient(hat_diffusion),
            ),
        )

    def build_measure(self, pair: SdePair) -> WeightedMeasure:
        lam = pair.effective_lambda if self.measure.lam is None else self.measure.lam
        return WeightedMeasure(x0=pair.x0, lam=lam, T=pair.T)


# ---------------------------------------------------------------------------
# Tolerance profile
# ---------------------------------------------------------------------------


def tolerance_profile() -> Tuple[str, QuadratureSpec]:
    name = os.environ.get(PROFILE_ENV_VAR, "default").strip() or "default"
    if name not in TOLERANCE_PROFILES:
        raise ConfigurationError(f"unknown profile '{name}' (known: {', '.join(TOLERANCE_PROFILES)})", PROFILE_ENV_VAR)
    return name, TOLERANCE_PROFILES[name]


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _section(raw: Any, path: str, allowed: Tuple[str, ...]) -> Mapping[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigurationError("expected an object", path)
    for key in raw:
        if key not in allowed:
            raise ConfigurationError(f"unknown key '{key}'", _join(path, key))
    return raw


def _float(data: Mapping[str, Any], key: str, path: str, default: float) -> float:
    value = data.get(key, default)
    if value == "inf":
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError("expected a number", _join(path, key))
    return float(value)


def _int(data: Mapping[str, Any], key: str, path: str, default: int) -> int:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError("expected an integer", _join(path, key))
    return value


def _bool(data: Mapping[str, Any], key: str, path: str, default: bool) -> bool:
    value = data.get(key, default)
    if not isinstance(value, bool):
        raise ConfigurationError("expected true or false", _join(path, key))
    return value


def _choice(data: Mapping[str, Any], key: str, path: str, enum: Type[E], default: E) -> E:
    value = data.get(key, default.value)
    try:
        return enum(value)
    except ValueError:
        known = ", ".join(str(e.value) for e in enum)
        raise ConfigurationError(f"'{value}' is not one of: {known}", _join(path, key)) from None


def _list(data: Mapping[str, Any], key: str, path: str) -> List[Any]:
    value = data.get(key, [])
    if not isinstance(value, list):
        raise ConfigurationError("expected a list", _join(path, key))
    return value


def _guard(path: str, build: Any, *args: Any, **kwargs: Any) -> Any:
    """Run a constructor, reporting its validation errors at ``path``."""
    try:
        return build(*args, **kwargs)
    except ConfigurationError:
        raise
    except ValueError as e:
        raise ConfigurationError(str(e), path) from e


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------


def _parse_coefficients(raw: Any) -> CoefficientsConfig:
    path = "coefficients"
    data = _section(raw, path, ("drift", "diffusion", "perturbed_drift", "perturbed_diffusion"))
    for required in ("drift", "diffusion"):
        if required not in data:
            raise ConfigurationError("missing coefficient", _join(path, required))
    optional = {
        key: parse_coefficient(data[key], _join(path, key))
        for key in ("perturbed_drift", "perturbed_diffusion")
        if data.get(key) is not None
    }
    return CoefficientsConfig(
        drift=parse_coefficient(data["drift"], _join(path, "drift")),
        diffusion=parse_coefficient(data["diffusion"], _join(path, "diffusion")),
        **optional,
    )


def _parse_measure(raw: Any) -> MeasureConfig:
    path = "measure"
    data = _section(raw, path, ("x0", "lambda", "T"))
    lam = None if data.get("lambda") is None else _float(data, "lambda", path, 1.0)
    if lam is not None and not lam >= 1:
        raise ConfigurationError("must be >= 1", _join(path, "lambda"))
    T = _float(data, "T", path, 1.0)
    if not T > 0:
        raise ConfigurationError("must be positive", _join(path, "T"))
    return MeasureConfig(x0=_float(data, "x0", path, 0.0), T=T, lam=lam)


def _parse_stopping_rule(raw: Any, path: str) -> StoppingRule:
    data = _section(raw, path, ("kind", "time", "radius"))
    kind = _choice(data, "kind", path, StoppingKind, StoppingKind.DETERMINISTIC)
    if kind is StoppingKind.DETERMINISTIC:
        return _guard(path, StoppingRule.at, _float(data, "time", path, math.nan))
    return _guard(path, StoppingRule.exit, _float(data, "radius", path, math.inf))


def _parse_bv_function(raw: Any, path: str) -> BvFunction:
    data = _section(raw, path, ("kind", "lower", "upper"))
    kind = _choice(data, "kind", path, BvKind, BvKind.HEAVISIDE)
    upper = None if data.get("upper") is None else _float(data, "upper", path, 0.0)
    return _guard(path, BvFunction, kind=kind, lower=_float(data, "lower", path, 0.0), upper=upper)


def _parse_record(raw: Any) -> RecordSpec:
    path = "plan.record"
    data = _section(raw, path, ("terminal", "sup", "stopping_rules", "bv_functions", "full_paths", "key_estimate_p"))
    rules = tuple(
        _parse_stopping_rule(r, f"{path}.stopping_rules[{i}]") for i, r in enumerate(_list(data, "stopping_rules", path))
    )
    bv = tuple(_parse_bv_function(g, f"{path}.bv_functions[{i}]") for i, g in enumerate(_list(data, "bv_functions", path)))
    key_p = None if data.get("key_estimate_p") is None else _float(data, "key_estimate_p", path, 1.0)
    return _guard(
        path,
        RecordSpec,
        terminal=_bool(data, "terminal", path, True),
        sup=_bool(data, "sup", path, True),
        stopping_rules=rules,
        bv_functions=bv,
        full_paths=_bool(data, "full_paths", path, False),
        key_estimate_p=key_p,
    )


def _parse_plan(raw: Any) -> SimulationPlan:
    path = "plan"
    data = _section(raw, path, ("steps", "paths", "seed", "record", "block_size", "memory_budget"))
    return SimulationPlan(
        steps=_int(data, "steps", path, DEFAULT_STEPS),
        paths=_int(data, "paths", path, DEFAULT_PATHS),
        seed=_int(data, "seed", path, 0),
        record=_parse_record(data.get("record")),
        block_size=_int(data, "block_size", path, DEFAULT_BLOCK_SIZE),
        memory_budget=_int(data, "memory_budget", path, DEFAULT_MEMORY_BUDGET),
    )


def _parse_quadrature(raw: Any, profile: QuadratureSpec) -> QuadratureSpec:
    path = "quadrature"
    data = _section(raw, path, ("rel_tol", "abs_tol", "limit", "truncation_radius", "panels", "nodes"))
    return _guard(
        path,
        QuadratureSpec,
        rel_tol=_float(data, "rel_tol", path, profile.rel_tol),
        abs_tol=_float(data, "abs_tol", path, profile.abs_tol),
        limit=_int(data, "limit", path, profile.limit),
        truncation_radius=_float(data, "truncation_radius", path, profile.truncation_radius),
        panels=_int(data, "panels", path, profile.panels),
        nodes=_int(data, "nodes", path, profile.nodes),
    )


_EXPERIMENT_KEYS: Final[Tuple[str, ...]] = (
    "kind", "p", "n_ladder", "error_kind", "slope_tolerance", "common_random_numbers",
    "grid_doubling", "bv_power", "mollify_n", "delta", "kappa", "yw_shape", "t", "y_grid",
    "order", "mc_samples", "check_points", "check_pairs",
)  # fmt: skip


def _parse_experiment(raw: Any) -> ExperimentSection:
    path = "experiment"
    data = _section(raw, path, _EXPERIMENT_KEYS)
    if "kind" not in data:
        raise ConfigurationError("missing experiment kind", _join(path, "kind"))
    ladder_raw = data.get("n_ladder", list(DEFAULT_LADDER))
    if not isinstance(ladder_raw, list) or not all(isinstance(n, int) and not isinstance(n, bool) for n in ladder_raw):
        raise ConfigurationError("expected a list of integers", _join(path, "n_ladder"))
    if any(n < 1 for n in ladder_raw) or ladder_raw != sorted(set(ladder_raw)):
        raise ConfigurationError("must be strictly increasing positive integers", _join(path, "n_ladder"))
    grid_raw = data.get("y_grid", [-3.0, 3.0, 13])
    if (
        not isinstance(grid_raw, list)
        or len(grid_raw) != 3
        or not isinstance(grid_raw[2], int)
        or grid_raw[2] < 1
        or not all(isinstance(v, (int, float)) for v in grid_raw[:2])
    ):
        raise ConfigurationError("expected [start, stop, count]", _join(path, "y_grid"))
    p = _float(data, "p", path, 1.0)
    if not p >= 1:
        raise ConfigurationError("must be >= 1", _join(path, "p"))
    return ExperimentSection(
        kind=_choice(data, "kind", path, ExperimentKind, ExperimentKind.CHECK),
        p=p,
        n_ladder=tuple(ladder_raw),
        error_kind=_choice(data, "error_kind", path, ErrorKind, ErrorKind.SUP),
        slope_tolerance=_float(data, "slope_tolerance", path, DEFAULT_SLOPE_TOLERANCE),
        common_random_numbers=_bool(data, "common_random_numbers", path, True),
        grid_doubling=_bool(data, "grid_doubling", path, True),
        bv_power=_float(data, "bv_power", path, 1.0),
        mollify_n=_int(data, "mollify_n", path, 8),
        delta=_float(data, "delta", path, 2.0),
        kappa=_float(data, "kappa", path, 0.5),
        yw_shape=_choice(data, "yw_shape", path, YwShape, YwShape.BUMP),
        t=_float(data, "t", path, 1.0),
        y_grid=(float(grid_raw[0]), float(grid_raw[1]), int(grid_raw[2])),
        order=_int(data, "order", path, 2),
        mc_samples=_int(data, "mc_samples", path, 200_000),
        check_points=_int(data, "check_points", path, 10_000),
        check_pairs=_int(data, "check_pairs", path, 100_000),
    )


def _parse_output(raw: Any) -> OutputConfig:
    path = "output"
    data = _section(raw, path, ("directory", "per_path_dump", "plot_script"))
    directory = data.get("directory", "results")
    if not isinstance(directory, str) or not directory:
        raise ConfigurationError("expected a directory name", _join(path, "directory"))
    return OutputConfig(
        directory=directory,
        per_path_dump=_bool(data, "per_path_dump", path, False),
        plot_script=_bool(data, "plot_script", path, True),
    )


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"invalid JSON: {e}", "") from e
    data = _section(
        raw, "", ("coefficients", "measure", "plan", "quadrature", "experiment", "output", "workers")
    )
    if "coefficients" not in data:
        raise ConfigurationError("missing section", "coefficients")
    if "experiment" not in data:
        raise ConfigurationError("missing section", "experiment")
    _, profile = tolerance_profile()
    workers = _int(data, "workers", "", 1)
    if workers < 1:
        raise ConfigurationError("must be >= 1", "workers")
    return ExperimentConfig(
        coefficients=_parse_coefficients(data["coefficients"]),
        experiment=_parse_experiment(data["experiment"]),
        measure=_parse_measure(data.get("measure")),
        plan=_parse_plan(data.get("plan")),
        quadrature=_parse_quadrature(data.get("quadrature"), profile),
        output=_parse_output(data.get("output")),
        workers=workers,
    )


def load_config(path: Path) -> ExperimentConfig:
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read {path}: {e.strerror}", "--config") from e
    logger.debug("loaded configuration from %s", path)
    return parse_config(text)


def default_config(kind: ExperimentKind) -> ExperimentConfig:
    """Sign drift with unit diffusion, every other setting at its default."""
    return parse_config(
        json.dumps(
            {
                "coefficients": {"drift": "sign_drift", "diffusion": "constant_diffusion"},
                "experiment": {"kind": kind.value},
            }
        )
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _number(value: float) -> Any:
    return "inf" if value == math.inf else value


def _stopping_rule_to_dict(rule: StoppingRule) -> Dict[str, Any]:
    if rule.kind is StoppingKind.DETERMINISTIC:
        return {"kind": rule.kind.value, "time": rule.time}
    assert rule.radius is not None
    return {"kind": rule.kind.value, "radius": _number(rule.radius)}


def _bv_to_dict(g: BvFunction) -> Dict[str, Any]:
    data: Dict[str, Any] = {"kind": g.kind.value, "lower": g.lower}
    if g.upper is not None:
        data["upper"] = g.upper
    return data


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    coefficients: Dict[str, Any] = {
        "drift": cfg.coefficients.drift.to_json(),
        "diffusion": cfg.coefficients.diffusion.to_json(),
    }
    if cfg.coefficients.perturbed_drift is not None:
        coefficients["perturbed_drift"] = cfg.coefficients.perturbed_drift.to_json()
    if cfg.coefficients.perturbed_diffusion is not None:
        coefficients["perturbed_diffusion"] = cfg.coefficients.perturbed_diffusion.to_json()
    measure: Dict[str, Any] = {"x0": cfg.measure.x0, "T": cfg.measure.T}
    if cfg.measure.lam is not None:
        measure["lambda"] = cfg.measure.lam
    record = cfg.plan.record
    e = cfg.experiment
    q = cfg.quadrature
    return {
        "coefficients": coefficients,
        "measure": measure,
        "plan": {
            "steps": cfg.plan.steps,
            "paths": cfg.plan.paths,
            "seed": cfg.plan.seed,
            "block_size": cfg.plan.block_size,
            "memory_budget": cfg.plan.memory_budget,
            "record": {
                "terminal": record.terminal,
                "sup": record.sup,
                "stopping_rules": [_stopping_rule_to_dict(r) for r in record.stopping_rules],
                "bv_functions": [_bv_to_dict(g) for g in record.bv_functions],
                "full_paths": record.full_paths,
                "key_estimate_p": record.key_estimate_p,
            },
        },
        "quadrature": {
            "rel_tol": q.rel_tol,
            "abs_tol": q.abs_tol,
            "limit": q.limit,
            "truncation_radius": q.truncation_radius,
            "panels": q.panels,
            "nodes": q.nodes,
        },
        "experiment": {
            "kind": e.kind.value,
            "p": e.p,
            "n_ladder": list(e.n_ladder),
            "error_kind": e.error_kind.value,
            "slope_tolerance": e.slope_tolerance,
            "common_random_numbers": e.common_random_numbers,
            "grid_doubling": e.grid_doubling,
            "bv_power": e.bv_power,
            "mollify_n": e.mollify_n,
            "delta": e.delta,
            "kappa": e.kappa,
            "yw_shape": e.yw_shape.value,
            "t": e.t,
            "y_grid": list(e.y_grid),
            "order": e.order,
            "mc_samples": e.mc_samples,
            "check_points": e.check_points,
            "check_pairs": e.check_pairs,
        },
        "output": {
            "directory": cfg.output.directory,
            "per_path_dump": cfg.output.per_path_dump,
            "plot_script": cfg.output.plot_script,
        },
        "workers": cfg.workers,
    }


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()

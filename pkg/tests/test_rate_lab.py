#!/usr/bin/env python3
"""
Tests for rate experiments, slope fits and the key estimate
"""

import math
import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from sde_stability_checker.coeffs import SdePair, constant_diffusion, constant_drift, sign_drift
from sde_stability_checker.errors import DomainError, PreconditionError
from sde_stability_checker.rate_lab import (
    RATES_CSV_HEADER,
    EpsilonOrder,
    ErrorKind,
    RateExperimentConfig,
    RatePoint,
    Theorem,
    Verdict,
    avikainen_bound,
    fit_log_rate,
    fit_loglog,
    key_estimate_check,
    key_estimate_ladder,
    run_stability_experiment,
    slope_seed_stability,
    theorem_for,
    theoretical_exponent,
)
from sde_stability_checker.sde_sim import SimulationPlan, StoppingRule, summarize


@pytest.fixture
def sign_pair():
    return SdePair.identical(0.0, 1.0, sign_drift(), constant_diffusion())


def small_plan(**kwargs):
    defaults = {"steps": 64, "paths": 400, "seed": 9, "block_size": 200}
    defaults.update(kwargs)
    return SimulationPlan(**defaults)


class TestTheoreticalExponent:
    """Exponent table by theorem and Holder excess alpha"""

    @pytest.mark.parametrize(
        "theorem,expected",
        [
            (Theorem.STOPPED_L1, 0.5),
            (Theorem.SUP_L1, 0.5),
            (Theorem.BV, 0.25),
            (Theorem.LP_MOMENT, 0.5),
            (Theorem.LP_JENSEN, 0.5),
        ],
    )
    def test_lipschitz_diffusion(self, theorem, expected):
        exponent = theoretical_exponent(0.5, theorem)
        assert exponent.value == pytest.approx(expected)
        assert not exponent.logarithmic

    def test_moment_bounds_use_higher_norms(self):
        assert theoretical_exponent(0.5, Theorem.LP_MOMENT).epsilon_order is EpsilonOrder.P
        assert theoretical_exponent(0.5, Theorem.LP_JENSEN).epsilon_order is EpsilonOrder.TWO_P
        assert theoretical_exponent(0.25, Theorem.LP_MOMENT).epsilon_order is EpsilonOrder.ONE
        assert EpsilonOrder.TWO_P.exponent(1.5) == 3.0

    def test_holder_diffusion(self):
        assert theoretical_exponent(0.25, Theorem.STOPPED_L1).value == pytest.approx(1.0 / 3.0)
        assert theoretical_exponent(0.25, Theorem.SUP_L1).value == pytest.approx(0.25)
        assert theoretical_exponent(0.25, Theorem.BV).value == pytest.approx(1.0 / 6.0)

    @pytest.mark.parametrize("theorem,power", [(Theorem.STOPPED_L1, 1.0), (Theorem.SUP_L1, 0.5), (Theorem.BV, 0.5)])
    def test_logarithmic_regime(self, theorem, power):
        exponent = theoretical_exponent(0.0, theorem)
        assert exponent.logarithmic
        assert exponent.log_power == power
        assert exponent.describe().startswith("(1/log(1/eps_1))")

    @pytest.mark.parametrize("alpha", [-0.1, 0.6, math.nan])
    def test_out_of_range(self, alpha):
        with pytest.raises(DomainError):
            theoretical_exponent(alpha, Theorem.SUP_L1)

    @pytest.mark.parametrize(
        "kind,p,theorem",
        [
            (ErrorKind.STOPPED, 1.0, Theorem.STOPPED_L1),
            (ErrorKind.SUP, 3.0, Theorem.SUP_L1),
            (ErrorKind.BV, 1.0, Theorem.BV),
            (ErrorKind.P_MOMENT, 2.0, Theorem.LP_MOMENT),
            (ErrorKind.P_MOMENT, 1.5, Theorem.LP_JENSEN),
            (ErrorKind.P_MOMENT, 1.0, Theorem.SUP_L1),
        ],
    )
    def test_theorem_for(self, kind, p, theorem):
        assert theorem_for(kind, p) is theorem


class TestFits:
    """Slope fits on exact power laws"""

    def test_loglog_exact(self):
        points = [(eps, 3.0 * eps**0.5) for eps in (0.1, 0.05, 0.02, 0.01)]
        fit = fit_loglog(points)
        assert fit.slope == pytest.approx(0.5)
        assert fit.intercept == pytest.approx(math.log(3.0))
        assert fit.r_squared == pytest.approx(1.0)

    def test_log_rate_exact(self):
        points = [(eps, 0.1 + 2.0 / math.log(1.0 / eps)) for eps in (0.1, 0.01, 1e-3, 1e-4)]
        fit = fit_log_rate(points)
        assert fit.slope == pytest.approx(2.0)
        assert fit.intercept == pytest.approx(0.1)
        assert fit.correlation == pytest.approx(1.0)

    def test_too_few_points(self):
        with pytest.raises(PreconditionError):
            fit_loglog([(0.1, 0.2), (0.05, 0.1)])
        with pytest.raises(PreconditionError):
            fit_log_rate([(0.1, 0.2)])

    def test_nonpositive_values(self):
        with pytest.raises(DomainError):
            fit_loglog([(0.1, 0.2), (0.05, 0.0), (0.01, 0.05)])
        with pytest.raises(DomainError):
            fit_log_rate([(0.1, 0.2), (1.0, 0.1), (0.01, 0.05)])

    def test_avikainen_bound(self):
        assert avikainen_bound(1.0, 1.0, 1.0, 0.25, 0.04) == pytest.approx(0.9)
        with pytest.raises(DomainError):
            avikainen_bound(1.0, 0.5, 1.0, 0.25, 0.04)


class TestRateExperimentConfig:
    """Ladder and exponent validation"""

    @pytest.mark.parametrize("ladder", [(2, 4), (4, 2, 8), (2, 2, 8), (0, 1, 2)])
    def test_invalid_ladder(self, sign_pair, ladder):
        with pytest.raises(PreconditionError):
            RateExperimentConfig(base_pair=sign_pair, n_ladder=ladder)

    def test_p_below_one(self, sign_pair):
        with pytest.raises(DomainError):
            RateExperimentConfig(base_pair=sign_pair, p=0.5)

    def test_stopped_error_records_its_rule(self, sign_pair):
        cfg = RateExperimentConfig(base_pair=sign_pair, error_kind=ErrorKind.STOPPED, plan=small_plan())
        assert cfg.rule == StoppingRule.at(1.0)
        assert cfg.record_spec().stopping_rules == (StoppingRule.at(1.0),)
        assert cfg.theorem is Theorem.STOPPED_L1

    def test_csv_row(self):
        point = RatePoint(n=4, epsilon=math.e**-2, error=summarize([math.e**-1] * 50), seed=0, usable=False)
        row = point.csv_row()
        assert len(row) == len(RATES_CSV_HEADER)
        assert row[0] == "4"
        assert float(row[4]) == pytest.approx(-2.0)
        assert float(row[5]) == pytest.approx(-1.0)


class TestRunStabilityExperiment:
    """Small end-to-end rate runs"""

    def test_structure(self, sign_pair):
        cfg = RateExperimentConfig(base_pair=sign_pair, n_ladder=(2, 4, 8), plan=small_plan(), grid_doubling=False)
        result = run_stability_experiment(cfg)
        assert [p.n for p in result.fit.points] == [2, 4, 8]
        assert all(p.seed == 9 for p in result.fit.points)
        epsilons = [p.epsilon for p in result.fit.points]
        assert epsilons[0] > epsilons[1] > epsilons[2] > 0.0
        assert result.provenance["theorem"] == "sup-L1"
        assert result.provenance["alpha"] == 0.5
        assert result.provenance["ladder"] == [2, 4, 8]
        assert result.grid_doubling is None
        assert result.fit.exponent.value == 0.5

    def test_independent_seeds(self, sign_pair):
        cfg = RateExperimentConfig(
            base_pair=sign_pair,
            n_ladder=(2, 4, 8),
            plan=small_plan(paths=100),
            common_random_numbers=False,
            grid_doubling=False,
        )
        seeds = run_stability_experiment(cfg).provenance["seeds"]
        assert len(set(seeds.values())) == 3

    def test_bv_points_carry_a_bound(self, sign_pair):
        cfg = RateExperimentConfig(
            base_pair=sign_pair,
            n_ladder=(2, 4, 8),
            plan=small_plan(paths=1200, block_size=400),
            error_kind=ErrorKind.BV,
            grid_doubling=False,
        )
        result = run_stability_experiment(cfg)
        for point in result.fit.points:
            assert point.bound is not None
            assert point.error.mean <= point.bound

    def test_inconclusive_without_usable_levels(self):
        """A pair that is its own mollification has no error to fit"""
        pair = SdePair.identical(0.0, 1.0, constant_drift(0.5), constant_diffusion())
        cfg = RateExperimentConfig(base_pair=pair, n_ladder=(2, 4, 8), plan=small_plan(paths=100))
        result = run_stability_experiment(cfg)
        assert result.fit.verdict is Verdict.INCONCLUSIVE
        assert result.fit.slope is None
        assert result.grid_doubling is None


class TestKeyEstimate:
    """Path integrals of the coefficient gaps against their weighted norms"""

    def test_identical_pair(self, sign_pair):
        report = key_estimate_check(sign_pair, small_plan())
        assert report.drift_integral.mean == 0.0
        assert report.drift_norm == 0.0
        assert report.drift_ratio == 0.0
        assert not report.flagged

    def test_ladder(self, sign_pair):
        ladder = key_estimate_ladder(sign_pair, (2, 4, 8), small_plan())
        assert [r.n for r in ladder.reports] == [2, 4, 8]
        assert all(r.drift_norm > 0 for r in ladder.reports)
        assert all(r.diffusion_integral.mean == 0.0 for r in ladder.reports)
        assert ladder.drift_spread is not None
        assert ladder.diffusion_spread is None
        assert ladder.within_band


@pytest.mark.slow
class TestRateAcceptance:
    """Desk-scale runs for the Lipschitz-diffusion regime"""

    def test_sup_error_slope(self, sign_pair):
        cfg = RateExperimentConfig(
            base_pair=sign_pair,
            n_ladder=(4, 8, 16, 32, 64),
            plan=SimulationPlan(steps=2**10, paths=4000, seed=1),
            workers=4,
        )
        result = run_stability_experiment(cfg)
        assert result.fit.verdict is Verdict.CONSISTENT
        assert result.fit.slope >= 0.35
        assert result.grid_doubling is not None

    def test_slope_is_seed_stable(self, sign_pair):
        cfg = RateExperimentConfig(
            base_pair=sign_pair,
            n_ladder=(4, 8, 16, 32),
            plan=SimulationPlan(steps=2**9, paths=2000, seed=1),
            workers=4,
        )
        assert slope_seed_stability(cfg, other_seed=2).stable

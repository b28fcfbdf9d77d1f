#!/usr/bin/env python3
"""
Tests for the parametrix kernels, the series majorant and the Gaussian envelope
"""

import math
import os
import sys
from dataclasses import replace

import numpy as np
import pytest
import scipy.special

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from sde_stability_checker.coeffs import SdePair, constant_diffusion, constant_drift, holder_diffusion, sign_drift
from sde_stability_checker.errors import DomainError, PreconditionError
from sde_stability_checker.parametrix import (
    FrozenKernelParams,
    MonteCarloSpec,
    ParametrixModel,
    TimeSampling,
    c0_constant,
    certify_gaussian_bound,
    gaussian_kernel,
    inequality_micro_suite,
    majorant_constant,
    majorant_tail,
    series_majorant,
)
from sde_stability_checker.quadrature import integrate

SMALL_BUDGET = MonteCarloSpec(samples=4000, max_samples=4000, chunk_size=1000, seed=11)


@pytest.fixture
def sign_model():
    pair = SdePair.identical(0.0, 1.0, sign_drift(), constant_diffusion())
    return ParametrixModel.from_pair(pair)


class TestGaussianKernel:
    """p_c(t, x, z)"""

    @pytest.mark.parametrize("c,t,x", [(1.0, 1.0, 0.0), (8.0, 0.01, 2.0), (0.5, 3.0, -1.0)])
    def test_unit_mass(self, c, t, x):
        half = 12.0 * math.sqrt(c * t)
        mass, _ = integrate(lambda z: float(gaussian_kernel(c, t, x, z)), x - half, x + half, points=[x])
        assert mass == pytest.approx(1.0, abs=1e-10)

    def test_symmetric(self):
        assert float(gaussian_kernel(2.0, 0.5, 0.3, -0.4)) == float(gaussian_kernel(2.0, 0.5, -0.4, 0.3))

    def test_invalid(self):
        with pytest.raises(DomainError):
            gaussian_kernel(0.0, 1.0, 0.0, 0.0)
        with pytest.raises(DomainError):
            gaussian_kernel(1.0, np.array([1.0, 0.0]), 0.0, 0.0)


class TestFrozenKernelParams:
    """Constants of the kernel bounds"""

    def test_from_sign_pair(self):
        pair = SdePair.identical(0.0, 2.0, sign_drift(), constant_diffusion())
        params = FrozenKernelParams.from_pair(pair)
        assert params == FrozenKernelParams(t0=2.0, K=1.0, lam=1.0, eta=1.0)

    def test_diffusion_holder_constant_enters_k(self):
        """K covers the Holder constant of sigma^2, 2 sqrt(lambda) K_sigma"""
        s = holder_diffusion(1.0, 2.0, 0.75)
        params = FrozenKernelParams.from_coefficients(sign_drift(), s, 1.0)
        assert params.K == pytest.approx(2.0 * 3.0 * 2.0)
        assert params.eta == 0.75

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"t0": 0.0, "K": 1.0, "lam": 1.0, "eta": 1.0},
            {"t0": 1.0, "K": -1.0, "lam": 1.0, "eta": 1.0},
            {"t0": 1.0, "K": 1.0, "lam": 0.5, "eta": 1.0},
            {"t0": 1.0, "K": 1.0, "lam": 1.0, "eta": 0.4},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            FrozenKernelParams(**kwargs)

    def test_c0_vanishes_without_k(self):
        assert c0_constant(FrozenKernelParams(t0=1.0, K=0.0, lam=1.0, eta=1.0)) == 0.0


class TestSeriesMajorant:
    """Terms and tails of the majorant series"""

    PARAMS = FrozenKernelParams(t0=1.0, K=0.1, lam=1.0, eta=1.0)

    def test_tail_matches_mittag_leffler(self):
        """With eta = 1 the full series is E_{1/2}(z) - 1 = exp(z^2) erfc(-z) - 1"""
        t = 0.01
        total = majorant_tail(0, t, self.PARAMS)
        z = math.sqrt(t) * majorant_constant(self.PARAMS) * math.gamma(0.5)
        assert total == pytest.approx(math.exp(z * z) * scipy.special.erfc(-z) - 1.0, rel=1e-10)

    def test_tail_is_the_sum_of_terms(self):
        t = 0.05
        terms = sum(series_majorant(m, t, self.PARAMS) for m in range(1, 6))
        assert majorant_tail(0, t, self.PARAMS) - majorant_tail(5, t, self.PARAMS) == pytest.approx(terms, rel=1e-10)

    def test_tail_converges(self):
        t = 0.01
        tails = [majorant_tail(M, t, self.PARAMS) for M in (1, 2, 5, 10, 50)]
        assert all(a > b for a, b in zip(tails, tails[1:]))
        assert tails[-1] < 1e-10

    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_time_scaling_follows_the_simplex_integral(self, m):
        """For eta < 1 the m-th term scales like t^{m eta/2}, not t^{m(1 - eta/2)}"""
        params = FrozenKernelParams(t0=1.0, K=0.1, lam=1.0, eta=0.5)
        C = majorant_constant(params)
        t = 0.04
        expected = (t**0.25 * C * math.gamma(0.25)) ** m / math.gamma(1.0 + 0.25 * m)
        assert series_majorant(m, t, params) == pytest.approx(expected, rel=1e-10)
        ratio = series_majorant(m, 4.0 * t, params) / series_majorant(m, t, params)
        assert ratio == pytest.approx(4.0 ** (0.25 * m), rel=1e-10)

    def test_zero_constant(self):
        assert majorant_tail(3, 1.0, FrozenKernelParams(t0=1.0, K=0.0, lam=1.0, eta=1.0)) == 0.0

    def test_overflow_reported_as_infinite(self):
        params = FrozenKernelParams(t0=10.0, K=50.0, lam=1.0, eta=0.5)
        assert majorant_tail(2, 10.0, params) == math.inf

    def test_invalid(self):
        with pytest.raises(DomainError):
            series_majorant(0, 1.0, self.PARAMS)
        with pytest.raises(DomainError):
            series_majorant(1, 0.0, self.PARAMS)
        with pytest.raises(DomainError):
            majorant_tail(-1, 1.0, self.PARAMS)


class TestThetaBound:
    """Sampled check of the pointwise kernel bound"""

    def test_sign_pair_satisfies_bound(self, sign_model):
        report = sign_model.check_theta_bound(n_samples=100_000, rng_seed=0)
        assert report.passed
        assert report.violations == 0
        assert 0.0 < report.max_ratio <= 1.0

    def test_shrunken_constant_is_caught(self, sign_model):
        """The sampled ratio reaches the level where a hundredfold smaller C0 fails"""
        report = sign_model.check_theta_bound(n_samples=100_000, rng_seed=0, c0_scale=0.01)
        assert not report.passed
        assert report.violations > 0
        assert report.max_ratio > 1.0

    def test_holder_pair_satisfies_bound(self):
        pair = SdePair.identical(0.0, 1.0, sign_drift(0.5), holder_diffusion(1.0, 0.25, 0.75))
        report = ParametrixModel.from_pair(pair).check_theta_bound(n_samples=50_000, rng_seed=4)
        assert report.passed

    def test_constant_coefficients_have_no_correction(self):
        model = ParametrixModel.from_pair(SdePair.identical(0.0, 1.0, constant_drift(0.0), constant_diffusion()))
        assert model.is_constant
        t = np.array([0.1, 0.5])
        np.testing.assert_array_equal(model.theta_hat(t, np.array([0.0, 1.0]), np.array([0.3, -2.0])), 0.0)
        assert model.check_theta_bound(n_samples=1000).max_ratio == 0.0


class TestDensityEstimate:
    """Truncated parametrix series for the transition density"""

    def test_constant_drift_is_exact(self):
        """With constant coefficients the frozen kernel is the transition density"""
        model = ParametrixModel.from_pair(SdePair.identical(0.0, 1.0, constant_drift(0.5), constant_diffusion()))
        est = model.density_estimate(1.0, 0.7, 0.0, 2, SMALL_BUDGET)
        assert est.total == pytest.approx(float(gaussian_kernel(1.0, 1.0, 0.5, 0.7)), rel=1e-14)
        assert est.tail_bound == 0.0
        assert [c.value for c in est.corrections] == [0.0, 0.0]

    def test_pure_brownian_motion(self):
        model = ParametrixModel.from_pair(SdePair.identical(0.0, 1.0, constant_drift(0.0), constant_diffusion()))
        est = model.density_estimate(1.0, 0.5, 0.0, 0, SMALL_BUDGET)
        assert est.total == pytest.approx(float(gaussian_kernel(1.0, 1.0, 0.0, 0.5)))
        assert est.corrections == ()

    def test_corrections_independent_of_workers(self, sign_model):
        one = sign_model.parametrix_term(1, 0.5, 0.2, 0.0, SMALL_BUDGET)
        four = sign_model.parametrix_term(1, 0.5, 0.2, 0.0, replace(SMALL_BUDGET, workers=4))
        assert one.value == four.value
        assert one.samples == 4000
        assert math.isfinite(one.stderr)

    def test_exhausted_budget_is_flagged(self, sign_model):
        spec = MonteCarloSpec(samples=1000, max_samples=1000, chunk_size=1000, rel_tol=1e-9, abs_tol=1e-12)
        term = sign_model.parametrix_term(1, 0.5, 0.3, 0.0, spec)
        assert term.low_precision
        assert term.samples == 1000

    def test_uniform_time_sampling(self, sign_model):
        spec = MonteCarloSpec(
            samples=2000, max_samples=2000, chunk_size=1000, seed=2, time_sampling=TimeSampling.UNIFORM
        )
        term = sign_model.parametrix_term(2, 0.5, 0.3, 0.0, spec)
        assert term.order == 2
        assert math.isfinite(term.value)

    def test_order_limits(self, sign_model):
        with pytest.raises(DomainError):
            sign_model.density_estimate(1.0, 0.0, 0.0, 3, SMALL_BUDGET)
        with pytest.raises(DomainError):
            sign_model.density_estimate(0.0, 0.0, 0.0, 1, SMALL_BUDGET)
        with pytest.raises(DomainError):
            sign_model.parametrix_term(0, 1.0, 0.0, 0.0, SMALL_BUDGET)

    def test_invalid_budget(self):
        with pytest.raises(DomainError):
            MonteCarloSpec(samples=10, max_samples=5)
        with pytest.raises(DomainError):
            MonteCarloSpec(workers=0)


class TestGaussianCertificate:
    """Empirical constant of the Gaussian upper bound"""

    def test_brownian_samples(self):
        """For N(0, 1) samples the ratio to p_8 peaks at sqrt(8) at the origin"""
        samples = np.random.default_rng(0).normal(0.0, 1.0, 100_000)
        cert = certify_gaussian_bound(samples, 1.0, 0.0, 1.0)
        assert cert.passed
        assert abs(cert.argmax) < 0.5
        bias = math.sqrt(8.0) * (1.0 - 1.0 / math.sqrt(1.0 + 0.11**2))
        assert abs(cert.c_hat - math.sqrt(8.0)) <= 3.0 * cert.c_hat_stderr + bias

    def test_invalid_inputs(self):
        samples = np.random.default_rng(1).normal(size=2000)
        with pytest.raises(DomainError):
            certify_gaussian_bound(samples, 0.0, 0.0, 1.0)
        with pytest.raises(PreconditionError):
            certify_gaussian_bound(samples[:10], 1.0, 0.0, 1.0)


class TestInequalitySuite:
    """Elementary inequalities behind the kernel bound"""

    @pytest.mark.parametrize("lam,eta", [(1.0, 1.0), (2.0, 0.5), (4.0, 0.75)])
    def test_all_pass(self, lam, eta):
        checks = inequality_micro_suite(n=100_000, seed=5, lam=lam, eta=eta)
        assert [c.name for c in checks] == ["gaussian-moment", "holder-moment"]
        assert all(c.passed for c in checks)

#!/usr/bin/env python3
"""
Tests for the shared quadrature rules
"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from sde_stability_checker.errors import DomainError, QuadratureError
from sde_stability_checker.quadrature import (
    CumulativeTable,
    QuadratureSpec,
    breakpoints_in,
    integrate,
    reference_rule,
)


class TestIntegrate:
    """Adaptive quadrature split at breakpoints"""

    def test_polynomial(self):
        value, error = integrate(lambda x: x * x, 0.0, 3.0)
        assert value == pytest.approx(9.0, rel=1e-12)
        assert error < 1e-8

    def test_reversed_limits(self):
        assert integrate(math.exp, 1.0, 0.0)[0] == pytest.approx(1.0 - math.e)

    def test_empty_interval(self):
        assert integrate(math.sin, 2.0, 2.0) == (0.0, 0.0)

    def test_jump_with_breakpoint(self):
        value, _ = integrate(lambda x: 1.0 if x > 0.3 else 0.0, 0.0, 1.0, points=[0.3, 5.0])
        assert value == pytest.approx(0.7, abs=1e-12)

    def test_infinite_limits(self):
        with pytest.raises(DomainError):
            integrate(math.exp, 0.0, math.inf)

    def test_unreachable_tolerance(self):
        spec = QuadratureSpec(rel_tol=1e-14, abs_tol=1e-300, limit=1)
        with pytest.raises(QuadratureError):
            integrate(lambda x: math.sin(1.0 / x), 1e-4, 1.0, spec=spec)


class TestQuadratureSpec:
    @pytest.mark.parametrize(
        "kwargs",
        [{"rel_tol": 0.0}, {"abs_tol": -1.0}, {"truncation_radius": 0.0}, {"panels": 0}, {"nodes": 1}, {"limit": 0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            QuadratureSpec(**kwargs)

    def test_with_tolerance(self):
        assert QuadratureSpec().with_tolerance(1e-4).rel_tol == 1e-4


class TestReferenceRule:
    """Composite Gauss-Legendre on [0, 1]"""

    @pytest.mark.parametrize("graded", [False, True])
    def test_integrates_polynomials(self, graded):
        u, w = reference_rule(4, 8, graded)
        assert np.sum(w) == pytest.approx(1.0, abs=1e-13)
        assert np.sum(w * u**3) == pytest.approx(0.25, abs=1e-13)

    def test_read_only_and_cached(self):
        u, _ = reference_rule(2, 4)
        assert reference_rule(2, 4)[0] is u
        with pytest.raises(ValueError):
            u[0] = 0.5


class TestCumulativeTable:
    """Vectorised cumulative integrals"""

    def test_matches_closed_form(self):
        table = CumulativeTable(np.cos, 0.0, 4.0, panels=32, nodes=10)
        x = np.linspace(0.0, 4.0, 57)
        np.testing.assert_allclose(table(x), np.sin(x), atol=1e-13)
        assert table.total == pytest.approx(math.sin(4.0), abs=1e-13)

    def test_clamps_outside_the_interval(self):
        table = CumulativeTable(np.ones_like, -1.0, 1.0, panels=4, nodes=4)
        np.testing.assert_allclose(table(np.array([-5.0, 5.0])), [0.0, 2.0], atol=1e-14)
        assert table(0.0).shape == ()

    def test_empty_interval(self):
        with pytest.raises(DomainError):
            CumulativeTable(np.cos, 1.0, 1.0)


def test_breakpoints_in():
    assert breakpoints_in([0.5, -2.0, 0.5, 0.1, 3.0], -1.0, 1.0) == (0.1, 0.5)

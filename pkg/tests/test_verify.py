"""Weak-form residual checks: the verifier must accept true pairs and
reject wrong ones by a wide margin."""
from __future__ import annotations

import numpy as np
import pytest

from condflow import (
    AffinePotential,
    Box,
    ExpressionConductivity,
    ExpressionField,
    SampledConductivity,
    default_bump_set,
    weak_residual,
)
from condflow.errors import EvaluationDomainError
from condflow.verify import BumpTestFunction
from condflow.verify import TestFunctionSet as BumpSet  # renamed so pytest does not collect it

UNIT_BOX = Box([-1.0, -1.0], [1.0, 1.0])
PARABOLIC = ExpressionField("x1 + x2^2/4", 2)
TRUE_SIGMA = ExpressionConductivity("exp(-x1/2)", 2)


class _ScaledConductivity:
    def __init__(self, base, factor):
        self.base = base
        self.factor = factor
        self.dimension = base.dimension

    def sigma_many(self, points):
        return self.factor * self.base.sigma_many(points)

    def sigma(self, x):
        return self.factor * self.base.sigma(x)


def test_default_bump_set_covers_the_box():
    tests = default_bump_set(UNIT_BOX)
    assert len(tests.bumps) == 16
    for bump in tests.bumps:
        assert np.all(bump.center - bump.radius >= UNIT_BOX.lo - 1e-12)
        assert np.all(bump.center + bump.radius <= UNIT_BOX.hi + 1e-12)


def test_bump_vanishes_outside_its_ball():
    bump = BumpTestFunction(np.zeros(2), 0.5)
    outside = np.array([[0.6, 0.0], [0.4, 0.4], [2.0, 2.0]])
    assert np.all(bump.psi(outside) == 0.0)
    assert np.all(bump.grad_psi(outside) == 0.0)
    inside = np.array([[0.0, 0.0], [0.2, 0.1]])
    assert np.all(bump.psi(inside) > 0.0)


def test_unit_conductivity_affine_is_divergence_free():
    report = weak_residual(
        ExpressionConductivity("1", 2), AffinePotential([1.0, 1.0]), default_bump_set(UNIT_BOX)
    )
    assert report.max_normalized <= 1e-12


def test_closed_form_pair_passes():
    report = weak_residual(TRUE_SIGMA, PARABOLIC, default_bump_set(UNIT_BOX))
    assert report.max_normalized <= 1e-6


def test_wrong_pair_is_loud():
    report = weak_residual(
        ExpressionConductivity("1", 2), PARABOLIC, default_bump_set(UNIT_BOX)
    )
    assert report.max_normalized >= 0.05


def test_normalized_residual_is_scale_invariant():
    tests = default_bump_set(UNIT_BOX)
    base = weak_residual(TRUE_SIGMA, PARABOLIC, tests)
    scaled = weak_residual(_ScaledConductivity(TRUE_SIGMA, 10.0), PARABOLIC, tests)
    for a, b in zip(base.results, scaled.results):
        assert b.normalized == pytest.approx(a.normalized, abs=1e-12)


def test_doubling_the_order_barely_moves_the_residuals():
    low = weak_residual(TRUE_SIGMA, PARABOLIC, default_bump_set(UNIT_BOX, order=24))
    high = weak_residual(TRUE_SIGMA, PARABOLIC, default_bump_set(UNIT_BOX, order=48))
    for a, b in zip(low.results, high.results):
        assert abs(a.normalized - b.normalized) < 0.1 * 1e-6


def test_holes_flag_bumps_and_warn():
    # plant a NaN hole in one corner of a sampled conductivity
    n = 21
    xs = np.linspace(-1, 1, n)
    values = np.exp(-xs[:, None] / 2.0) * np.ones((n, n))
    values[0, 0] = np.nan
    sampled = SampledConductivity(UNIT_BOX, (n, n), values)
    report = weak_residual(sampled, PARABOLIC, default_bump_set(UNIT_BOX))
    flagged = [r for r in report.results if r.flagged]
    clean = [r for r in report.results if not r.flagged]
    assert flagged, "the corner bump should touch the hole"
    assert report.warnings
    assert len(clean) == 16 - len(flagged)
    assert np.isfinite(report.max_normalized)


def test_every_bump_flagged_raises():
    n = 5
    values = np.full((n, n), np.nan)
    values[2, 2] = 1.0  # keep the constructor from rejecting an all-NaN grid
    sampled = SampledConductivity(UNIT_BOX, (n, n), values)
    with pytest.raises(EvaluationDomainError):
        weak_residual(sampled, PARABOLIC, default_bump_set(UNIT_BOX))


def test_report_formats_one_line_per_bump():
    report = weak_residual(
        ExpressionConductivity("1", 2), AffinePotential([2.0, -1.0]), default_bump_set(UNIT_BOX)
    )
    text = str(report)
    assert text.count("\n") >= len(report.results) - 1
    assert text.splitlines()[-1].strip().startswith("max ")


def test_explicit_bump_list_is_accepted():
    bumps = [BumpTestFunction(np.array([0.0, 0.0]), 0.4)]
    report = weak_residual(TRUE_SIGMA, PARABOLIC, BumpSet(tuple(bumps), order=24))
    assert report.max_normalized <= 1e-6

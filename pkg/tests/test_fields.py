from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condflow import (
    AffinePotential,
    Box,
    ExpressionField,
    MollifiedField,
    SampledGridField,
    certify,
    check_gradient_bound,
    mollify,
)
from condflow.errors import CertificationError, EvaluationDomainError
from condflow.fields import MollifierSpec


def test_affine_eval_triple():
    field = AffinePotential([2.0, 1.0])
    u, grad, lap = field.eval([1.0, 1.0])
    assert u == pytest.approx(3.0)
    np.testing.assert_allclose(grad, [2.0, 1.0])
    assert lap == 0.0


def test_expression_eval_triple():
    field = ExpressionField("x1 + x2^2/4", 2)
    u, grad, lap = field.eval([0.0, 2.0])
    assert u == pytest.approx(1.0)
    np.testing.assert_allclose(grad, [1.0, 1.0], atol=1e-14)
    assert lap == pytest.approx(0.5)


def test_expression_gradient_at_origin():
    field = ExpressionField("x1 + 0.5*sin(x2)", 2)
    np.testing.assert_allclose(field.gradient([0.0, 0.0]), [1.0, 0.5], atol=1e-15)
    assert field.laplacian([0.0, 0.0]) == pytest.approx(0.0, abs=1e-15)


def test_symbolic_derivatives_match_central_differences():
    # spot check at 100 random interior points with a 1e-5 stencil
    field = ExpressionField("x1*cos(x2) + exp(x1/4) + x2^2/8", 2)
    rng = np.random.default_rng(23)
    pts = rng.uniform(-0.9, 0.9, size=(100, 2))
    h = 1e-5
    h_lap = 1e-3  # second differences cancel catastrophically at 1e-5
    grads = field.gradient_many(pts)
    laps = field.laplacian_many(pts)
    for k, x in enumerate(pts):
        fd_grad = np.zeros(2)
        fd_lap = 0.0
        u0 = field.value(x)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd_grad[i] = (field.value(x + e) - field.value(x - e)) / (2 * h)
            e[i] = h_lap
            fd_lap += (field.value(x + e) - 2 * u0 + field.value(x - e)) / (h_lap * h_lap)
        np.testing.assert_allclose(grads[k], fd_grad, rtol=1e-6, atol=1e-9)
        assert laps[k] == pytest.approx(fd_lap, rel=1e-5, abs=1e-6)


def test_sampled_grid_tracks_source_derivatives():
    box = Box([-1.0, -1.0], [1.0, 1.0])
    source = ExpressionField("x1 + x2^2/4", 2)
    field = SampledGridField(box, (201, 201), source=source)  # h = 0.01
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.8, 0.8, size=(40, 2))
    np.testing.assert_allclose(field.value_many(pts), source.value_many(pts), atol=1e-3)
    np.testing.assert_allclose(field.gradient_many(pts), source.gradient_many(pts), atol=1e-3)
    np.testing.assert_allclose(field.laplacian_many(pts), source.laplacian_many(pts), atol=1e-3)


def test_sampled_grid_rejects_points_off_the_grid():
    box = Box([0.0], [1.0])
    field = SampledGridField(box, (11,), source=AffinePotential([1.0]))
    with pytest.raises(EvaluationDomainError):
        field.value_many(np.asarray([[2.0]]))


def test_mollifier_weights_are_a_partition():
    for width in (0.05, 0.1, 0.5):
        spec = MollifierSpec(width)
        for d in (1, 2):
            offsets, weights = spec.stencil(d)
            assert np.all(weights >= 0)
            assert abs(float(np.sum(weights)) - 1.0) <= 1e-12
            assert np.max(np.abs(offsets)) <= width + 1e-15


def test_mollify_reproduces_affine_exactly():
    base = AffinePotential([1.0, -2.0], constant=0.5)
    smooth = mollify(base, width=0.1)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-0.8, 0.8, size=(30, 2))
    np.testing.assert_allclose(smooth.value_many(pts), base.value_many(pts), atol=1e-10)
    np.testing.assert_allclose(smooth.gradient_many(pts), base.gradient_many(pts), atol=1e-10)


def test_mollified_abs_matches_away_from_the_kink():
    base = ExpressionField("abs(x1)", 1)
    smooth = mollify(base, width=0.1)
    # the averaging window at x1 = 1 never touches the kink
    assert smooth.value([1.0]) == pytest.approx(1.0, abs=1e-10)
    assert smooth.gradient([1.0])[0] == pytest.approx(1.0, abs=1e-10)


def test_mollified_field_shrinks_its_domain():
    base = ExpressionField("x1 + 0.5*sin(x2)", 2)
    base.domain_box = Box([-2.0, -2.0], [2.0, 2.0])
    smooth = mollify(base, width=0.1)
    assert isinstance(smooth, MollifiedField)
    np.testing.assert_allclose(smooth.domain_box.lo, [-1.9, -1.9])
    np.testing.assert_allclose(smooth.domain_box.hi, [1.9, 1.9])


def test_gradient_bound_affine():
    report = check_gradient_bound(AffinePotential([1.0, 1.0]), Box([-2, -2], [2, 2]))
    assert report.ok
    assert report.m == pytest.approx(math.sqrt(2.0), abs=1e-12)


def test_gradient_bound_sine_field():
    field = ExpressionField("x1 + 0.5*sin(x2)", 2)
    report = check_gradient_bound(field, Box([-2, -2], [2, 2]))
    # |grad u|^2 = 1 + cos(x2)^2/4 bottoms out at x2 = pi/2
    assert report.ok
    assert report.m == pytest.approx(1.0, abs=1e-9)


def test_gradient_bound_flags_critical_point():
    field = ExpressionField("x1^2 + x2^2", 2)
    report = check_gradient_bound(field, Box([-1, -1], [1, 1]))
    assert not report.ok
    assert np.linalg.norm(report.worst_point) < 0.1


def test_certify_raises_on_degenerate_field():
    with pytest.raises(CertificationError):
        certify(ExpressionField("x1^2 + x2^2", 2), Box([-1, -1], [1, 1]))


def test_certified_bound_shrinks_as_the_box_grows():
    field = ExpressionField("x1 + 0.5*sin(x2)", 2)
    small = check_gradient_bound(field, Box([-0.5, -0.5], [0.5, 0.5])).m
    large = check_gradient_bound(field, Box([-2, -2], [2, 2])).m
    assert large <= small + 1e-12


def test_mollified_laplacian_respects_the_sup_bound():
    base = ExpressionField("x1 + x2^2/4", 2)
    base.domain_box = Box([-2.0, -2.0], [2.0, 2.0])
    smooth = mollify(base, width=0.1)
    rng = np.random.default_rng(9)
    pts = rng.uniform(-1.5, 1.5, size=(100, 2))
    lap = smooth.laplacian_many(pts)
    assert np.max(np.abs(lap)) <= 0.5 + 1e-8


@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8))
@settings(max_examples=40, deadline=None)
def test_mollified_sine_gradient_stays_strong(x1, x2):
    field = mollify(ExpressionField("x1 + 0.5*sin(x2)", 2), width=0.1)
    g = field.gradient([x1, x2])
    assert np.linalg.norm(g) >= 0.8

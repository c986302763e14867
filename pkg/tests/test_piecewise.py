"""Polygonal decompositions: face classification, flux matching, transport,
and the chain construction over multiple cells."""
from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from condflow import (
    AffinePotential,
    Box,
    Cell,
    ChainPlan,
    Classification,
    ExpressionField,
    Face,
    FanPotential,
    build_faces_auto,
    build_piecewise_sigma,
    check_admissible,
    classify_face,
    flux_match,
    split_fan,
    fan_to_cells,
    fan_propagation_oracle,
    transport_boundary_value,
    weak_residual,
    default_bump_set,
)
from condflow.errors import TopologyError
from condflow.fans import ConeFan
from condflow.piecewise import ConstantCellSigma, FaceData, ViolationReport

UNIT = [(0, 0), (1, 0), (1, 1), (0, 1)]


def _unit_cell(potential, cell_id="c"):
    return Cell(cell_id, UNIT, potential)


def test_face_classification_of_a_parabolic_cell():
    cell = _unit_cell(ExpressionField("x1 + x2^2/4", 2))
    right = Face("r", cell, None, (1, 0), (1, 1))
    left = Face("l", cell, None, (0, 1), (0, 0))
    bottom = Face("b", cell, None, (0, 0), (1, 0))
    assert classify_face(right) is Classification.OUTFLOW
    assert classify_face(left) is Classification.INFLOW
    assert classify_face(bottom) is Classification.TANGENTIAL


def test_mixed_face_detected_when_the_sign_flips():
    cell = Cell("m", [(-1, 0), (1, 0), (1, 1), (-1, 1)], ExpressionField("x1 + x1*x2", 2))
    bottom = Face("b", cell, None, (-1, 0), (1, 0))
    assert classify_face(bottom) is Classification.MIXED


def test_transport_of_constant_data_through_an_affine_cell():
    cell = _unit_cell(AffinePotential([1.0, 0.0]))
    inflow = Face("l", cell, None, (0, 1), (0, 0))
    sig = transport_boundary_value(cell, inflow, Fraction(2))
    assert sig.constant_value == Fraction(2)
    pts = np.array([[0.25, 0.5], [0.9, 0.1]])
    np.testing.assert_array_equal(sig.sigma_many(pts), [2.0, 2.0])


def test_transport_accumulates_the_laplacian_integral():
    cell = _unit_cell(ExpressionField("x1 + x2^2/4", 2))
    inflow = Face("l", cell, None, (0, 1), (0, 0))
    sig = transport_boundary_value(cell, inflow, Fraction(1))
    xs = np.linspace(0.05, 0.95, 7)
    pts = np.column_stack([xs, np.full_like(xs, 0.3)])
    np.testing.assert_allclose(sig.sigma_many(pts), np.exp(-xs / 2.0), atol=1e-6)


def test_transport_is_insensitive_to_the_ode_tolerance():
    cell = _unit_cell(ExpressionField("x1 + x2^2/4", 2))
    inflow = Face("l", cell, None, (0, 1), (0, 0))
    loose = transport_boundary_value(cell, inflow, Fraction(1), rtol=1e-9)
    tight = transport_boundary_value(cell, inflow, Fraction(1), rtol=1e-11)
    pts = np.array([[0.5, 0.2], [0.8, 0.7], [0.2, 0.9]])
    np.testing.assert_allclose(loose.sigma_many(pts), tight.sigma_many(pts), atol=1e-6)


def test_flux_match_keeps_exact_ratios():
    lower = Cell("down", [(0, -1), (1, -1), (1, 0), (0, 0)], AffinePotential([2, -2]))
    upper = Cell("up", [(0, 0), (1, 0), (1, 1), (0, 1)], AffinePotential([2, -1]))
    shared = Face("s", lower, upper, (1, 0), (0, 0))
    gamma = flux_match(ConstantCellSigma(lower, Fraction(1)), lower, upper, shared)
    assert gamma.constant == Fraction(2)


def test_flux_match_refuses_tangential_faces():
    lower = Cell("down", [(0, -1), (1, -1), (1, 0), (0, 0)], AffinePotential([1, 0]))
    upper = Cell("up", UNIT, AffinePotential([2, 0]))
    shared = Face("s", lower, upper, (1, 0), (0, 0))
    with pytest.raises(TopologyError):
        flux_match(ConstantCellSigma(lower, Fraction(1)), lower, upper, shared)


def _two_cell_strip():
    a = Cell("A", UNIT, AffinePotential([1, 0]))
    b = Cell("B", [(1, 0), (2, 0), (2, 1), (1, 1)], AffinePotential([2, 0], constant=-1))
    return [a, b]


def test_two_cell_strip_builds_exact_constants():
    plan = check_admissible(_two_cell_strip())
    assert isinstance(plan, ChainPlan)
    field, report = build_piecewise_sigma(plan)
    values = field.constant_values()
    assert values == {"A": Fraction(1), "B": Fraction(1, 2)}
    assert field.sigma([0.5, 0.5]) == 1.0
    assert field.sigma([1.5, 0.5]) == 0.5
    assert report.max_flux_normalized <= 1e-12
    assert report.flux_checks
    assert "chain from A" in report.plan_text
    lo, hi = report.sigma_ranges["B"]
    assert lo == hi == Fraction(1, 2)


def test_seeds_rescale_the_whole_chain():
    plan = check_admissible(_two_cell_strip())
    field, _ = build_piecewise_sigma(plan, seeds={"A": Fraction(3)})
    assert field.constant_values() == {"A": Fraction(3), "B": Fraction(3, 2)}


def test_nonpositive_seed_is_refused():
    plan = check_admissible(_two_cell_strip())
    with pytest.raises(ValueError):
        build_piecewise_sigma(plan, seeds={"A": Fraction(0)})


def _ring_cells(second_gradient):
    quads = {
        "q1": [(0, 0), (1, 0), (1, 1), (0, 1)],
        "q2": [(-1, 0), (0, 0), (0, 1), (-1, 1)],
        "q3": [(-1, -1), (0, -1), (0, 0), (-1, 0)],
        "q4": [(0, -1), (1, -1), (1, 0), (0, 0)],
    }
    grads = {
        "q1": (-1, 1),
        "q2": second_gradient,
        "q3": (1, -1),
        "q4": (1, 1),
    }
    return [Cell(cid, verts, AffinePotential(grads[cid])) for cid, verts in quads.items()]


def test_consistent_ring_closes_and_builds():
    plan = check_admissible(_ring_cells((-1, -1)))
    assert isinstance(plan, ChainPlan)
    assert any(chain.closed for chain in plan.chains)
    field, report = build_piecewise_sigma(plan)
    values = field.constant_values()
    assert set(values) == {"q1", "q2", "q3", "q4"}
    assert all(v == Fraction(1) for v in values.values())
    assert report.max_flux_normalized <= 1e-12


def test_inconsistent_ring_is_named_in_the_violation():
    result = check_admissible(_ring_cells((-1, -2)))
    assert isinstance(result, ViolationReport)
    text = str(result)
    assert "cycle-closure" in text
    assert "multiply to 2" in text
    with pytest.raises(TopologyError):
        build_piecewise_sigma(result)


def test_auto_faces_find_the_shared_edge():
    faces = build_faces_auto(_two_cell_strip())
    internal = [f for f in faces if f.is_internal]
    assert len(internal) == 1
    assert {internal[0].owner.id, internal[0].neighbor.id} == {"A", "B"}


def test_quadrant_fan_chain_matches_the_oracle_and_the_weak_form():
    fan = ConeFan(
        spokes=[(1, 0), (0, 1), (-1, 0), (0, -1)],
        gradients=[(1, 1), (2, 1), (2, 3), (1, 3)],
    )
    split = split_fan(fan)
    cells = fan_to_cells(split, halfwidth=1)
    plan = check_admissible(cells, heads=[f"cone{split.index}.2"])
    assert isinstance(plan, ChainPlan)
    field, _ = build_piecewise_sigma(plan)
    oracle = fan_propagation_oracle(split, halfwidth=1)
    values = field.constant_values()
    assert values == {f"cone{label}": v for label, v in oracle.items()}
    report = weak_residual(field, FanPotential(fan), default_bump_set(Box([-1, -1], [1, 1])))
    assert report.max_normalized <= 1e-5

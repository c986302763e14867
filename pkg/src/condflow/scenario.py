"""Scenario files: one JSON document driving a reproducible run.

A scenario declares a single field (expression, mollified expression,
separated interface, cone fan, or a piecewise cell decomposition), a domain
box, optional tolerance overrides, and an ordered list of tasks. Tasks run
sequentially; the first failure stops the run. Every run writes a plain-text
summary whose bytes depend only on the scenario file, the package version,
and the tolerance profile, never on wall time or machine.

Schema (JSON object):

    {
      "field": {"kind": "expression", "source": "x1 + x2^2/4", "dimension": 2},
      "box": {"lo": [-1, -1], "hi": [1, 1]},          // default [-1,1]^d
      "grid": [21, 21],                                // default reconstruct grid
      "tolerances": {"tol_ode": 1e-9, "tol_root": 1e-10,
                     "tol_weak": 1e-6, "eps_tangential": 1e-10},
      "tasks": [{"kind": "reconstruct"},
                {"kind": "verify", "bumps": 16, "order": 24},
                {"kind": "trace", "point": [0.5, 0.5], "tmax": 1.0},
                {"kind": "export", "path": "sigma.txt"}]
    }

Other field kinds:

    {"kind": "mollified", "source": "...", "width": 0.1, "dimension": 2}
    {"kind": "separated", "above": "x1", "below": "2*x1",
     "profile": "x2^2/4", "dimension": 2}
    {"kind": "fan", "spokes": [[1, 0], [0, 1], [-1, -1]],
     "gradients": [["2", "-1"], ["1", "-1"], ["2", "-2"]]}
    {"kind": "piecewise",
     "cells": [{"id": "down", "vertices": [[-1, -1], [1, -1], [1, 0], [-1, 0]],
                "potential": {"affine": [2, -1]}},
               {"id": "up", "vertices": [[-1, 0], [1, 0], [1, 1], [-1, 1]],
                "potential": {"affine": [2, -2]}}],
     "heads": ["down"], "seeds": {"down": "1"}}

Fan and decomposition entries accept integers, floats, or "p/q" strings and
are kept as exact rationals. Task kinds per field kind: expression and
mollified run reconstruct / verify / trace / export; separated, fan, and
piecewise run admissible / build / verify. Exit codes: 0 all tasks passed,
1 task failure, 2 parse error, 3 validation error.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field as dataclass_field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    CondflowError,
    ScenarioError,
    ScenarioValidationError,
)
from .fans import (
    ConeFan,
    FanPotential,
    SeparatedConductivity,
    SeparatedPotential,
    fan_conductivity,
    fan_propagation_oracle,
    fan_sigma_closed_form,
    loop_constraint_holds,
    split_fan,
    validate_fan,
)
from .fields import AffinePotential, ExpressionField, certify, mollify
from .flow import integrate_flow
from .geometry import Box
from .piecewise import (
    Cell,
    ViolationReport,
    build_faces_auto,
    build_piecewise_sigma,
    check_admissible,
)
from .reconstruct import (
    FlowConductivity,
    export_sigma_table,
    reconstruct_on_grid,
)
from .verify import default_bump_set, weak_residual

__all__ = [
    "PROFILES",
    "Tolerances",
    "Scenario",
    "RunResult",
    "load_scenario",
    "run_scenario",
    "trace_once",
]

_FLUX_GATE = 1e-6

_FIELD_KINDS = ("expression", "mollified", "separated", "fan", "piecewise")
_TASKS_BY_KIND = {
    "expression": ("reconstruct", "verify", "trace", "export"),
    "mollified": ("reconstruct", "verify", "trace", "export"),
    "separated": ("admissible", "build", "verify"),
    "fan": ("admissible", "build", "verify"),
    "piecewise": ("admissible", "build", "verify"),
}


@dataclass(frozen=True)
class Tolerances:
    """The four numeric knobs a scenario may override, plus the profile name."""

    profile: str
    tol_ode: float
    tol_root: float
    tol_weak: float
    eps_tangential: float

    def override(self, mapping):
        values = {
            "tol_ode": self.tol_ode,
            "tol_root": self.tol_root,
            "tol_weak": self.tol_weak,
            "eps_tangential": self.eps_tangential,
        }
        for key, value in mapping.items():
            if key not in values:
                raise ScenarioError(f"unknown tolerance key {key!r}")
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ScenarioError(f"tolerance {key} must be a number")
            if not value > 0:
                raise ScenarioValidationError(f"tolerance {key} must be positive")
            values[key] = float(value)
        return Tolerances(profile=self.profile, **values)


PROFILES = {
    "fast": Tolerances("fast", 1e-6, 1e-7, 1e-4, 1e-8),
    "default": Tolerances("default", 1e-9, 1e-10, 1e-6, 1e-10),
    "strict": Tolerances("strict", 1e-11, 1e-12, 1e-7, 1e-12),
}

PROFILE_ENV = "CONDFLOW_PROFILE"


def resolve_profile(name=None) -> Tolerances:
    """Profile by explicit name, else by the environment, else `default`."""
    if name is None:
        name = os.environ.get(PROFILE_ENV, "default")
    try:
        return PROFILES[name]
    except KeyError:
        raise ScenarioValidationError(
            f"unknown tolerance profile {name!r}; pick one of "
            + ", ".join(sorted(PROFILES))
        ) from None


def _fmt(x) -> str:
    if isinstance(x, Fraction):
        return str(x)
    return "%.17g" % float(x)


def _fmt_tol(x) -> str:
    return "%g" % float(x)


def _as_fraction(value, what):
    if isinstance(value, bool):
        raise ScenarioError(f"{what} must be a number or 'p/q' string")
    if isinstance(value, (int, str)):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ScenarioValidationError(f"{what}: {exc}") from None
    if isinstance(value, float):
        # str() round-trips the shortest decimal, so 0.1 stays 1/10
        return Fraction(str(value))
    raise ScenarioError(f"{what} must be a number or 'p/q' string")


def _need(mapping, key, kinds, where):
    if key not in mapping:
        raise ScenarioError(f"{where}: missing key {key!r}")
    value = mapping[key]
    if kinds is not None and (not isinstance(value, kinds) or isinstance(value, bool)):
        raise ScenarioError(f"{where}: key {key!r} has the wrong type")
    return value


def _vector_list(raw, what, length=None):
    if not isinstance(raw, list) or not raw:
        raise ScenarioError(f"{what} must be a non-empty list of vectors")
    out = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, list) or (length and len(entry) != length):
            raise ScenarioError(
                f"{what}[{i}] must be a list" + (f" of {length} entries" if length else "")
            )
        out.append(tuple(_as_fraction(v, f"{what}[{i}]") for v in entry))
    return out


@dataclass
class Scenario:
    """A validated scenario, ready to run."""

    name: str
    kind: str
    box: Box
    tolerances: Tolerances
    tasks: tuple
    grid: tuple = None
    field: object = None
    fan: ConeFan = None
    halfwidth: Fraction = None
    cells: list = None
    faces: list = None
    heads: list = None
    seeds: dict = None
    header: tuple = dataclass_field(default_factory=tuple)


def _parse_box(raw, dimension):
    if raw is None:
        return Box([-1.0] * dimension, [1.0] * dimension), [-1] * dimension, [1] * dimension
    lo = _need(raw, "lo", list, "box")
    hi = _need(raw, "hi", list, "box")
    if len(lo) != dimension or len(hi) != dimension:
        raise ScenarioValidationError(
            f"box must have {dimension} coordinates per corner"
        )
    for v in list(lo) + list(hi):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ScenarioError("box corners must be numbers")
    if not all(l < h for l, h in zip(lo, hi)):
        raise ScenarioValidationError("box must satisfy lo < hi in every axis")
    return Box(lo, hi), lo, hi


def _build_expression_field(decl):
    source = _need(decl, "source", str, "field")
    dimension = _need(decl, "dimension", int, "field")
    if dimension < 1:
        raise ScenarioValidationError("field dimension must be at least 1")
    try:
        return ExpressionField(source, dimension)
    except CondflowError as exc:
        raise ScenarioValidationError(f"field expression: {exc}") from None


def _build_fan(decl):
    spokes = _vector_list(_need(decl, "spokes", list, "field"), "spokes", 2)
    gradients = _vector_list(_need(decl, "gradients", list, "field"), "gradients", 2)
    if len(spokes) != len(gradients):
        raise ScenarioValidationError("spokes and gradients must pair up")
    fan = ConeFan(spokes, gradients)
    problems = validate_fan(fan)
    if problems:
        text = "; ".join(str(p) for p in problems)
        raise ScenarioValidationError(f"fan structure invalid: {text}")
    return fan


def _build_cells(decl):
    raw_cells = _need(decl, "cells", list, "field")
    cells = []
    for i, raw in enumerate(raw_cells):
        if not isinstance(raw, dict):
            raise ScenarioError(f"cells[{i}] must be an object")
        cid = _need(raw, "id", str, f"cells[{i}]")
        verts = _vector_list(_need(raw, "vertices", list, f"cells[{i}]"),
                             f"cells[{i}].vertices", 2)
        pot_raw = _need(raw, "potential", dict, f"cells[{i}]")
        if "affine" in pot_raw:
            coeffs = [
                _as_fraction(v, f"cells[{i}].potential.affine")
                for v in pot_raw["affine"]
            ]
            constant = _as_fraction(
                pot_raw.get("constant", 0), f"cells[{i}].potential.constant"
            )
            potential = AffinePotential(coeffs, constant)
        elif "expression" in pot_raw:
            src = pot_raw["expression"]
            if not isinstance(src, str):
                raise ScenarioError(f"cells[{i}].potential.expression must be a string")
            try:
                potential = ExpressionField(src, 2)
            except CondflowError as exc:
                raise ScenarioValidationError(f"cells[{i}].potential: {exc}") from None
        else:
            raise ScenarioError(
                f"cells[{i}].potential needs an 'affine' or 'expression' entry"
            )
        try:
            cells.append(Cell(cid, verts, potential))
        except CondflowError as exc:
            raise ScenarioValidationError(f"cells[{i}]: {exc}") from None
    return cells


def load_scenario(path, profile=None) -> Scenario:
    """Parse and validate one scenario file.

    Raises ScenarioError (exit 2) on malformed JSON or wrong key shapes and
    ScenarioValidationError (exit 3) on semantic problems. Runtime failures
    (rejected fans, residual gates) are left to run_scenario.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path.name}: not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path.name}: top level must be a JSON object")

    decl = _need(raw, "field", dict, path.name)
    kind = _need(decl, "kind", str, "field")
    if kind not in _FIELD_KINDS:
        raise ScenarioValidationError(
            f"unknown field kind {kind!r}; pick one of " + ", ".join(_FIELD_KINDS)
        )

    tolerances = resolve_profile(profile)
    tol_raw = raw.get("tolerances", {})
    if not isinstance(tol_raw, dict):
        raise ScenarioError("tolerances must be an object")
    tolerances = tolerances.override(tol_raw)

    header = []
    scenario = Scenario(
        name=path.stem,
        kind=kind,
        box=None,
        tolerances=tolerances,
        tasks=(),
    )

    if kind == "expression":
        scenario.field = _build_expression_field(decl)
        header.append(
            f'field expression "{scenario.field.source}" '
            f"dimension {scenario.field.dimension}"
        )
    elif kind == "mollified":
        base = _build_expression_field(decl)
        width = _need(decl, "width", (int, float), "field")
        if not width > 0:
            raise ScenarioValidationError("mollifier width must be positive")
        scenario.field = mollify(base, float(width))
        header.append(
            f'field mollified "{base.source}" width {_fmt_tol(width)} '
            f"dimension {base.dimension}"
        )
    elif kind == "separated":
        above = _need(decl, "above", str, "field")
        below = _need(decl, "below", str, "field")
        profile_src = decl.get("profile")
        dimension = decl.get("dimension", 2)
        if not isinstance(dimension, int) or dimension < 1:
            raise ScenarioError("field dimension must be a positive integer")
        try:
            scenario.field = SeparatedPotential(
                above, below, profile_src, dimension=dimension
            )
        except (CondflowError, ValueError) as exc:
            raise ScenarioValidationError(f"separated field: {exc}") from None
        line = f'field separated above "{above}" below "{below}"'
        if profile_src:
            line += f' profile "{profile_src}"'
        header.append(line + f" dimension {dimension}")
    elif kind == "fan":
        scenario.fan = _build_fan(decl)
        scenario.field = FanPotential(scenario.fan)
        header.append(f"field fan with {scenario.fan.n} cones")
        for k in range(1, scenario.fan.n + 1):
            sx, sy = scenario.fan.spoke(k)
            gx, gy = scenario.fan.gradient(k)
            header.append(f"  spoke {k} ({sx}, {sy}) gradient ({gx}, {gy})")
    else:
        scenario.cells = _build_cells(decl)
        try:
            scenario.faces = build_faces_auto(scenario.cells)
        except CondflowError as exc:
            raise ScenarioValidationError(f"decomposition: {exc}") from None
        header.append(f"field piecewise with {len(scenario.cells)} cells")
        ids = {c.id for c in scenario.cells}
        heads = decl.get("heads")
        if heads is not None:
            if not isinstance(heads, list) or not all(isinstance(h, str) for h in heads):
                raise ScenarioError("heads must be a list of cell ids")
            missing = sorted(set(heads) - ids)
            if missing:
                raise ScenarioValidationError(
                    "heads name unknown cells: " + ", ".join(missing)
                )
            scenario.heads = list(heads)
        seeds = decl.get("seeds")
        if seeds is not None:
            if not isinstance(seeds, dict):
                raise ScenarioError("seeds must be an object of cell id -> value")
            missing = sorted(set(seeds) - ids)
            if missing:
                raise ScenarioValidationError(
                    "seeds name unknown cells: " + ", ".join(missing)
                )
            scenario.seeds = {
                cid: _as_fraction(v, f"seeds[{cid}]") for cid, v in seeds.items()
            }
            for cid, v in scenario.seeds.items():
                if v <= 0:
                    raise ScenarioValidationError(f"seeds[{cid}] must be positive")

    dimension = scenario.field.dimension if scenario.field is not None else 2
    scenario.box, raw_lo, raw_hi = _parse_box(raw.get("box"), dimension)
    if kind == "fan":
        widths = {_as_fraction(v, "box") for v in raw_hi}
        widths |= {-_as_fraction(v, "box") for v in raw_lo}
        if len(widths) != 1 or next(iter(widths)) <= 0:
            raise ScenarioValidationError(
                "fan scenarios need a square box centered at the origin"
            )
        scenario.halfwidth = next(iter(widths))
    header.append(
        "box "
        + " x ".join(
            f"[{_fmt_tol(l)}, {_fmt_tol(h)}]"
            for l, h in zip(scenario.box.lo, scenario.box.hi)
        )
    )
    header.append(
        f"profile {tolerances.profile}"
        f" tol_ode {_fmt_tol(tolerances.tol_ode)}"
        f" tol_root {_fmt_tol(tolerances.tol_root)}"
        f" tol_weak {_fmt_tol(tolerances.tol_weak)}"
        f" eps_tangential {_fmt_tol(tolerances.eps_tangential)}"
    )

    grid = raw.get("grid")
    if grid is not None:
        if (
            not isinstance(grid, list)
            or len(grid) != dimension
            or not all(isinstance(n, int) and n >= 2 for n in grid)
        ):
            raise ScenarioError(
                f"grid must be a list of {dimension} integers, each at least 2"
            )
        scenario.grid = tuple(grid)

    tasks_raw = raw.get("tasks", [])
    if not isinstance(tasks_raw, list):
        raise ScenarioError("tasks must be a list")
    allowed = _TASKS_BY_KIND[kind]
    tasks = []
    seen_reconstruct = False
    for i, task in enumerate(tasks_raw):
        if not isinstance(task, dict):
            raise ScenarioError(f"tasks[{i}] must be an object")
        tkind = _need(task, "kind", str, f"tasks[{i}]")
        if tkind not in allowed:
            raise ScenarioValidationError(
                f"tasks[{i}]: task {tkind!r} does not apply to a {kind} field"
                + (
                    ""
                    if tkind in ("reconstruct", "verify", "admissible", "build",
                                 "trace", "export")
                    else "; no such task kind"
                )
            )
        if tkind == "reconstruct":
            shape = task.get("grid", scenario.grid)
            if shape is None:
                raise ScenarioValidationError(
                    f"tasks[{i}]: reconstruct needs a grid (task or scenario level)"
                )
            if not isinstance(shape, (list, tuple)) or len(shape) != dimension or not all(
                isinstance(n, int) and n >= 2 for n in shape
            ):
                raise ScenarioError(
                    f"tasks[{i}].grid must be a list of {dimension} integers >= 2"
                )
            seen_reconstruct = True
        elif tkind == "verify":
            bumps = task.get("bumps", 16)
            if not isinstance(bumps, int) or bumps < 1:
                raise ScenarioError(f"tasks[{i}].bumps must be a positive integer")
            per_axis = round(bumps ** (1.0 / dimension))
            if per_axis**dimension != bumps:
                raise ScenarioValidationError(
                    f"tasks[{i}]: {bumps} bumps do not form a grid in "
                    f"dimension {dimension}; use a {dimension}-th power"
                )
            order = task.get("order", 24)
            if not isinstance(order, int) or order < 2:
                raise ScenarioError(f"tasks[{i}].order must be an integer >= 2")
        elif tkind == "trace":
            point = _need(task, "point", list, f"tasks[{i}]")
            if len(point) != dimension or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in point
            ):
                raise ScenarioError(
                    f"tasks[{i}].point must be a list of {dimension} numbers"
                )
            tmax = _need(task, "tmax", (int, float), f"tasks[{i}]")
            if tmax == 0:
                raise ScenarioValidationError(f"tasks[{i}].tmax must be nonzero")
        elif tkind == "export":
            _need(task, "path", str, f"tasks[{i}]")
            if not seen_reconstruct:
                raise ScenarioValidationError(
                    f"tasks[{i}]: export needs a reconstruct task before it"
                )
        tasks.append(dict(task))
    scenario.tasks = tuple(tasks)
    scenario.header = tuple(header)
    return scenario


@dataclass(frozen=True)
class RunResult:
    exit_code: int
    summary: str
    summary_path: str
    failure: str = None


def _flow_setup(scenario):
    box = scenario.box
    flow_box = box.inflate(2.0 * float(np.max(box.widths)))
    m = certify(scenario.field, flow_box).m
    return flow_box, m


def _task_reconstruct(scenario, task, ctx, out_dir, threads):
    shape = tuple(task.get("grid", scenario.grid))
    tol = scenario.tolerances
    sampled, report = reconstruct_on_grid(
        scenario.field,
        scenario.box,
        shape,
        rtol=tol.tol_ode,
        tol_root=tol.tol_root,
        threads=threads,
    )
    ctx["sampled"] = sampled
    detail = (
        f"grid {'x'.join(str(s) for s in shape)} nodes {report.n_points} "
        f"holes {report.n_holes} sigma in [{_fmt(report.sigma_min)}, "
        f"{_fmt(report.sigma_max)}] gradient bound {_fmt(report.m)}"
    )
    return [detail]


def _build_for_verify(scenario, ctx):
    tol = scenario.tolerances
    if scenario.kind in ("expression", "mollified"):
        flow_box, m = _flow_setup(scenario)
        return FlowConductivity(
            scenario.field, flow_box, m, rtol=tol.tol_ode, tol_root=tol.tol_root
        )
    if scenario.kind == "separated":
        if "sigma_field" not in ctx:
            ctx["sigma_field"] = SeparatedConductivity(scenario.field, rtol=tol.tol_ode)
        return ctx["sigma_field"]
    if scenario.kind == "fan":
        if "sigma_field" not in ctx:
            split = ctx.get("split") or split_fan(scenario.fan)
            ctx["split"] = split
            ctx["sigma_field"] = fan_conductivity(split, halfwidth=scenario.halfwidth)
        return ctx["sigma_field"]
    if "sigma_field" not in ctx:
        plan = ctx.get("plan")
        if plan is None:
            plan = check_admissible(
                scenario.cells,
                scenario.faces,
                heads=scenario.heads,
                eps_tangential=scenario.tolerances.eps_tangential,
            )
            ctx["plan"] = plan
        sigma_field, report = build_piecewise_sigma(
            plan, seeds=scenario.seeds, rtol=tol.tol_ode
        )
        ctx["sigma_field"] = sigma_field
        ctx["build_report"] = report
    return ctx["sigma_field"]


def _task_verify(scenario, task, ctx, out_dir, threads):
    tol = scenario.tolerances
    bumps = task.get("bumps", 16)
    order = task.get("order", 24)
    dimension = scenario.box.dimension
    per_axis = round(bumps ** (1.0 / dimension))
    tests = default_bump_set(scenario.box, per_axis=per_axis, order=order)
    sigma = _build_for_verify(scenario, ctx)
    report = weak_residual(sigma, scenario.field, tests)
    lines = [
        f"bumps {len(tests.bumps)} order {order} "
        f"max normalized {_fmt(report.max_normalized)} "
        f"mean {_fmt(report.mean_normalized)} gate {_fmt_tol(tol.tol_weak)}"
    ]
    for warning in report.warnings:
        lines.append(f"  {warning}")
    if report.max_normalized > tol.tol_weak:
        raise CondflowError(
            f"max normalized residual {_fmt(report.max_normalized)} exceeds "
            f"the weak gate {_fmt_tol(tol.tol_weak)}"
        )
    return lines


def _task_admissible(scenario, task, ctx, out_dir, threads):
    if scenario.kind == "separated":
        potential = scenario.field
        SeparatedConductivity(potential)  # raises NotRealizableError if not
        return [
            f"realizable: one-sided slopes {_fmt(potential.g_prime_0)} above, "
            f"{_fmt(potential.h_prime_0)} below, interface flux "
            f"{_fmt(potential.interface_flux())}"
        ]
    if scenario.kind == "fan":
        fan = scenario.fan
        holds, lhs, rhs = loop_constraint_holds(fan)
        verdict = "holds" if holds else "fails"
        lines = [f"loop constraint {verdict}: lhs {lhs} rhs {rhs}"]
        split = split_fan(fan)
        ctx["split"] = split
        dx, dy = split.direction
        lines.append(f"split cone {split.index} along ({dx}, {dy})")
        sigma = fan_sigma_closed_form(split)
        ctx["fan_sigma"] = sigma
        lines.append(f"admissible: {len(sigma.labels)} cones carry a positive sigma")
        return lines
    plan = check_admissible(
        scenario.cells,
        scenario.faces,
        heads=scenario.heads,
        eps_tangential=scenario.tolerances.eps_tangential,
    )
    if isinstance(plan, ViolationReport):
        raise CondflowError(f"not admissible:\n{plan}")
    ctx["plan"] = plan
    return plan.describe().splitlines()


def _task_build(scenario, task, ctx, out_dir, threads):
    tol = scenario.tolerances
    if scenario.kind == "separated":
        sigma = SeparatedConductivity(scenario.field, rtol=tol.tol_ode)
        ctx["sigma_field"] = sigma
        w = float(np.min(scenario.box.widths)) / 4.0
        probe_lo = np.zeros(scenario.field.dimension)
        probe_hi = np.zeros(scenario.field.dimension)
        probe_lo[0] = -w
        probe_hi[0] = w
        values = sigma.sigma_many(np.vstack([probe_lo, probe_hi]))
        return [
            f"interface flux {_fmt(scenario.field.interface_flux())} "
            f"sigma({_fmt(-w)}) {_fmt(values[0])} sigma({_fmt(w)}) {_fmt(values[1])}"
        ]
    if scenario.kind == "fan":
        split = ctx.get("split") or split_fan(scenario.fan)
        ctx["split"] = split
        sigma = ctx.get("fan_sigma") or fan_sigma_closed_form(split)
        ctx["fan_sigma"] = sigma
        oracle = fan_propagation_oracle(split, halfwidth=scenario.halfwidth)
        if any(oracle[label] != value for label, value in zip(sigma.labels, sigma.values)):
            raise CondflowError(
                "closed-form and chain-propagated conductivities disagree: "
                + ", ".join(
                    f"{label} {value} vs {oracle[label]}"
                    for label, value in zip(sigma.labels, sigma.values)
                )
            )
        ctx["sigma_field"] = fan_conductivity(split, halfwidth=scenario.halfwidth)
        return [
            "sigma per cone (chain order): "
            + ", ".join(f"{l} = {v}" for l, v in zip(sigma.labels, sigma.values)),
            "chain propagation over the cell decomposition agrees exactly",
        ]
    plan = ctx.get("plan")
    if plan is None:
        plan = check_admissible(
            scenario.cells,
            scenario.faces,
            heads=scenario.heads,
            eps_tangential=tol.eps_tangential,
        )
        ctx["plan"] = plan
    sigma_field, report = build_piecewise_sigma(
        plan, seeds=scenario.seeds, rtol=tol.tol_ode
    )
    ctx["sigma_field"] = sigma_field
    ctx["build_report"] = report
    lines = []
    for cid in sorted(report.sigma_ranges):
        lo, hi = report.sigma_ranges[cid]
        if lo == hi:
            lines.append(f"cell {cid}: sigma {_fmt(lo)}")
        else:
            lines.append(f"cell {cid}: sigma in [{_fmt(lo)}, {_fmt(hi)}]")
    lines.append(
        f"max flux mismatch across crossed faces {_fmt(report.max_flux_normalized)}"
    )
    if report.max_flux_normalized > _FLUX_GATE:
        raise CondflowError(
            f"flux continuity violated: normalized mismatch "
            f"{_fmt(report.max_flux_normalized)} exceeds {_fmt_tol(_FLUX_GATE)}"
        )
    return lines


def _task_trace(scenario, task, ctx, out_dir, threads):
    tol = scenario.tolerances
    point = np.asarray(task["point"], dtype=float)
    tmax = float(task["tmax"])
    samples = task.get("samples", 32)
    path = task.get("path", "trace.txt")
    traj = integrate_flow(scenario.field, point, tmax, scenario.box, rtol=tol.tol_ode)
    times = np.linspace(0.0, tmax, int(samples) + 1)
    rows = np.empty((len(times), scenario.field.dimension + 3))
    for i, t in enumerate(times):
        state = traj.state(t)
        x = state[: scenario.field.dimension]
        rows[i, 0] = t
        rows[i, 1:-2] = x
        rows[i, -2] = scenario.field.value(x)
        rows[i, -1] = state[scenario.field.dimension]
    target = Path(out_dir) / path
    cols = ["t"] + [f"x{i + 1}" for i in range(scenario.field.dimension)]
    cols += ["u", "integral"]
    with open(target, "w") as fh:
        fh.write("# condflow trace\n")
        fh.write("# columns " + " ".join(cols) + "\n")
        for row in rows:
            fh.write(" ".join("%.17g" % v for v in row) + "\n")
    return [
        f"point ({', '.join(_fmt(v) for v in point)}) tmax {_fmt(tmax)} "
        f"final u {_fmt(rows[-1, -2])} integral {_fmt(rows[-1, -1])} -> {path}"
    ]


def _task_export(scenario, task, ctx, out_dir, threads):
    sampled = ctx.get("sampled")
    if sampled is None:
        raise CondflowError("export found no reconstructed grid in this run")
    path = task["path"]
    export_sigma_table(Path(out_dir) / path, sampled, scenario.field)
    return [f"wrote {path} ({sampled.values.size} rows)"]


_TASK_RUNNERS = {
    "reconstruct": _task_reconstruct,
    "verify": _task_verify,
    "admissible": _task_admissible,
    "build": _task_build,
    "trace": _task_trace,
    "export": _task_export,
}


def run_scenario(scenario: Scenario, out_dir=".", threads: int = 1) -> RunResult:
    """Execute the scenario's tasks in order and write the summary file.

    Stops at the first failing task. The summary is deterministic: identical
    scenario files and profiles produce byte-identical summaries.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"scenario {scenario.name}"]
    lines.extend(scenario.header)
    ctx = {}
    failure = None
    for index, task in enumerate(scenario.tasks, start=1):
        kind = task["kind"]
        try:
            detail = _TASK_RUNNERS[kind](scenario, task, ctx, out_dir, threads)
            lines.append(f"task {index} {kind}: {detail[0]}")
            lines.extend(f"  {extra}" for extra in detail[1:])
        except CondflowError as exc:
            failure = f"task {index} {kind}: {exc}"
            first, *rest = str(exc).splitlines() or [""]
            lines.append(f"task {index} {kind} failed: {first}")
            lines.extend(f"  {extra}" for extra in rest)
            break
    lines.append("result ok" if failure is None else "result failed")
    summary = "\n".join(lines) + "\n"
    summary_path = out_dir / f"{scenario.name}.summary.txt"
    summary_path.write_text(summary)
    return RunResult(
        exit_code=0 if failure is None else 1,
        summary=summary,
        summary_path=str(summary_path),
        failure=failure,
    )


def trace_once(scenario: Scenario, point, tmax, samples=32, path="trace.txt",
               out_dir=".") -> RunResult:
    """Run a single trace task built from explicit arguments."""
    point = list(point)
    if len(point) != scenario.field.dimension:
        raise ScenarioValidationError(
            f"trace point must have {scenario.field.dimension} coordinates"
        )
    if scenario.kind not in ("expression", "mollified"):
        raise ScenarioValidationError(
            f"trace applies to expression and mollified fields, not {scenario.kind}"
        )
    task = {
        "kind": "trace",
        "point": point,
        "tmax": float(tmax),
        "samples": int(samples),
        "path": path,
    }
    single = Scenario(
        name=scenario.name,
        kind=scenario.kind,
        box=scenario.box,
        tolerances=scenario.tolerances,
        tasks=(task,),
        grid=scenario.grid,
        field=scenario.field,
        fan=scenario.fan,
        halfwidth=scenario.halfwidth,
        cells=scenario.cells,
        faces=scenario.faces,
        heads=scenario.heads,
        seeds=scenario.seeds,
        header=scenario.header,
    )
    return run_scenario(single, out_dir=out_dir)

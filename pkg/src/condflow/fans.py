"""Cone fans in the plane and separated-variable potentials.

A cone fan is a circular arrangement of rays (spokes) from the origin with a
constant potential gradient on each cone between consecutive spokes. The
potential is continuous exactly when each gradient jump is orthogonal to its
spoke; whether a positive piecewise-constant conductivity exists is then a
matter of determinant signs. All fan arithmetic runs over Fractions, so every
decision here is exact: valid or violated, never "within tolerance".

The second half of the module treats potentials of the form g(x1) + f(rest)
for x1 > 0 and h(x1) + f(rest) for x1 < 0, where the conductivity has a
closed form built from a primitive of 1/g' and the flow of f in the remaining
variables.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.integrate import quad

from . import expressions
from .errors import (
    EvaluationDomainError,
    FacePointError,
    FanStructureError,
    NotRealizableError,
)
from .fields import AffinePotential, ExpressionField, PotentialField
from .flow import integrate_flow
from .geometry import Box
from .piecewise import (
    Cell,
    ConstantCellSigma,
    PiecewiseConductivity,
    build_faces_auto,
    build_piecewise_sigma,
    check_admissible,
)
from .reconstruct import ConductivityField

__all__ = [
    "ConeFan",
    "FanViolation",
    "validate_fan",
    "FanPotential",
    "loop_constraint_holds",
    "SplitFan",
    "split_fan",
    "FanSigma",
    "fan_sigma_closed_form",
    "fan_to_cells",
    "fan_propagation_oracle",
    "fan_conductivity",
    "SeparatedPotential",
    "separated_sigma",
    "SeparatedConductivity",
]


def _eval_at(tree, t: float) -> float:
    """Evaluate a one-variable expression tree at a scalar point."""
    out = np.asarray(tree.evaluate(np.array([[float(t)]], dtype=float)))
    return float(out.reshape(-1)[0]) if out.ndim else float(out)


def _frac_vec(v):
    return tuple(Fraction(c) for c in v)


def _det(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1]


@dataclass(frozen=True)
class FanViolation:
    kind: str
    index: int
    detail: str

    def __str__(self):
        return f"[{self.kind}] spoke {self.index}: {self.detail}"


class ConeFan:
    """Spokes and per-cone gradients, all held as exact Fractions.

    Cone k (1-based) lies between spoke k and spoke k+1, circularly; its
    gradient is gradients[k-1]. Inputs may be ints, Fractions, or decimal
    strings; floats are converted exactly.
    """

    def __init__(self, spokes, gradients):
        self.spokes = tuple(_frac_vec(s) for s in spokes)
        self.gradients = tuple(_frac_vec(g) for g in gradients)
        if len(self.spokes) != len(self.gradients):
            raise FanStructureError(
                f"{len(self.spokes)} spokes but {len(self.gradients)} gradients; "
                "each cone between consecutive spokes needs exactly one gradient"
            )
        if len(self.spokes) < 2:
            raise FanStructureError("a fan needs at least 2 spokes")

    @property
    def n(self) -> int:
        return len(self.spokes)

    def spoke(self, k: int):
        """1-based circular spoke access."""
        return self.spokes[(k - 1) % self.n]

    def gradient(self, k: int):
        """1-based circular cone-gradient access."""
        return self.gradients[(k - 1) % self.n]

    def __repr__(self):
        return f"ConeFan(n={self.n})"


def _strictly_inside(v, start, end) -> bool:
    """Is v strictly inside the cone from `start` counterclockwise to `end`?

    For a proper convex cone both determinant tests must be positive; for a
    half-plane cone (antipodal bounding rays) the two tests coincide and the
    formula still reads correctly.
    """
    return _det(start, v) > 0 and _det(v, end) > 0


def validate_fan(fan: ConeFan) -> list:
    """All structural violations of the fan, empty when it is valid.

    Checks, exactly: spokes nonzero and counterclockwise with no duplicate
    directions and no spoke inside another cone (each cone convex, the two-
    spoke case allowed as a pair of half-planes); gradients nonzero; the jump
    of the gradient across each spoke orthogonal to that spoke (continuity of
    the potential); and no zero jump (the spoke would not be a real interface).
    """
    out = []
    n = fan.n
    for k in range(1, n + 1):
        if fan.spoke(k) == (0, 0):
            out.append(FanViolation("zero-spoke", k, "spoke vector is zero"))
        if fan.gradient(k) == (0, 0):
            out.append(
                FanViolation("zero-gradient", k, f"gradient on cone {k} is zero")
            )
    if any(v.kind == "zero-spoke" for v in out):
        return out

    for k in range(1, n + 1):
        a, b = fan.spoke(k), fan.spoke(k + 1)
        d = _det(a, b)
        if d < 0:
            out.append(
                FanViolation(
                    "orientation",
                    k,
                    f"spokes {k} and {k % n + 1} turn clockwise "
                    f"(det {d} < 0); spokes must be in counterclockwise order",
                )
            )
        elif d == 0:
            if _dot(a, b) > 0:
                out.append(
                    FanViolation(
                        "duplicate-spoke",
                        k,
                        f"spokes {k} and {k % n + 1} point the same way",
                    )
                )
            elif n != 2:
                out.append(
                    FanViolation(
                        "degenerate-cone",
                        k,
                        f"cone {k} spans a straight angle; opposite spokes are "
                        "only allowed in a two-spoke fan",
                    )
                )
    for k in range(1, n + 1):
        start, end = fan.spoke(k), fan.spoke(k + 1)
        for j in range(1, n + 1):
            if j == k or j == k % n + 1:
                continue
            if _strictly_inside(fan.spoke(j), start, end):
                out.append(
                    FanViolation(
                        "spoke-in-cone",
                        j,
                        f"spoke {j} lies strictly inside cone {k}; cones must "
                        "tile the plane without overlap",
                    )
                )

    for k in range(1, n + 1):
        jump = tuple(a - b for a, b in zip(fan.gradient(k), fan.gradient(k - 1)))
        if jump == (0, 0):
            out.append(
                FanViolation(
                    "degenerate-jump",
                    k,
                    f"gradients on the cones either side of spoke {k} are equal; "
                    "the spoke is not a real interface",
                )
            )
            continue
        c = _dot(jump, fan.spoke(k))
        if c != 0:
            out.append(
                FanViolation(
                    "discontinuity",
                    k,
                    f"gradient jump across spoke {k} has tangential component "
                    f"{c}; the potential would be discontinuous there",
                )
            )
    return out


def _require_valid(fan: ConeFan):
    violations = validate_fan(fan)
    if violations:
        msgs = "; ".join(str(v) for v in violations)
        raise FanStructureError(f"fan is not valid: {msgs}")


def loop_constraint_holds(fan: ConeFan):
    """(holds, lhs, rhs) for the closure constraint around the full circle.

    lhs is the product over spokes of det(spoke k, gradient after), rhs the
    matching product with each spoke paired with the gradient before it.
    Equality is what lets a conductivity close up around the origin without a
    tangential split. Exact for Fraction inputs.
    """
    _require_valid(fan)
    n = fan.n
    lhs = Fraction(1)
    rhs = Fraction(1)
    for k in range(1, n + 1):
        lhs *= _det(fan.spoke(k), fan.gradient(k))
        rhs *= _det(fan.spoke(k), fan.gradient(k - 1))
    return lhs == rhs, lhs, rhs


class FanPotential(PotentialField):
    """Piecewise-linear potential of a fan: gradient(k) . x on cone k.

    Values are well defined everywhere by continuity; gradients are ambiguous
    on the spokes and at the origin, where gradient_many raises
    FacePointError. The Laplacian is zero inside every cone.
    """

    def __init__(self, fan: ConeFan):
        _require_valid(fan)
        self.fan = fan
        self.dimension = 2
        self._spokes = np.array([[float(c) for c in s] for s in fan.spokes])
        self._lams = np.array([[float(c) for c in g] for g in fan.gradients])
        norms = np.linalg.norm(self._spokes, axis=1)
        self._unit_spokes = self._spokes / norms[:, None]

    def _cone_index(self, pts):
        # det(spoke_k, x) >= 0 and det(spoke_{k+1}, x) <= 0 picks cone k
        d = self._spokes[None, :, 0] * pts[:, None, 1] - self._spokes[None, :, 1] * pts[:, None, 0]
        d_next = np.roll(d, -1, axis=1)
        scale = 1.0 + np.abs(pts).max(axis=1, keepdims=True)
        tol = 1e-14 * scale
        inside = (d >= -tol) & (d_next <= tol)
        idx = np.argmax(inside, axis=1)
        return idx

    def value_many(self, points):
        pts = np.asarray(points, dtype=float)
        idx = self._cone_index(pts)
        return np.sum(self._lams[idx] * pts, axis=1)

    def _check_off_spokes(self, pts):
        for i, p in enumerate(pts):
            r = float(np.hypot(p[0], p[1]))
            eps = 1e-12 * (1.0 + r)
            if r <= eps:
                raise FacePointError(
                    "gradient requested at the origin where all cones meet",
                    index=0,
                )
            for k, s in enumerate(self._unit_spokes):
                if abs(s[0] * p[1] - s[1] * p[0]) <= eps and s @ p > 0:
                    raise FacePointError(
                        f"gradient requested on spoke {k + 1} where it jumps",
                        index=k + 1,
                    )

    def gradient_many(self, points):
        pts = np.asarray(points, dtype=float)
        self._check_off_spokes(pts)
        idx = self._cone_index(pts)
        return self._lams[idx].copy()

    def laplacian_many(self, points):
        pts = np.asarray(points, dtype=float)
        return np.zeros(len(pts))


@dataclass(frozen=True)
class SplitFan:
    """A valid fan plus the tangential split of one cone.

    Cone `index` is divided along `direction` (parallel to that cone's
    gradient) into sub-cone (index, 1) from spoke(index) to the split ray and
    sub-cone (index, 2) from the split ray to spoke(index + 1). The normal
    derivative across the split ray is exactly zero, so the conductivity may
    jump there freely.
    """

    fan: ConeFan
    index: int
    direction: tuple

    def sub_labels(self):
        return (f"{self.index}.1", f"{self.index}.2")

    def chain_labels(self):
        """Cone labels in construction order, starting at sub-cone (index, 2)."""
        n = self.fan.n
        labels = [f"{self.index}.2"]
        k = self.index % n + 1
        while k != self.index:
            labels.append(str(k))
            k = k % n + 1
        labels.append(f"{self.index}.1")
        return labels


def split_fan(fan: ConeFan) -> SplitFan:
    """Find a cone whose own gradient direction passes through its interior.

    Scans cones in index order testing +gradient first, then again testing
    -gradient, and splits at the first hit; along that ray the normal
    derivative vanishes identically, which is what makes the split legal.
    Raises FanStructureError when no cone admits such a direction; such fans
    are only realizable when the loop constraint holds.
    """
    _require_valid(fan)
    n = fan.n
    for sign in (1, -1):
        for k in range(1, n + 1):
            cand = tuple(sign * c for c in fan.gradient(k))
            if _strictly_inside(cand, fan.spoke(k), fan.spoke(k + 1)):
                return SplitFan(fan=fan, index=k, direction=cand)
    raise FanStructureError(
        "no split available: no cone's gradient direction lies inside the "
        "cone itself; this fan is realizable only if the loop constraint holds"
    )


@dataclass(frozen=True)
class FanSigma:
    """Per-cone conductivity constants of a split fan, in chain order."""

    split: SplitFan
    labels: tuple
    values: tuple

    @property
    def by_label(self) -> dict:
        return dict(zip(self.labels, self.values))

    def sub_cone_values(self):
        one, two = self.split.sub_labels()
        m = self.by_label
        return m[one], m[two]


def _admissibility_gate(fan: ConeFan):
    """Check det(spoke, grad after) * det(spoke, grad before) > 0 at each spoke."""
    for k in range(1, fan.n + 1):
        after = _det(fan.spoke(k), fan.gradient(k))
        before = _det(fan.spoke(k), fan.gradient(k - 1))
        product = after * before
        if product <= 0:
            raise FanStructureError(
                "sign condition det(spoke, grad after) * det(spoke, grad "
                f"before) > 0 fails at spoke {k}, product {product}"
            )


def fan_sigma_closed_form(split: SplitFan, seed=Fraction(1)) -> FanSigma:
    """Piecewise-constant conductivity of a split fan, exactly.

    Seeds sub-cone (index, 2) and multiplies by
    det(spoke, grad before) / det(spoke, grad after) at every spoke crossed
    on the way around to sub-cone (index, 1). Positivity of every value is
    equivalent to the per-spoke sign condition, which is checked first.
    """
    fan = split.fan
    _require_valid(fan)
    _admissibility_gate(fan)
    seed = Fraction(seed)
    if seed <= 0:
        raise ValueError(f"seed must be positive, got {seed}")
    labels = tuple(split.chain_labels())
    values = [seed]
    n = fan.n
    k = split.index % n + 1
    current = seed
    for _ in range(n):
        before = _det(fan.spoke(k), fan.gradient(k - 1))
        after = _det(fan.spoke(k), fan.gradient(k))
        current *= Fraction(before, after)
        values.append(current)
        k = k % n + 1
    return FanSigma(split=split, labels=labels, values=tuple(values))


# -- cells from fans, and the propagation oracle ----------------------------


def _ray_box_hit(direction, halfwidth: Fraction):
    """Exact point where the ray from the origin leaves the square box."""
    w = Fraction(halfwidth)
    m = max(abs(direction[0]), abs(direction[1]))
    t = w / m
    return (t * direction[0], t * direction[1])


_BOX_CORNERS = ((1, 1), (-1, 1), (-1, -1), (1, -1))


def _corners_between(start_hit, end_hit, halfwidth):
    """Box corners strictly between two boundary hits, counterclockwise."""
    w = Fraction(halfwidth)
    corners = [(w * a, w * b) for a, b in _BOX_CORNERS]

    def angle_key(p):
        # counterclockwise order without trig: quadrant index plus a ratio
        # that grows monotonically with the angle inside that quadrant
        x, y = p
        if x > 0 and y >= 0:
            return (0, Fraction(y, x))
        if x <= 0 and y > 0:
            return (1, -Fraction(x, y))
        if x < 0 and y <= 0:
            return (2, Fraction(y, x))
        return (3, -Fraction(x, y))

    out = []
    cand = sorted(corners, key=angle_key)
    ks, ke = angle_key(start_hit), angle_key(end_hit)
    for c in cand:
        kc = angle_key(c)
        if ks < ke:
            if ks < kc < ke:
                out.append(c)
        else:
            if kc > ks or kc < ke:
                out.append(c)
    return out


def fan_to_cells(split_or_fan, halfwidth=1) -> list:
    """Cells of a (split) fan clipped to the square box of given halfwidth.

    Each cone becomes a convex polygon: origin, the point where its first
    spoke leaves the box, any box corners inside the cone, and the exit point
    of its second spoke. All coordinates stay Fractions, so the shared spoke
    edges match exactly and the piecewise machinery can run in rational
    arithmetic. Cell ids are "cone<label>"; the potential on each cell is the
    cone's affine gradient.
    """
    if isinstance(split_or_fan, SplitFan):
        split = split_or_fan
        fan = split.fan
        n = fan.n
        pieces = []
        for k in range(1, n + 1):
            if k == split.index:
                pieces.append((f"{k}.1", fan.spoke(k), split.direction, fan.gradient(k)))
                pieces.append((f"{k}.2", split.direction, fan.spoke(k + 1), fan.gradient(k)))
            else:
                pieces.append((str(k), fan.spoke(k), fan.spoke(k + 1), fan.gradient(k)))
    else:
        fan = split_or_fan
        _require_valid(fan)
        n = fan.n
        pieces = [
            (str(k), fan.spoke(k), fan.spoke(k + 1), fan.gradient(k))
            for k in range(1, n + 1)
        ]

    w = Fraction(halfwidth)
    cells = []
    for label, start, end, lam in pieces:
        p0 = _ray_box_hit(start, w)
        p1 = _ray_box_hit(end, w)
        verts = [(Fraction(0), Fraction(0)), p0]
        verts += _corners_between(p0, p1, w)
        verts.append(p1)
        cells.append(Cell(f"cone{label}", verts, AffinePotential(lam)))
    return cells


def fan_propagation_oracle(split: SplitFan, seed=Fraction(1), halfwidth=1) -> dict:
    """Per-cone conductivity via the generic piecewise machinery.

    Builds actual cells for the split fan, classifies faces, plans chains
    from the seeded sub-cone, and runs flux matching cell by cell; entirely
    independent of the closed-form cumulative product, which it must match
    exactly. Returns {label: Fraction}.
    """
    fan = split.fan
    _admissibility_gate(fan)
    cells = fan_to_cells(split, halfwidth=halfwidth)
    head_id = f"cone{split.index}.2"
    plan = check_admissible(cells, heads=[head_id])
    if not hasattr(plan, "chains"):
        raise FanStructureError(f"fan cells failed admissibility:\n{plan}")
    field, _report = build_piecewise_sigma(plan, seeds={head_id: Fraction(seed)})
    out = {}
    for label_cell in cells:
        label = label_cell.id[len("cone"):]
        out[label] = field.cell_sigma(label_cell.id).constant_value
    return out


def fan_conductivity(split: SplitFan, halfwidth=1, seed=Fraction(1)):
    """The closed-form fan conductivity as a piecewise field on clipped cells."""
    sigma = fan_sigma_closed_form(split, seed=seed)
    cells = fan_to_cells(split, halfwidth=halfwidth)
    values = sigma.by_label
    sigmas = {
        cell.id: ConstantCellSigma(cell, values[cell.id[len("cone"):]])
        for cell in cells
    }
    return PiecewiseConductivity(cells, sigmas)


# -- separated variables: g(x1) + f(rest) / h(x1) + f(rest) ------------------


class _ReciprocalPrimitive:
    """Primitive of 1 / p vanishing at 0, for a one-variable expression p.

    Three shapes are recognized from the derivative tree after constant
    folding and integrated in closed form: constant, affine, and even
    quadratic a + b t^2 with a b > 0 (the arctangent case). Anything else
    falls back to adaptive quadrature at tolerance 1e-11 per call.
    """

    def __init__(self, p_tree, label: str):
        self.label = label
        self._tree = p_tree
        d1 = p_tree.diff(0)
        d2 = d1.diff(0)
        self._eval = lambda t: _eval_at(p_tree, t)
        p0 = self._eval(0.0)
        if isinstance(p_tree, expressions.Num):
            c = p_tree.value
            self.kind = "constant"
            self._fn = lambda t: t / c
        elif isinstance(d1, expressions.Num) and d1.value != 0.0:
            a, b = p0, d1.value
            self.kind = "log-affine"

            def primitive(t, a=a, b=b):
                arg = (a + b * t) / a
                if arg <= 0:
                    raise EvaluationDomainError(
                        f"1/{label}' has a pole between 0 and {t:.6g}; "
                        "the primitive is undefined there"
                    )
                return float(np.log(arg) / b)

            self._fn = primitive
        elif (
            isinstance(d2, expressions.Num)
            and d2.value != 0.0
            and _eval_at(d1, 0.0) == 0.0
            and p0 * d2.value > 0
        ):
            a, b = p0, d2.value / 2.0
            root = float(np.sqrt(a * b))
            self.kind = "arctan"
            self._fn = lambda t: float(np.arctan(t * np.sqrt(b / a)) / root)
        else:
            self.kind = "numeric"

            def primitive(t):
                val, err = quad(
                    lambda s: 1.0 / self._eval(s), 0.0, float(t),
                    epsabs=1e-11, epsrel=1e-11,
                )
                if not np.isfinite(val):
                    raise EvaluationDomainError(
                        f"primitive of 1/{label}' diverges on [0, {t:.6g}]"
                    )
                return float(val)

            self._fn = primitive

    def __call__(self, t: float) -> float:
        return self._fn(float(t))


class SeparatedPotential(PotentialField):
    """Potential g(x1) + f(x2..xd) above the interface, h(x1) + f below.

    g and h are expressions in x1 with g(0) = h(0); f is an expression in the
    remaining variables (constant zero when omitted or when dimension is 1).
    The gradient jumps across {x1 = 0} whenever g'(0) differs from h'(0), so
    gradient and Laplacian queries on the interface raise FacePointError.
    """

    def __init__(self, g_source: str, h_source: str, f_source=None, dimension: int = 2):
        self.dimension = int(dimension)
        if self.dimension < 1:
            raise ValueError("dimension must be at least 1")
        one = ("x1",)
        self.g = ExpressionField(g_source, 1, names=one)
        self.h = ExpressionField(h_source, 1, names=one)
        rest = tuple(f"x{i}" for i in range(2, self.dimension + 1))
        if f_source is None or not rest:
            f_source = "0" if not rest else "0*" + rest[0]
        self.f = ExpressionField(f_source, max(len(rest), 1), names=rest or ("x2",))
        self._g_prime = self.g.tree.diff(0)
        self._h_prime = self.h.tree.diff(0)
        g0 = _eval_at(self.g.tree, 0.0)
        h0 = _eval_at(self.h.tree, 0.0)
        if abs(g0 - h0) > 1e-12 * (1.0 + abs(g0) + abs(h0)):
            raise ValueError(
                f"the two sides disagree at the interface: g(0) = {g0!r}, "
                f"h(0) = {h0!r}"
            )
        self.g_prime_0 = _eval_at(self._g_prime, 0.0)
        self.h_prime_0 = _eval_at(self._h_prime, 0.0)
        self.G = _ReciprocalPrimitive(self._g_prime, "g")
        self.H = _ReciprocalPrimitive(self._h_prime, "h")

    @property
    def realizable(self) -> bool:
        return self.g_prime_0 * self.h_prime_0 > 0

    def interface_flux(self) -> float:
        """The common flux sigma * du/dx1 carried across {x1 = 0}."""
        return self.h_prime_0

    def _split(self, pts):
        x1 = pts[:, 0]
        rest = pts[:, 1:] if self.dimension > 1 else np.zeros((len(pts), 1))
        return x1, rest

    def value_many(self, points):
        pts = np.asarray(points, dtype=float)
        x1, rest = self._split(pts)
        t = x1[:, None]
        upper = np.asarray(self.g.tree.evaluate(t), float).reshape(-1)
        lower = np.asarray(self.h.tree.evaluate(t), float).reshape(-1)
        f_vals = self.f.value_many(rest) if self.dimension > 1 else np.zeros(len(pts))
        return np.where(x1 >= 0.0, upper, lower) + f_vals

    def _check_off_interface(self, x1, pts):
        eps = 1e-12 * (1.0 + np.abs(pts).max(axis=1))
        bad = np.abs(x1) <= eps
        if np.any(bad):
            i = int(np.argmax(bad))
            raise FacePointError(
                "derivative requested on the interface {x1 = 0} where the "
                "gradient jumps",
                index=i,
            )

    def gradient_many(self, points):
        pts = np.asarray(points, dtype=float)
        x1, rest = self._split(pts)
        self._check_off_interface(x1, pts)
        t = x1[:, None]
        gp = np.broadcast_to(
            np.asarray(self._g_prime.evaluate(t), float), (len(pts),)
        )
        hp = np.broadcast_to(
            np.asarray(self._h_prime.evaluate(t), float), (len(pts),)
        )
        first = np.where(x1 > 0.0, gp, hp)
        out = np.empty_like(pts)
        out[:, 0] = first
        if self.dimension > 1:
            out[:, 1:] = self.f.gradient_many(rest)
        return out

    def laplacian_many(self, points):
        pts = np.asarray(points, dtype=float)
        x1, rest = self._split(pts)
        self._check_off_interface(x1, pts)
        t = x1[:, None]
        gpp = np.broadcast_to(
            np.asarray(self._g_prime.diff(0).evaluate(t), float), (len(pts),)
        )
        hpp = np.broadcast_to(
            np.asarray(self._h_prime.diff(0).evaluate(t), float), (len(pts),)
        )
        out = np.where(x1 > 0.0, gpp, hpp).copy()
        if self.dimension > 1:
            out += self.f.laplacian_many(rest)
        return out


class SeparatedConductivity(ConductivityField):
    """Closed-form conductivity of a separated potential.

    Above the interface, sigma = h'(0) / g'(x1) times the exponential of the
    Laplacian of f accumulated along the flow of f for time -G(x1); below,
    the same with h and H. Normalized so sigma approaches 1 from below when
    f is absent. Raises NotRealizableError when g'(0) h'(0) <= 0: the fluxes
    the two sides would carry across the interface then have opposite signs
    and no positive conductivity can match them.
    """

    def __init__(self, potential: SeparatedPotential, flow_box: Box = None,
                 rtol: float = 1e-9):
        if not potential.realizable:
            raise NotRealizableError(
                "not realizable across the interface: g'(0) h'(0) = "
                f"{potential.g_prime_0 * potential.h_prime_0:.6g} <= 0, so the "
                "one-sided fluxes cannot be matched by a positive conductivity"
            )
        self.potential = potential
        self.rtol = rtol
        d = potential.dimension
        if flow_box is None and d > 1:
            flow_box = Box([-50.0] * (d - 1), [50.0] * (d - 1))
        self.flow_box = flow_box
        self._f_lap_const = potential.f.constant_laplacian() if d > 1 else 0.0
        self.dimension = d

    def sigma(self, x) -> float:
        return float(self.sigma_many(np.asarray(x, dtype=float)[None, :])[0])

    def _exponent(self, time: float, rest_point) -> float:
        if time == 0.0:
            return 0.0
        if self._f_lap_const is not None:
            return self._f_lap_const * time
        traj = integrate_flow(
            self.potential.f, np.asarray(rest_point, float), time,
            self.flow_box, rtol=self.rtol,
        )
        return traj.final_integral

    def sigma_many(self, points):
        pts = np.asarray(points, dtype=float)
        sp = self.potential
        out = np.empty(len(pts))
        for i, p in enumerate(pts):
            x1 = float(p[0])
            rest = p[1:] if self.dimension > 1 else np.zeros(1)
            if x1 >= 0.0:
                slope = _eval_at(sp._g_prime, x1)
                time = -sp.G(x1)
            else:
                slope = _eval_at(sp._h_prime, x1)
                time = -sp.H(x1)
            if slope == 0.0:
                raise EvaluationDomainError(
                    f"potential slope vanishes at x1 = {x1:.6g}; "
                    "the conductivity is unbounded there"
                )
            out[i] = sp.h_prime_0 / slope * np.exp(self._exponent(time, rest))
        return out

    def region_boxes(self, box: Box):
        """The two axis boxes either side of the interface, clipped to `box`."""
        lo, hi = box.lo.copy(), box.hi.copy()
        left_hi = hi.copy()
        left_hi[0] = min(0.0, hi[0])
        right_lo = lo.copy()
        right_lo[0] = max(0.0, lo[0])
        return Box(lo, left_hi), Box(right_lo, hi)

    def regions_on(self, box: Box):
        """Region-split evaluators for weak verification over `box` (2D)."""
        if self.dimension != 2:
            raise ValueError("region splitting is only provided in dimension 2")
        left, right = self.region_boxes(box)
        return [
            _SideRegion(self, left, self.potential._h_prime),
            _SideRegion(self, right, self.potential._g_prime),
        ]


class _SideRegion:
    """One side of the interface as a rectangle with one-sided evaluators."""

    def __init__(self, cond: SeparatedConductivity, region_box: Box, prime_tree):
        self.vertices = np.array(
            [
                [region_box.lo[0], region_box.lo[1]],
                [region_box.hi[0], region_box.lo[1]],
                [region_box.hi[0], region_box.hi[1]],
                [region_box.lo[0], region_box.hi[1]],
            ]
        )
        self._cond = cond
        self._prime = prime_tree

    def sigma_many(self, points):
        return self._cond.sigma_many(points)

    def grad_many(self, points):
        pts = np.asarray(points, dtype=float)
        out = np.empty_like(pts)
        out[:, 0] = np.broadcast_to(
            np.asarray(self._prime.evaluate(pts[:, :1]), float), (len(pts),)
        )
        out[:, 1:] = self._cond.potential.f.gradient_many(pts[:, 1:])
        return out


def separated_sigma(potential: SeparatedPotential, x, flow_box: Box = None) -> float:
    """Conductivity of a separated potential at one point."""
    cond = SeparatedConductivity(potential, flow_box=flow_box)
    return float(cond.sigma_many(np.asarray(x, float)[None, :])[0])

"""Piecewise conductivity on a decomposed domain.

A decomposition is a list of convex polygonal cells, each carrying its own
potential with a nonvanishing gradient. Faces between cells are classified by
the sign of the normal derivative; valid decompositions organize the cells
into chains hanging off designated head cells (hubs). The conductivity is
then built one cell at a time: seed a constant on a face of the head,
transport it through the cell along trajectories of dX/dt = grad u, and pass
to the next cell by matching the normal flux sigma * du/dnu across the shared
face.

Everything that can be decided in rational arithmetic is: when a cell's
potential is affine with Fraction coefficients and the face geometry is
rational, classification, flux ratios, and transported constants are computed
exactly, with no tolerance anywhere. Curved potentials fall back to Gauss
sampling on faces and an ODE integrator inside cells.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np
from scipy.integrate import solve_ivp

from .errors import EvaluationDomainError, HitTimeError, TopologyError
from .fields import PotentialField
from .geometry import convex_polygon_quadrature, polygon_area, segment_gauss
from .reconstruct import ConductivityField

__all__ = [
    "Cell",
    "Face",
    "Classification",
    "build_faces_auto",
    "classify_face",
    "check_admissible",
    "ChainPlan",
    "ViolationReport",
    "flux_match",
    "transport_boundary_value",
    "build_piecewise_sigma",
    "PiecewiseConductivity",
]

FACE_SAMPLES = 8
EPS_TANGENTIAL = 1e-10
_MATCH_DECIMALS = 12


def _is_exact(value) -> bool:
    return isinstance(value, (int, Fraction))


def _exact_dot(a, b):
    """Fraction dot product, or None when any entry is not exact."""
    if all(_is_exact(p) and _is_exact(q) for p, q in zip(a, b)):
        return sum(Fraction(p) * Fraction(q) for p, q in zip(a, b))
    return None


def _exact_normal_derivative(potential, normal):
    coeffs = getattr(potential, "exact_coefficients", None)
    if coeffs is None:
        return None
    return _exact_dot(normal, coeffs)


class Cell:
    """Convex polygonal cell with its own potential.

    Vertices are kept exactly as given (Fractions welcome) in counterclockwise
    order; a float view is derived for numerics. The potential must have a
    nonvanishing gradient on the closure; that is the caller's certificate,
    typically via fields.certify on a box around the cell.
    """

    def __init__(self, cell_id: str, vertices, potential: PotentialField):
        self.id = str(cell_id)
        verts = [tuple(v) for v in vertices]
        if len(verts) < 3:
            raise TopologyError(f"cell {self.id}: a polygon needs at least 3 vertices")
        floats = np.array([[float(c) for c in v] for v in verts])
        area = polygon_area(floats)
        if area < 0:
            verts = verts[::-1]
            floats = floats[::-1]
            area = -area
        scale = float(np.max(np.abs(floats))) + 1.0
        if area <= 1e-14 * scale**2:
            raise TopologyError(f"cell {self.id}: degenerate polygon (area {area:.3g})")
        self.vertices = tuple(verts)
        self.float_vertices = floats
        self.potential = potential

    def __repr__(self):
        return f"Cell({self.id!r}, {len(self.vertices)} vertices)"

    def contains(self, point, tol: float = 1e-12) -> bool:
        v = self.float_vertices
        p = np.asarray(point, dtype=float)
        scale = 1.0 + float(np.max(np.abs(v)))
        n = len(v)
        for i in range(n):
            a, b = v[i], v[(i + 1) % n]
            cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
            if cross < -tol * scale:
                return False
        return True

    def sample_points(self, order: int = 4) -> np.ndarray:
        pts, _ = convex_polygon_quadrature(self.float_vertices, order)
        return np.vstack([self.float_vertices, pts])


class Face:
    """Oriented facet between an owner cell and a neighbor (or the boundary).

    The normal is the unnormalized outward normal of the owner, computed from
    the endpoints in the owner's counterclockwise order, so rational endpoint
    coordinates give a rational normal.
    """

    def __init__(self, face_id: str, owner: Cell, neighbor, start, end):
        self.id = str(face_id)
        self.owner = owner
        self.neighbor = neighbor
        self.start = tuple(start)
        self.end = tuple(end)
        edge = tuple(e - s for s, e in zip(self.start, self.end))
        self.normal = (edge[1], -edge[0])
        self.float_start = np.array([float(c) for c in self.start])
        self.float_end = np.array([float(c) for c in self.end])
        self.float_normal = np.array([float(c) for c in self.normal])

    def __repr__(self):
        other = self.neighbor.id if self.neighbor is not None else "boundary"
        return f"Face({self.id!r}, {self.owner.id} | {other})"

    @property
    def is_internal(self) -> bool:
        return self.neighbor is not None

    def normal_for(self, cell: Cell):
        """Unnormalized outward normal of the given side, exact components."""
        if cell is self.owner:
            return self.normal
        if cell is self.neighbor:
            return tuple(-c for c in self.normal)
        raise TopologyError(f"face {self.id} does not border cell {cell.id}")

    def other(self, cell: Cell):
        if cell is self.owner:
            return self.neighbor
        if cell is self.neighbor:
            return self.owner
        raise TopologyError(f"face {self.id} does not border cell {cell.id}")

    def gauss_points(self, samples: int = FACE_SAMPLES):
        return segment_gauss(self.float_start, self.float_end, samples)


class Classification(Enum):
    INFLOW = "inflow"
    OUTFLOW = "outflow"
    TANGENTIAL = "tangential"
    MIXED = "mixed"


def _edge_key(a, b):
    pa = tuple(round(float(c), _MATCH_DECIMALS) for c in a)
    pb = tuple(round(float(c), _MATCH_DECIMALS) for c in b)
    return (min(pa, pb), max(pa, pb))


def build_faces_auto(cells) -> list:
    """Faces from shared polygon edges; unmatched edges become boundary faces.

    Edges are matched by endpoint coordinates rounded to 12 decimals, so cells
    meeting along a common full edge pair up; T-junctions are not detected and
    simply yield boundary faces. Face ids are deterministic: internal faces
    are named by the sorted cell-id pair, boundary faces by owner and edge
    index.
    """
    by_key = {}
    for cell in cells:
        n = len(cell.vertices)
        for i in range(n):
            a, b = cell.vertices[i], cell.vertices[(i + 1) % n]
            by_key.setdefault(_edge_key(a, b), []).append((cell, a, b))
    faces = []
    pair_counts = {}
    for key in sorted(by_key):
        entries = by_key[key]
        if len(entries) > 2:
            ids = ", ".join(e[0].id for e in entries)
            raise TopologyError(f"edge shared by more than two cells: {ids}")
        if len(entries) == 2:
            (ca, a0, a1), (cb, _, _) = entries
            if ca.id == cb.id:
                raise TopologyError(f"cell {ca.id} shares an edge with itself")
            lo, hi = sorted((ca.id, cb.id))
            idx = pair_counts.get((lo, hi), 0)
            pair_counts[(lo, hi)] = idx + 1
            suffix = f"#{idx}" if idx else ""
            faces.append(Face(f"f:{lo}|{hi}{suffix}", ca, cb, a0, a1))
        else:
            cell, a, b = entries[0]
            idx = pair_counts.get((cell.id, None), 0)
            pair_counts[(cell.id, None)] = idx + 1
            faces.append(Face(f"f:{cell.id}|-{idx}", cell, None, a, b))
    faces.sort(key=lambda f: f.id)
    return faces


def _normal_derivative_samples(cell: Cell, face: Face, samples: int):
    pts, _ = face.gauss_points(samples)
    grads = cell.potential.gradient_many(pts)
    nu = np.array([float(c) for c in face.normal_for(cell)])
    return grads @ nu, grads


def classify_face(
    face: Face,
    samples: int = FACE_SAMPLES,
    eps_tangential: float = EPS_TANGENTIAL,
) -> Classification:
    """Inflow, outflow, tangential, or mixed, seen from the owner cell.

    The normal derivative is tested against the owner's outward normal.
    Affine potentials with rational coefficients are decided exactly; others
    are sampled at Gauss points along the face with a tangential tolerance of
    eps_tangential relative to the local gradient scale.
    """
    exact = _exact_normal_derivative(face.owner.potential, face.normal)
    if exact is not None:
        if exact < 0:
            return Classification.INFLOW
        if exact > 0:
            return Classification.OUTFLOW
        return Classification.TANGENTIAL
    dn, grads = _normal_derivative_samples(face.owner, face, samples)
    norm_n = float(np.linalg.norm(face.float_normal))
    grad_scale = float(np.max(np.linalg.norm(grads, axis=1)))
    eps = eps_tangential * norm_n * max(grad_scale, 1e-300)
    if np.all(dn < -eps):
        return Classification.INFLOW
    if np.all(dn > eps):
        return Classification.OUTFLOW
    if np.all(np.abs(dn) <= eps):
        return Classification.TANGENTIAL
    return Classification.MIXED


def _sign_condition(face: Face, samples: int = FACE_SAMPLES):
    """(ok, detail) for the same-direction condition across an internal face.

    Both normal derivatives are taken with respect to one shared normal, so
    the admissibility requirement is simply that their product is positive
    everywhere on the face.
    """
    ex_own = _exact_normal_derivative(face.owner.potential, face.normal)
    ex_nei = _exact_normal_derivative(face.neighbor.potential, face.normal)
    if ex_own is not None and ex_nei is not None:
        product = ex_own * ex_nei
        if product > 0:
            return True, ""
        return False, (
            f"normal derivative product along face {face.id} is "
            f"{product} (owner side {ex_own}, neighbor side {ex_nei}); "
            "the construction needs both sides strictly on the same side of zero"
        )
    dn_own, _ = _normal_derivative_samples(face.owner, face, samples)
    nu = face.float_normal
    pts, _ = face.gauss_points(samples)
    dn_nei = face.neighbor.potential.gradient_many(pts) @ nu
    products = dn_own * dn_nei
    worst = int(np.argmin(products))
    if np.min(products) > 0:
        return True, ""
    return False, (
        f"normal derivative product along face {face.id} dips to "
        f"{products[worst]:.6g} at sample {worst}; "
        "the construction needs both sides strictly on the same side of zero"
    )


@dataclass(frozen=True)
class Violation:
    kind: str
    face_id: str
    cell_ids: tuple
    detail: str

    def __str__(self):
        where = f" face {self.face_id}" if self.face_id else ""
        cells = f" cells ({', '.join(self.cell_ids)})" if self.cell_ids else ""
        return f"[{self.kind}]{where}{cells}: {self.detail}"


@dataclass(frozen=True)
class ViolationReport:
    violations: tuple

    def __str__(self):
        lines = [f"{len(self.violations)} admissibility violation(s)"]
        lines += [f"  {v}" for v in self.violations]
        return "\n".join(lines)


@dataclass(frozen=True)
class Chain:
    """Cells reached from the head, in propagation order.

    links[i] is (face, cell): the face crossed from the previous cell (the
    head for i = 0) into `cell`. closing_face is set when the last cell
    connects back to the head, making the hub a closed loop.
    """

    head: Cell
    links: tuple
    closing_face: object = None

    @property
    def closed(self) -> bool:
        return self.closing_face is not None

    def cell_ids(self):
        return [self.head.id] + [cell.id for _, cell in self.links]


@dataclass(frozen=True)
class ChainPlan:
    cells: tuple
    faces: tuple
    heads: tuple
    chains: tuple
    classifications: dict
    seed_faces: dict

    def describe(self) -> str:
        lines = []
        for chain in self.chains:
            arrow = " -> ".join(chain.cell_ids())
            tail = " (closed loop)" if chain.closed else ""
            lines.append(f"chain from {chain.head.id}: {arrow}{tail}")
        return "\n".join(lines)


def _cycle_flux_factor(chain: Chain):
    """Product of flux ratios around a closed loop, or None if not exact.

    Crossing a face from cell a to cell b multiplies the conductivity by
    (nu . grad u_a) / (nu . grad u_b); constant-gradient cells transport
    constants unchanged, so the loop is consistent exactly when the product
    of these ratios around it equals 1.
    """
    product = Fraction(1)
    cell = chain.head
    faces = [face for face, _ in chain.links] + [chain.closing_face]
    nxt = [c for _, c in chain.links] + [chain.head]
    for face, downstream in zip(faces, nxt):
        normal = face.normal
        up = _exact_normal_derivative(cell.potential, normal)
        down = _exact_normal_derivative(downstream.potential, normal)
        if up is None or down is None:
            return None
        product *= Fraction(up, down)
        cell = downstream
    return product


def check_admissible(
    cells,
    faces=None,
    heads=None,
    samples: int = FACE_SAMPLES,
    eps_tangential: float = EPS_TANGENTIAL,
):
    """Validate a decomposition and plan the propagation order.

    Returns a ChainPlan when every condition holds, otherwise a
    ViolationReport naming each failing face or cell. Conditions checked:
    no mixed faces anywhere; strictly same-signed normal derivatives across
    every internal non-tangential face; cells reachable from exactly one head
    through a branching-free chain structure, where only head cells may have
    more than two connector faces; closed loops only with exact constant
    gradients and a flux-ratio product of exactly 1 around the loop.

    `heads` is a list of cell ids; by default the lowest cell id of each
    connected component is used. `faces` defaults to build_faces_auto(cells).
    """
    cells = list(cells)
    if faces is None:
        faces = build_faces_auto(cells)
    by_id = {c.id: c for c in cells}
    if len(by_id) != len(cells):
        raise TopologyError("duplicate cell ids")

    classifications = {f.id: classify_face(f, samples, eps_tangential) for f in faces}
    violations = []
    for f in faces:
        if classifications[f.id] is Classification.MIXED:
            sides = (f.owner.id,) if f.neighbor is None else (f.owner.id, f.neighbor.id)
            violations.append(
                Violation(
                    "mixed-face",
                    f.id,
                    sides,
                    "normal derivative changes sign along the face; "
                    "no transport direction exists",
                )
            )

    connectors = {c.id: [] for c in cells}
    for f in faces:
        if not f.is_internal or classifications[f.id] is Classification.TANGENTIAL:
            continue
        if classifications[f.id] is Classification.MIXED:
            continue
        ok, detail = _sign_condition(f, samples)
        if not ok:
            violations.append(
                Violation("sign-condition", f.id, (f.owner.id, f.neighbor.id), detail)
            )
            continue
        connectors[f.owner.id].append(f)
        connectors[f.neighbor.id].append(f)
    for lst in connectors.values():
        lst.sort(key=lambda f: f.id)

    if violations:
        return ViolationReport(tuple(violations))

    # connected components over the connector graph
    component = {}
    for cell in sorted(cells, key=lambda c: c.id):
        if cell.id in component:
            continue
        stack, comp = [cell.id], cell.id
        while stack:
            cid = stack.pop()
            if cid in component:
                continue
            component[cid] = comp
            for f in connectors[cid]:
                stack.append(f.other(by_id[cid]).id)

    if heads is None:
        chosen = {}
        for cid in sorted(component):
            chosen.setdefault(component[cid], cid)
        head_ids = [chosen[k] for k in sorted(chosen)]
    else:
        head_ids = list(heads)
        for hid in head_ids:
            if hid not in by_id:
                raise TopologyError(f"head cell {hid!r} does not exist")
        per_comp = {}
        for hid in head_ids:
            per_comp.setdefault(component[hid], []).append(hid)
        for comp, hs in per_comp.items():
            if len(hs) > 1:
                violations.append(
                    Violation(
                        "head-conflict",
                        "",
                        tuple(hs),
                        "these head cells are connected through non-tangential "
                        "faces; each connected group takes exactly one head",
                    )
                )
        missing = sorted(set(component.values()) - set(per_comp))
        for comp in missing:
            members = sorted(cid for cid in component if component[cid] == comp)
            violations.append(
                Violation(
                    "uncovered-cell",
                    "",
                    tuple(members),
                    "no head designated for this connected group",
                )
            )
        if violations:
            return ViolationReport(tuple(violations))

    chains = []
    visited = set(head_ids)
    consumed = set()
    for hid in head_ids:
        head = by_id[hid]
        for start_face in connectors[hid]:
            if start_face.id in consumed:
                continue
            consumed.add(start_face.id)
            links = []
            closing = None
            prev = head
            via = start_face
            cell = start_face.other(head)
            while True:
                if cell is head:
                    closing = via
                    break
                if cell.id in visited:
                    violations.append(
                        Violation(
                            "re-entry",
                            via.id,
                            (prev.id, cell.id),
                            f"cell {cell.id} is reached a second time, from "
                            f"{prev.id}; chains may not merge",
                        )
                    )
                    break
                visited.add(cell.id)
                links.append((via, cell))
                onward = [f for f in connectors[cell.id] if f.id not in consumed]
                if not onward:
                    break
                if len(onward) > 1:
                    violations.append(
                        Violation(
                            "branch",
                            "",
                            (cell.id,),
                            f"cell {cell.id} has {len(onward) + 1} non-tangential "
                            "connector faces but is not a head; chains may only "
                            "branch at head cells",
                        )
                    )
                    break
                via = onward[0]
                consumed.add(via.id)
                prev = cell
                cell = via.other(cell)
            chain = Chain(head=head, links=tuple(links), closing_face=closing)
            chains.append(chain)
            if closing is not None:
                factor = _cycle_flux_factor(chain)
                if factor is None:
                    violations.append(
                        Violation(
                            "unsupported-cycle",
                            closing.id,
                            tuple(chain.cell_ids()),
                            "loop passes through a cell without exact constant "
                            "gradient; loop consistency cannot be certified",
                        )
                    )
                elif factor != 1:
                    violations.append(
                        Violation(
                            "cycle-closure",
                            closing.id,
                            tuple(chain.cell_ids()),
                            "flux ratios around the loop multiply to "
                            f"{factor}, not 1; the data returns to the head "
                            "with a different value",
                        )
                    )

    uncovered = sorted(c.id for c in cells if c.id not in visited and connectors[c.id])
    for cid in uncovered:
        violations.append(
            Violation(
                "uncovered-cell",
                "",
                (cid,),
                "cell has connector faces but was never reached from a head",
            )
        )
    isolated = [c.id for c in cells if not connectors[c.id] and c.id not in head_ids]
    if heads is not None:
        for cid in isolated:
            violations.append(
                Violation(
                    "uncovered-cell",
                    "",
                    (cid,),
                    "isolated cell is not listed as a head",
                )
            )
    else:
        # isolated cells become their own single-cell hubs
        head_ids = head_ids + isolated

    if violations:
        return ViolationReport(tuple(violations))

    seed_faces = {}
    faces_by_cell = {c.id: [] for c in cells}
    for f in faces:
        faces_by_cell[f.owner.id].append(f)
        if f.neighbor is not None:
            faces_by_cell[f.neighbor.id].append(f)
    for hid in head_ids:
        candidates = [
            f
            for f in sorted(faces_by_cell[hid], key=lambda f: f.id)
            if classifications[f.id] in (Classification.INFLOW, Classification.OUTFLOW)
        ]
        if not candidates:
            return ViolationReport(
                (
                    Violation(
                        "no-seed-face",
                        "",
                        (hid,),
                        "head cell has no inflow or outflow face to carry data",
                    ),
                )
            )
        seed_faces[hid] = candidates[0]

    return ChainPlan(
        cells=tuple(cells),
        faces=tuple(faces),
        heads=tuple(by_id[h] for h in head_ids),
        chains=tuple(chains),
        classifications=classifications,
        seed_faces=seed_faces,
    )


# -- face data and per-cell conductivity evaluators --------------------------


class FaceData:
    """Positive boundary data on a face: a constant or a pointwise function."""

    def __init__(self, fn=None, constant=None):
        if (fn is None) == (constant is None):
            raise ValueError("exactly one of fn and constant must be given")
        if constant is not None and not float(constant) > 0:
            raise ValueError(f"boundary data must be positive, got {constant}")
        self.fn = fn
        self.constant = constant

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        if self.constant is not None:
            return np.full(len(points), float(self.constant))
        vals = np.asarray(self.fn(points), dtype=float)
        if np.any(vals <= 0):
            raise ValueError("boundary data must be positive on the face")
        return vals


def _as_face_data(gamma):
    if isinstance(gamma, FaceData):
        return gamma
    if callable(gamma):
        return FaceData(fn=gamma)
    return FaceData(constant=gamma)


class ConstantCellSigma:
    """Constant conductivity on one cell; keeps the exact value when given."""

    def __init__(self, cell: Cell, value):
        if not float(value) > 0:
            raise ValueError(f"conductivity must be positive, got {value}")
        self.cell = cell
        self.constant_value = value

    def sigma_many(self, points):
        points = np.asarray(points, dtype=float)
        return np.full(len(points), float(self.constant_value))


class ProjectedCellSigma:
    """Conductivity on a constant-gradient cell with pointwise face data.

    Trajectories are straight lines along the gradient, the path integral of
    the Laplacian is zero, so the value at y is just the face data at the
    point where the line through y meets the data face.
    """

    def __init__(self, cell: Cell, face: Face, gamma: FaceData):
        self.cell = cell
        self.face = face
        self.gamma = gamma
        self.constant_value = gamma.constant
        self._lam = np.array(cell.potential.constant_gradient(), dtype=float)
        self._n = face.float_normal
        self._c = float(self._n @ face.float_start)
        denom = float(self._n @ self._lam)
        if denom == 0.0:
            raise TopologyError(
                f"face {face.id} is tangential for cell {cell.id}; "
                "it cannot carry boundary data"
            )
        self._denom = denom

    def sigma_many(self, points):
        pts = np.asarray(points, dtype=float)
        tau = (self._c - pts @ self._n) / self._denom
        hits = pts + tau[:, None] * self._lam[None, :]
        return self.gamma(hits)


class TransportedCellSigma:
    """Conductivity on a curved-potential cell, one ODE solve per point.

    From y the flow dX/dt = grad u is integrated toward the data face
    (backward in time when the face is the cell's inflow side), accumulating
    the Laplacian along the way; the value is gamma at the hit point times
    exp of the accumulated integral, the transport solution of
    grad sigma . grad u = -sigma lap u.
    """

    def __init__(self, cell: Cell, face: Face, gamma: FaceData, rtol: float = 1e-9):
        self.cell = cell
        self.face = face
        self.gamma = gamma
        self.constant_value = None
        self.rtol = rtol
        nu = np.array([float(c) for c in face.normal_for(cell)])
        self._n = nu
        self._c = float(nu @ face.float_start)
        samples = cell.sample_points()
        grads = cell.potential.gradient_many(samples)
        speeds = np.linalg.norm(grads, axis=1)
        self._m = float(np.min(speeds)) * 0.9
        if self._m <= 0:
            raise TopologyError(
                f"cell {cell.id}: sampled gradient vanishes; transport undefined"
            )
        u_vals = cell.potential.value_many(samples)
        self._horizon = 1.5 * float(np.ptp(u_vals)) / self._m**2 + 1e-3
        dn = grads @ nu
        if np.all(dn < 0):
            self._direction = -1.0  # inflow side: go backward in time
        elif np.all(dn > 0):
            self._direction = 1.0
        else:
            raise TopologyError(
                f"face {face.id} is not strictly inflow or outflow for cell "
                f"{cell.id}; it cannot carry boundary data"
            )
        edge = face.float_end - face.float_start
        self._edge = edge
        self._edge_len2 = float(edge @ edge)

    def _hit_one(self, y):
        field = self.cell.potential
        n, c = self._n, self._c

        def rhs(t, state):
            p = state[:2][None, :]
            g = field.gradient_many(p)[0]
            lap = field.laplacian_many(p)[0]
            return [g[0], g[1], lap]

        def face_event(t, state):
            return n @ state[:2] - c

        face_event.terminal = True

        horizon = self._horizon
        for _ in range(4):
            sol = solve_ivp(
                rhs,
                (0.0, self._direction * horizon),
                [y[0], y[1], 0.0],
                method="RK45",
                rtol=self.rtol,
                atol=1e-12,
                events=face_event,
                dense_output=False,
            )
            if sol.t_events[0].size:
                state = sol.y_events[0][0]
                hit = state[:2]
                s = float((hit - self.face.float_start) @ self._edge) / self._edge_len2
                if s < -1e-9 or s > 1.0 + 1e-9:
                    raise HitTimeError(
                        f"trajectory from {tuple(y)} meets the face plane of "
                        f"{self.face.id} outside the face segment (s = {s:.6g}); "
                        "the face does not see this point"
                    )
                return hit, float(state[2])
            horizon *= 2.0
        raise HitTimeError(
            f"trajectory from {tuple(y)} did not reach face {self.face.id} "
            f"within time {horizon:.3g}; check the face classification"
        )

    def sigma_many(self, points):
        pts = np.asarray(points, dtype=float)
        out = np.empty(len(pts))
        for i, y in enumerate(pts):
            hit, integral = self._hit_one(y)
            out[i] = float(self.gamma(hit[None, :])[0]) * np.exp(integral)
        return out


def flux_match(sigma_upstream, upstream: Cell, downstream: Cell, face: Face,
               samples: int = FACE_SAMPLES) -> FaceData:
    """Boundary data on the downstream side of a face from the upstream side.

    The flux sigma * du/dnu is continuous across the face, so the downstream
    data is sigma_up * (nu . grad u_up) / (nu . grad u_down), with both
    derivatives against one shared normal. Exact when both potentials are
    affine with rational coefficients and the upstream value is an exact
    constant.
    """
    if face.other(upstream) is not downstream:
        raise TopologyError(
            f"face {face.id} does not join cells {upstream.id} and {downstream.id}"
        )
    normal = face.normal
    ex_up = _exact_normal_derivative(upstream.potential, normal)
    ex_down = _exact_normal_derivative(downstream.potential, normal)
    if ex_up is not None and ex_down is not None:
        if ex_up == 0 or ex_down == 0:
            raise TopologyError(
                f"face {face.id} is tangential; a tangential face has no flux "
                "constraint and cannot carry data"
            )
        if ex_up * ex_down < 0:
            raise TopologyError(
                f"face {face.id}: normal derivatives have opposite signs "
                f"({ex_up} upstream, {ex_down} downstream); flux matching "
                "would produce a negative conductivity"
            )
        up_const = getattr(sigma_upstream, "constant_value", None)
        if up_const is not None and _is_exact(up_const):
            return FaceData(constant=up_const * Fraction(ex_up, ex_down))
        ratio = float(Fraction(ex_up, ex_down))
        return FaceData(
            fn=lambda pts, r=ratio: sigma_upstream.sigma_many(pts) * r
        )

    nu = face.float_normal
    pts, _ = face.gauss_points(samples)
    dn_up = upstream.potential.gradient_many(pts) @ nu
    dn_down = downstream.potential.gradient_many(pts) @ nu
    norm_n = float(np.linalg.norm(nu))
    scale_up = float(np.max(np.linalg.norm(upstream.potential.gradient_many(pts), axis=1)))
    eps = EPS_TANGENTIAL * norm_n * max(scale_up, 1e-300)
    if np.all(np.abs(dn_up) <= eps) or np.all(np.abs(dn_down) <= eps):
        raise TopologyError(
            f"face {face.id} is tangential; a tangential face has no flux "
            "constraint and cannot carry data"
        )
    if np.min(dn_up * dn_down) <= 0:
        raise TopologyError(
            f"face {face.id}: normal derivatives have opposite signs somewhere "
            "on the face; flux matching would produce a nonpositive conductivity"
        )

    def gamma_fn(points):
        points = np.asarray(points, dtype=float)
        g_up = upstream.potential.gradient_many(points) @ nu
        g_down = downstream.potential.gradient_many(points) @ nu
        return sigma_upstream.sigma_many(points) * g_up / g_down

    return FaceData(fn=gamma_fn)


def transport_boundary_value(cell: Cell, face: Face, gamma, rtol: float = 1e-9):
    """Conductivity on the cell from positive data on one of its faces.

    The data face must be strictly inflow or outflow for the cell. Returns a
    per-cell evaluator with sigma_many; constant-gradient cells with constant
    data keep the value exactly.
    """
    gamma = _as_face_data(gamma)
    lam = cell.potential.constant_gradient()
    if lam is not None:
        if gamma.constant is not None:
            nd = float(np.asarray(lam) @ face.float_normal)
            if nd == 0.0:
                raise TopologyError(
                    f"face {face.id} is tangential for cell {cell.id}; "
                    "it cannot carry boundary data"
                )
            return ConstantCellSigma(cell, gamma.constant)
        return ProjectedCellSigma(cell, face, gamma)
    return TransportedCellSigma(cell, face, gamma, rtol=rtol)


# -- assembled piecewise conductivity ----------------------------------------


class _CellRegion:
    """One cell's polygon plus evaluators, for region-split weak integration."""

    def __init__(self, cell: Cell, sigma):
        self.vertices = cell.float_vertices
        self._sigma = sigma
        self._potential = cell.potential

    def sigma_many(self, points):
        return self._sigma.sigma_many(points)

    def grad_many(self, points):
        return self._potential.gradient_many(np.asarray(points, dtype=float))


class PiecewiseConductivity(ConductivityField):
    """Cell-wise conductivity over a polygonal decomposition.

    Points on shared faces evaluate on the first containing cell in cell
    order; the two one-sided values differ in general, which is the point of
    a piecewise conductivity. Points outside every cell raise
    EvaluationDomainError.
    """

    def __init__(self, cells, sigmas: dict):
        self.cells = tuple(cells)
        self.sigmas = dict(sigmas)
        self.dimension = 2

    def cell_sigma(self, cell_id: str):
        return self.sigmas[cell_id]

    def sigma(self, x) -> float:
        return float(self.sigma_many(np.asarray(x, dtype=float)[None, :])[0])

    def constant_values(self) -> dict:
        """Per-cell exact values, for cells where the value is constant."""
        return {
            cid: s.constant_value
            for cid, s in self.sigmas.items()
            if getattr(s, "constant_value", None) is not None
        }

    def sigma_many(self, points):
        pts = np.asarray(points, dtype=float)
        out = np.empty(len(pts))
        for i, p in enumerate(pts):
            for cell in self.cells:
                if cell.contains(p):
                    out[i] = self.sigmas[cell.id].sigma_many(p[None, :])[0]
                    break
            else:
                raise EvaluationDomainError(
                    f"point {tuple(p)} lies outside every cell"
                )
        return out

    def regions(self):
        return [_CellRegion(c, self.sigmas[c.id]) for c in self.cells]


@dataclass(frozen=True)
class FaceFluxCheck:
    face_id: str
    residual: float
    scale: float

    @property
    def normalized(self) -> float:
        return self.residual / self.scale if self.scale > 0 else 0.0


@dataclass(frozen=True)
class PiecewiseBuildReport:
    plan_text: str
    flux_checks: tuple
    sigma_ranges: dict
    max_flux_normalized: float

    def __str__(self):
        lines = [self.plan_text, "flux continuity across internal faces:"]
        for chk in self.flux_checks:
            lines.append(
                f"  {chk.face_id}: residual {chk.residual:.3e} "
                f"(normalized {chk.normalized:.3e})"
            )
        lines.append(f"  worst normalized residual {self.max_flux_normalized:.3e}")
        return "\n".join(lines)


def _check_face_flux(face: Face, sig_a, sig_b, samples: int = FACE_SAMPLES):
    pts, _ = face.gauss_points(samples)
    nu = face.float_normal / np.linalg.norm(face.float_normal)
    flux_a = sig_a.sigma_many(pts) * (face.owner.potential.gradient_many(pts) @ nu)
    flux_b = sig_b.sigma_many(pts) * (face.neighbor.potential.gradient_many(pts) @ nu)
    residual = float(np.max(np.abs(flux_a - flux_b)))
    scale = float(np.max(np.abs(np.concatenate([flux_a, flux_b]))))
    return FaceFluxCheck(face.id, residual, scale)


def build_piecewise_sigma(plan, seeds=None, rtol: float = 1e-9):
    """Assemble the conductivity over a validated decomposition.

    Each hub's head cell is fed a constant seed (default 1) on its designated
    seed face and transported; every chain then alternates flux matching and
    in-cell transport away from the head. Returns the piecewise conductivity
    and a report with sampled flux-continuity residuals on the faces the
    construction crossed.
    """
    if isinstance(plan, ViolationReport):
        raise TopologyError(
            "construction refused: the decomposition is not admissible:\n"
            + str(plan)
        )
    seeds = dict(seeds or {})
    for head in plan.heads:
        seeds.setdefault(head.id, Fraction(1))

    sigmas = {}
    for head in plan.heads:
        seed = seeds[head.id]
        if not float(seed) > 0:
            raise ValueError(f"seed for head {head.id} must be positive, got {seed}")
        sigmas[head.id] = transport_boundary_value(
            head, plan.seed_faces[head.id], FaceData(constant=seed), rtol=rtol
        )

    crossed = []
    for chain in plan.chains:
        upstream = chain.head
        for face, cell in chain.links:
            gamma = flux_match(sigmas[upstream.id], upstream, cell, face)
            sigmas[cell.id] = transport_boundary_value(cell, face, gamma, rtol=rtol)
            crossed.append(face)
            upstream = cell
        if chain.closed:
            crossed.append(chain.closing_face)

    checks = []
    for face in crossed:
        checks.append(_check_face_flux(face, sigmas[face.owner.id], sigmas[face.neighbor.id]))

    ranges = {}
    for cell in plan.cells:
        sig = sigmas[cell.id]
        if getattr(sig, "constant_value", None) is not None:
            v = float(sig.constant_value)
            ranges[cell.id] = (v, v)
        else:
            sample = np.vstack([cell.float_vertices, cell.sample_points(order=2)])
            inward = cell.float_vertices.mean(axis=0)
            shrunk = inward[None, :] + 0.999 * (sample - inward[None, :])
            vals = sig.sigma_many(shrunk)
            ranges[cell.id] = (float(np.min(vals)), float(np.max(vals)))
        if ranges[cell.id][0] <= 0:
            raise ValueError(
                f"built conductivity is not positive on cell {cell.id}: "
                f"min {ranges[cell.id][0]:.6g}"
            )

    field = PiecewiseConductivity(plan.cells, sigmas)
    report = PiecewiseBuildReport(
        plan_text=plan.describe(),
        flux_checks=tuple(checks),
        sigma_ranges=ranges,
        max_flux_normalized=max((c.normalized for c in checks), default=0.0),
    )
    return field, report

"""Conductivity reconstruction along gradient-flow trajectories.

The scalar conductivity realizing a potential's gradient is
sigma(x) = exp(I(tau(x))), where tau(x) is the signed time at which the
trajectory from x crosses the zero level set of u and I is the Laplacian
line integral along the way. sigma is normalized to 1 on the level set.
The same transport relation evaluated between two points of one trajectory,
log sigma(x) - log sigma(X(t, x)) = I(t), doubles as an a-posteriori check
for any candidate conductivity.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import CondflowError, DomainExitError, EvaluationDomainError, HitTimeError
from .fields import PotentialField, certify
from .flow import TOL_ODE, TOL_ROOT, flow_to_level_set, integrate_flow
from .geometry import Box

__all__ = [
    "ConductivityField",
    "FlowConductivity",
    "ExpressionConductivity",
    "SampledConductivity",
    "GridReport",
    "reconstruct_sigma",
    "flow_relation_residual",
    "reconstruct_on_grid",
    "export_sigma_table",
    "import_sigma_table",
]


class ConductivityField:
    """Base class for positive scalar conductivities."""

    dimension: int

    def sigma(self, x) -> float:
        raise NotImplementedError

    def sigma_many(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.array([self.sigma(p) for p in pts])

    def log_sigma(self, x) -> float:
        value = self.sigma(x)
        if not value > 0:
            raise EvaluationDomainError(f"conductivity not positive at {x}: {value}")
        return float(np.log(value))


class FlowConductivity(ConductivityField):
    """Point evaluator running one trajectory per call.

    Evaluation is pure and cache-free; each call integrates from scratch, so
    instances are safe to share between threads.
    """

    def __init__(
        self,
        field: PotentialField,
        box: Box,
        min_gradient: float,
        rtol: float = TOL_ODE,
        tol_root: float = TOL_ROOT,
    ):
        self.field = field
        self.box = box
        self.min_gradient = min_gradient
        self.rtol = rtol
        self.tol_root = tol_root
        self.dimension = field.dimension

    def sigma(self, x) -> float:
        return float(np.exp(self.log_sigma(x)))

    def log_sigma(self, x) -> float:
        hit = flow_to_level_set(
            self.field,
            x,
            self.box,
            min_gradient=self.min_gradient,
            rtol=self.rtol,
            tol_root=self.tol_root,
        )
        return hit.integral


class ExpressionConductivity(ConductivityField):
    """Closed-form conductivity given by an expression over x1..xd."""

    def __init__(self, source, dimension: int):
        from .fields import ExpressionField

        self._field = ExpressionField(source, dimension)
        self.dimension = dimension
        self.source = self._field.source

    def sigma(self, x) -> float:
        return self._field.value(x)

    def sigma_many(self, points) -> np.ndarray:
        return self._field.value_many(points)


class SampledConductivity(ConductivityField):
    """Conductivity stored on a regular grid, interpolated multilinearly.

    Failed grid nodes are NaN; evaluation touching one raises
    EvaluationDomainError so holes cannot silently leak into integrals.
    """

    def __init__(self, box: Box, shape, values):
        self.box = box
        self.dimension = box.dimension
        self.shape = tuple(int(s) for s in shape)
        self.values = np.asarray(values, dtype=float).reshape(self.shape)
        axes = [np.linspace(box.lo[i], box.hi[i], self.shape[i]) for i in range(self.dimension)]
        self._axes = axes
        self._interp = RegularGridInterpolator(axes, self.values, method="linear")

    @property
    def holes(self) -> int:
        return int(np.sum(~np.isfinite(self.values)))

    @property
    def sigma_min(self) -> float:
        return float(np.nanmin(self.values))

    @property
    def sigma_max(self) -> float:
        return float(np.nanmax(self.values))

    def sigma_many(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        try:
            out = self._interp(pts)
        except ValueError as exc:
            raise EvaluationDomainError(f"point outside the sampled grid: {exc}") from None
        if not np.all(np.isfinite(out)):
            raise EvaluationDomainError("evaluation touched a reconstruction hole")
        return out

    def sigma(self, x) -> float:
        return float(self.sigma_many(np.asarray(x, float)[None, :])[0])


def reconstruct_sigma(
    field: PotentialField,
    x,
    box: Box,
    min_gradient: float = None,
    rtol: float = TOL_ODE,
    tol_root: float = TOL_ROOT,
) -> float:
    """sigma(x) = exp of the Laplacian line integral down to the zero level set."""
    hit = flow_to_level_set(
        field, x, box, min_gradient=min_gradient, rtol=rtol, tol_root=tol_root
    )
    return float(np.exp(hit.integral))


def flow_relation_residual(
    field: PotentialField,
    sigma: ConductivityField,
    x,
    t: float,
    box: Box,
    rtol: float = TOL_ODE,
) -> float:
    """|log sigma(x) - log sigma(X(t,x)) - I(t)| for a candidate sigma.

    Zero (to integrator accuracy) exactly when the candidate satisfies the
    transport relation along this trajectory; order-one values flag a wrong
    conductivity.
    """
    x = np.asarray(x, dtype=float)
    traj = integrate_flow(field, x, t, box, rtol=rtol)
    end = traj.final_point
    return float(abs(sigma.log_sigma(x) - sigma.log_sigma(end) - traj.final_integral))


@dataclass(frozen=True)
class GridReport:
    """Summary of a grid reconstruction run."""

    n_points: int
    n_holes: int
    holes: tuple
    sigma_min: float
    sigma_max: float
    tau_abs_max: float
    integral_abs_max: float
    m: float
    note: str = "gradient bound certified on a sample plan, not proven"


def reconstruct_on_grid(
    field: PotentialField,
    box: Box,
    shape,
    flow_box: Box = None,
    min_gradient: float = None,
    rtol: float = TOL_ODE,
    tol_root: float = TOL_ROOT,
    threshold: float = 1e-6,
    threads: int = 1,
):
    """Reconstruct sigma at every node of a regular grid over `box`.

    Trajectories may wander past the grid box on their way to the level set,
    so they are confined to `flow_box` (default: the grid box inflated by
    twice its largest width). The field is gradient-certified on that box
    unless a bound is passed in. Nodes whose trajectory exits the flow box or
    fails to hit the level set become holes, recorded in the report.

    Returns (SampledConductivity, GridReport).
    """
    if flow_box is None:
        flow_box = box.inflate(2.0 * float(np.max(box.widths)))
    if min_gradient is None:
        min_gradient = certify(field, flow_box, threshold=threshold).m

    nodes = box.grid(shape)
    values = np.empty(len(nodes))
    taus = np.zeros(len(nodes))
    integrals = np.zeros(len(nodes))
    holes = []

    def solve_one(i):
        try:
            hit = flow_to_level_set(
                field,
                nodes[i],
                flow_box,
                min_gradient=min_gradient,
                rtol=rtol,
                tol_root=tol_root,
            )
            return i, hit.tau, hit.integral, None
        except (DomainExitError, HitTimeError) as exc:
            return i, np.nan, np.nan, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve_one, range(len(nodes))))
    else:
        results = [solve_one(i) for i in range(len(nodes))]

    for i, tau, integral, err in results:
        if err is None:
            taus[i] = tau
            integrals[i] = integral
            values[i] = np.exp(integral)
        else:
            values[i] = np.nan
            holes.append((i, tuple(nodes[i]), err))

    good = np.isfinite(values)
    if not np.any(good):
        raise CondflowError("grid reconstruction failed at every node")
    sampled = SampledConductivity(box, shape, values)
    report = GridReport(
        n_points=len(nodes),
        n_holes=len(holes),
        holes=tuple(holes),
        sigma_min=float(np.min(values[good])),
        sigma_max=float(np.max(values[good])),
        tau_abs_max=float(np.max(np.abs(taus[good]))),
        integral_abs_max=float(np.max(np.abs(integrals[good]))),
        m=min_gradient,
    )
    return sampled, report


# ---------------------------------------------------------------------------
# Tabular export / import


def export_sigma_table(path, sampled: SampledConductivity, field: PotentialField):
    """Write the grid as a whitespace table: coordinates, u, |grad u|, sigma."""
    nodes = sampled.box.grid(sampled.shape)
    u = field.value_many(nodes)
    gnorm = np.linalg.norm(field.gradient_many(nodes), axis=1)
    sig = sampled.values.ravel()
    d = sampled.dimension
    with open(path, "w") as fh:
        fh.write("# condflow sigma grid\n")
        fh.write("# box_lo " + " ".join("%.17g" % v for v in sampled.box.lo) + "\n")
        fh.write("# box_hi " + " ".join("%.17g" % v for v in sampled.box.hi) + "\n")
        fh.write("# shape " + " ".join(str(s) for s in sampled.shape) + "\n")
        cols = [f"x{i + 1}" for i in range(d)] + ["u", "grad_norm", "sigma"]
        fh.write("# columns " + " ".join(cols) + "\n")
        for row in range(len(nodes)):
            parts = ["%.17g" % v for v in nodes[row]]
            parts += ["%.17g" % u[row], "%.17g" % gnorm[row], "%.17g" % sig[row]]
            fh.write(" ".join(parts) + "\n")


def import_sigma_table(path) -> SampledConductivity:
    """Rebuild a SampledConductivity from an exported table."""
    lo = hi = shape = None
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            parts = line[1:].split()
            if not parts:
                continue
            if parts[0] == "box_lo":
                lo = [float(v) for v in parts[1:]]
            elif parts[0] == "box_hi":
                hi = [float(v) for v in parts[1:]]
            elif parts[0] == "shape":
                shape = [int(v) for v in parts[1:]]
    if lo is None or hi is None or shape is None:
        raise CondflowError(f"{path}: missing grid header lines")
    data = np.loadtxt(path)
    if data.ndim == 1:
        data = data[None, :]
    sigma = data[:, -1]
    return SampledConductivity(Box(lo, hi), shape, sigma)

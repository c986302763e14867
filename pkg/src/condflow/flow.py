"""Gradient-flow trajectories dX/dt = grad u(X).

The ODE state is augmented with I(t), the running line integral of the
Laplacian along the path, so I rides the same embedded RK45 error control as
the position and is available from the dense output at event times. Along any
trajectory u is strictly increasing (du/dt = |grad u|^2), which makes the
zero-level-set crossing a simple monotone root.

Trajectories are defined for every start point here; the underlying flow is
only guaranteed unique off an exceptional null set of starts, which sampled
checks cannot detect. Reports carry that caveat rather than claiming more.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainExitError, HitTimeError
from .fields import PotentialField
from .geometry import Box

__all__ = [
    "TOL_ODE",
    "TOL_ROOT",
    "Trajectory",
    "LevelSetHit",
    "TransitTimes",
    "FlowDensityReport",
    "integrate_flow",
    "flow_to_level_set",
    "hit_time",
    "semigroup_defect",
    "transit_times",
    "estimate_flow_density",
]

TOL_ODE = 1e-9
TOL_ROOT = 1e-10

_AE_CAVEAT = "start points in the exceptional non-uniqueness set cannot be detected by sampling"


def _rhs(field: PotentialField):
    d = field.dimension

    def fun(t, y):
        x = y[:d]
        out = np.empty(d + 1)
        out[:d] = field.gradient(x)
        out[d] = field.laplacian(x)
        return out

    return fun


def _box_event(box: Box, d: int):
    def event(t, y):
        return box.signed_inset(y[:d])

    event.terminal = True
    event.direction = -1.0
    return event


@dataclass
class _Segment:
    t0: float
    t1: float
    sol: object  # OdeSolution


class Trajectory:
    """A solved trajectory with dense interpolation of (X, I).

    Attributes
    ----------
    times : (n,) solver step times, from 0 to the final time.
    points : (n, d) positions at those times.
    integrals : (n,) running Laplacian line integral at those times.
    """

    def __init__(self, field, x0, segments, times, states):
        self.field = field
        self.x0 = np.asarray(x0, dtype=float)
        self._segments = segments
        self.times = np.asarray(times, dtype=float)
        self._states = np.asarray(states, dtype=float)
        self.note = _AE_CAVEAT

    @property
    def dimension(self) -> int:
        return self.field.dimension

    @property
    def points(self) -> np.ndarray:
        return self._states[:, : self.dimension]

    @property
    def integrals(self) -> np.ndarray:
        return self._states[:, self.dimension]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def final_point(self) -> np.ndarray:
        return self.points[-1]

    @property
    def final_integral(self) -> float:
        return float(self.integrals[-1])

    def state(self, t: float) -> np.ndarray:
        t = float(t)
        if not self._segments:
            return self._states[0]
        for seg in self._segments:
            lo, hi = sorted((seg.t0, seg.t1))
            if lo - 1e-12 <= t <= hi + 1e-12:
                return seg.sol(t)
        raise ValueError(f"time {t} outside the integrated range")

    def position(self, t: float) -> np.ndarray:
        return self.state(t)[: self.dimension]

    def integral(self, t: float) -> float:
        return float(self.state(t)[self.dimension])

    def u_values(self) -> np.ndarray:
        """u sampled at the stored step times (strictly monotone in time)."""
        return self.field.value_many(self.points)


def integrate_flow(
    field: PotentialField,
    x0,
    t_target: float,
    box: Box,
    rtol: float = TOL_ODE,
) -> Trajectory:
    """Integrate the gradient flow from x0 for a signed duration t_target.

    The trajectory must stay inside `box`; leaving it raises DomainExitError
    with the exit time and point. Negative t_target integrates backward.
    """
    x0 = np.asarray(x0, dtype=float)
    d = field.dimension
    y0 = np.concatenate([x0, [0.0]])
    if t_target == 0.0:
        return Trajectory(field, x0, [], np.array([0.0]), y0[None, :])
    event = _box_event(box, d)
    res = solve_ivp(
        _rhs(field),
        (0.0, float(t_target)),
        y0,
        method="RK45",
        rtol=rtol,
        atol=rtol * 1e-3,
        dense_output=True,
        events=[event],
    )
    if res.status == 1:  # box exit
        t_exit = float(res.t_events[0][0])
        x_exit = res.y_events[0][0][:d]
        raise DomainExitError(
            f"trajectory left the box at t={t_exit:.6g}",
            time=t_exit,
            point=x_exit,
            integral=float(res.y_events[0][0][d]),
        )
    if res.status != 0:
        raise HitTimeError(f"integration failed: {res.message}")
    seg = _Segment(0.0, float(t_target), res.sol)
    return Trajectory(field, x0, [seg], res.t, res.y.T)


@dataclass(frozen=True)
class LevelSetHit:
    """Crossing of the zero level set along a trajectory."""

    tau: float
    point: np.ndarray
    integral: float
    trajectory: Trajectory


def flow_to_level_set(
    field: PotentialField,
    x,
    box: Box,
    min_gradient: float = None,
    rtol: float = TOL_ODE,
    max_horizon: float = 1e4,
    tol_root: float = TOL_ROOT,
) -> LevelSetHit:
    """Follow the flow from x until u(X) = 0 and return the crossing data.

    Marches opposite the sign of u(x); with a certified gradient lower bound m
    the crossing happens within |u(x)|/m^2, otherwise the horizon doubles
    until the level set or the box boundary is reached.
    """
    x = np.asarray(x, dtype=float)
    d = field.dimension
    u0 = field.value(x)
    if u0 == 0.0:
        traj = Trajectory(field, x, [], np.array([0.0]), np.concatenate([x, [0.0]])[None, :])
        return LevelSetHit(tau=0.0, point=x.copy(), integral=0.0, trajectory=traj)

    direction = -1.0 if u0 > 0 else 1.0
    if min_gradient is not None and min_gradient > 0:
        horizon = 1.25 * abs(u0) / (min_gradient**2)
    else:
        horizon = max(1.0, abs(u0))

    def level(t, y):
        return field.value(y[:d])

    level.terminal = True
    level.direction = 0.0

    box_ev = _box_event(box, d)

    segments = []
    times_all = [np.array([0.0])]
    states_all = [np.concatenate([x, [0.0]])[None, :]]
    t_start = 0.0
    y_start = np.concatenate([x, [0.0]])
    while True:
        t_end = t_start + direction * horizon
        res = solve_ivp(
            _rhs(field),
            (t_start, t_end),
            y_start,
            method="RK45",
            rtol=rtol,
            atol=rtol * 1e-3,
            dense_output=True,
            events=[level, box_ev],
        )
        segments.append(_Segment(t_start, float(res.t[-1]), res.sol))
        times_all.append(res.t[1:])
        states_all.append(res.y.T[1:])
        if res.status == 1:
            if len(res.t_events[0]):
                tau = float(res.t_events[0][0])
                y_hit = res.y_events[0][0]
                miss = abs(field.value(y_hit[:d]))
                if miss > tol_root * max(1.0, abs(u0)):
                    raise HitTimeError(
                        f"level-set crossing too loose: |u| = {miss:.3g} at the "
                        f"event point (tol_root {tol_root:g})"
                    )
                traj = Trajectory(
                    field, x, segments, np.concatenate(times_all), np.concatenate(states_all)
                )
                return LevelSetHit(
                    tau=tau, point=y_hit[:d].copy(), integral=float(y_hit[d]), trajectory=traj
                )
            t_exit = float(res.t_events[1][0])
            raise DomainExitError(
                f"trajectory left the box at t={t_exit:.6g} before reaching the zero level set",
                time=t_exit,
                point=res.y_events[1][0][:d],
                integral=float(res.y_events[1][0][d]),
            )
        if res.status != 0:
            raise HitTimeError(f"integration failed: {res.message}")
        t_start = float(res.t[-1])
        y_start = res.y[:, -1]
        horizon *= 2.0
        if abs(t_start - 0.0) + horizon > max_horizon:
            raise HitTimeError(
                f"zero level set not reached within horizon {max_horizon:g} from {x}"
            )


def hit_time(
    field: PotentialField,
    x,
    box: Box,
    min_gradient: float = None,
    rtol: float = TOL_ODE,
    tol_root: float = TOL_ROOT,
) -> float:
    """Signed time tau with u(X(tau, x)) = 0. Opposite in sign to u(x)."""
    hit = flow_to_level_set(
        field, x, box, min_gradient=min_gradient, rtol=rtol, tol_root=tol_root
    )
    return hit.tau


def semigroup_defect(
    field: PotentialField, x, s: float, t: float, box: Box, rtol: float = TOL_ODE
) -> float:
    """|X(s + t, x) - X(s, X(t, x))|, a consistency check on the integrator."""
    x = np.asarray(x, dtype=float)
    direct = integrate_flow(field, x, s + t, box, rtol=rtol).final_point
    mid = integrate_flow(field, x, t, box, rtol=rtol).final_point
    chained = integrate_flow(field, mid, s, box, rtol=rtol).final_point
    return float(np.linalg.norm(direct - chained))


@dataclass(frozen=True)
class TransitTimes:
    """Entry and exit times of a trajectory through a region (entry < 0 < exit)."""

    tau_minus: float
    tau_plus: float
    entry_point: np.ndarray
    exit_point: np.ndarray
    entry_integral: float
    exit_integral: float


def transit_times(
    field: PotentialField,
    x,
    region: Box,
    rtol: float = TOL_ODE,
    max_horizon: float = 1e3,
) -> TransitTimes:
    """Entry and exit of the trajectory through `x` across a box region.

    Integrates forward until the trajectory leaves the region (exit, tau_plus)
    and backward likewise (entry, tau_minus); for interior start points
    tau_minus < 0 < tau_plus. The integrals are the Laplacian line integrals
    accumulated from x to each crossing.
    """
    x = np.asarray(x, dtype=float)
    if not region.contains(x):
        raise DomainExitError(f"start point {x} lies outside the region")
    crossings = []
    for sign in (1.0, -1.0):
        try:
            integrate_flow(field, x, sign * max_horizon, region, rtol=rtol)
        except DomainExitError as exc:
            crossings.append((float(exc.time), exc.point, float(exc.integral)))
        else:
            raise HitTimeError(
                f"trajectory never left the region within time {max_horizon:g}"
            )
    (tau_plus, exit_point, exit_integral) = crossings[0]
    (tau_minus, entry_point, entry_integral) = crossings[1]
    return TransitTimes(
        tau_minus=tau_minus,
        tau_plus=tau_plus,
        entry_point=entry_point,
        exit_point=exit_point,
        entry_integral=entry_integral,
        exit_integral=exit_integral,
    )


@dataclass(frozen=True)
class FlowDensityReport:
    """Spread of the per-trajectory volume factors after time t.

    Each trajectory contributes exp(-I(t)), the reciprocal of its Jacobian
    volume factor; the theoretical envelope is exp(+/- t * sup|lap u|).
    """

    t: float
    r_min: float
    r_max: float
    lap_sup: float
    lower_bound: float
    upper_bound: float
    samples: int
    note: str = _AE_CAVEAT


def estimate_flow_density(
    field: PotentialField,
    t: float,
    region: Box,
    box: Box,
    samples: int = 1000,
    rtol: float = TOL_ODE,
) -> FlowDensityReport:
    """Sample start points in `region`, flow for time t, report density spread.

    The start plan is a deterministic low-discrepancy lattice so repeated runs
    give identical output.
    """
    starts = region.lattice(samples)
    r_values = np.empty(len(starts))
    lap_sup = 0.0
    for i, x0 in enumerate(starts):
        traj = integrate_flow(field, x0, t, box, rtol=rtol)
        r_values[i] = np.exp(-traj.final_integral)
        lap_sup = max(lap_sup, float(np.max(np.abs(field.laplacian_many(traj.points)))))
    return FlowDensityReport(
        t=t,
        r_min=float(np.min(r_values)),
        r_max=float(np.max(r_values)),
        lap_sup=lap_sup,
        lower_bound=float(np.exp(-abs(t) * lap_sup)),
        upper_bound=float(np.exp(abs(t) * lap_sup)),
        samples=samples,
    )

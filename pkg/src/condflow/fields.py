"""Scalar potentials with exact gradients and Laplacians.

A potential is immutable after construction and evaluation is pure, so fields
may be shared freely between threads. Batch methods take (N, d) arrays and are
the fast path; scalar methods wrap them.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import minimize

from . import expressions
from .errors import CertificationError, EvaluationDomainError
from .geometry import Box

__all__ = [
    "PotentialField",
    "ExpressionField",
    "SampledGridField",
    "MollifierSpec",
    "MollifiedField",
    "mollify",
    "evaluate",
    "GradientBoundReport",
    "GradientCertificate",
    "check_gradient_bound",
    "certify",
]


class PotentialField:
    """Base class. Subclasses override the batch methods.

    `dimension` is the number of spatial variables. `domain_box` is the region
    the field can be evaluated on, or None for everywhere.
    """

    dimension: int
    domain_box = None

    # -- batch interface -----------------------------------------------------

    def value_many(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient_many(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def laplacian_many(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- scalar convenience --------------------------------------------------

    def value(self, x) -> float:
        return float(self.value_many(np.asarray(x, float)[None, :])[0])

    def gradient(self, x) -> np.ndarray:
        return self.gradient_many(np.asarray(x, float)[None, :])[0]

    def laplacian(self, x) -> float:
        return float(self.laplacian_many(np.asarray(x, float)[None, :])[0])

    def eval(self, x):
        """Value, gradient, and Laplacian at one point."""
        return self.value(x), self.gradient(x), self.laplacian(x)

    # -- structure hints used by exact code paths ----------------------------

    def constant_gradient(self):
        """The gradient vector if it is constant in space, else None."""
        return None

    def constant_laplacian(self):
        """The Laplacian if it is constant in space, else None."""
        return None


def evaluate(field: PotentialField, x):
    """Triple (u, grad u, lap u) at x."""
    return field.eval(x)


def _as_points(points, dimension):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != dimension:
        raise ValueError(f"expected (N, {dimension}) points, got shape {pts.shape}")
    return pts


class ExpressionField(PotentialField):
    """Potential defined by an expression over x1..xd.

    The gradient and Laplacian are exact tree derivatives computed once at
    construction, not finite differences.

    Parameters
    ----------
    source : str or expressions.Node
        Expression text, e.g. ``"x1 + x2^2/4"``.
    dimension : int
        Number of variables the expression may use.
    """

    def __init__(self, source, dimension: int, names=None):
        self.dimension = int(dimension)
        names = names if names is not None else expressions.default_names(dimension)
        if isinstance(source, expressions.Node):
            self.tree = source
            self.source = str(source)
        else:
            self.source = source
            self.tree = expressions.parse(source, names)
        self._grad_trees = [self.tree.diff(i) for i in range(self.dimension)]
        lap = expressions.Num(0.0)
        for i, g in enumerate(self._grad_trees):
            lap = expressions.add(lap, g.diff(i))
        self._lap_tree = lap

    def __repr__(self):
        return f"ExpressionField({self.source!r}, dimension={self.dimension})"

    def value_many(self, points):
        pts = _as_points(points, self.dimension)
        out = self.tree.evaluate(pts)
        return np.broadcast_to(np.asarray(out, float), (len(pts),)).copy()

    def gradient_many(self, points):
        pts = _as_points(points, self.dimension)
        cols = [
            np.broadcast_to(np.asarray(g.evaluate(pts), float), (len(pts),))
            for g in self._grad_trees
        ]
        return np.stack(cols, axis=-1)

    def laplacian_many(self, points):
        pts = _as_points(points, self.dimension)
        out = self._lap_tree.evaluate(pts)
        return np.broadcast_to(np.asarray(out, float), (len(pts),)).copy()

    def constant_gradient(self):
        if all(isinstance(g, expressions.Num) for g in self._grad_trees):
            return np.array([g.value for g in self._grad_trees])
        return None

    def constant_laplacian(self):
        if isinstance(self._lap_tree, expressions.Num):
            return self._lap_tree.value
        return None


class AffinePotential(PotentialField):
    """Linear potential c . x + b with the coefficients kept as given.

    Coefficients may be Fractions; `exact_coefficients` preserves them so
    face classification and flux matching on piecewise-linear potentials can
    run in rational arithmetic with no tolerance at all. Evaluation converts
    to float.
    """

    def __init__(self, coefficients, constant=0):
        self.exact_coefficients = tuple(coefficients)
        self.exact_constant = constant
        self.dimension = len(self.exact_coefficients)
        self._coeffs = np.array([float(c) for c in self.exact_coefficients])
        self._const = float(constant)

    def __repr__(self):
        return f"AffinePotential({self.exact_coefficients}, constant={self.exact_constant})"

    def value_many(self, points):
        pts = _as_points(points, self.dimension)
        return pts @ self._coeffs + self._const

    def gradient_many(self, points):
        pts = _as_points(points, self.dimension)
        return np.broadcast_to(self._coeffs, (len(pts), self.dimension)).copy()

    def laplacian_many(self, points):
        pts = _as_points(points, self.dimension)
        return np.zeros(len(pts))

    def constant_gradient(self):
        return self._coeffs.copy()

    def constant_laplacian(self):
        return 0.0


class SampledGridField(PotentialField):
    """Potential stored on a regular grid and interpolated multilinearly.

    Gradient and Laplacian grids come from second-order central differences of
    the stored values, so derivative accuracy is O(h^2) in the interior.
    """

    def __init__(self, box: Box, shape, values=None, source: PotentialField = None):
        self.box = box
        self.domain_box = box
        self.dimension = box.dimension
        self.shape = tuple(int(s) for s in shape)
        axes = [np.linspace(box.lo[i], box.hi[i], self.shape[i]) for i in range(self.dimension)]
        self._axes = axes
        if values is None:
            if source is None:
                raise ValueError("provide grid values or a source field")
            pts = box.grid(self.shape)
            values = source.value_many(pts).reshape(self.shape)
        self.values = np.asarray(values, dtype=float).reshape(self.shape)
        spacings = [ax[1] - ax[0] for ax in axes]
        grads = np.gradient(self.values, *axes, edge_order=2)
        if self.dimension == 1:
            grads = [grads]
        lap = np.zeros_like(self.values)
        for i, h in enumerate(spacings):
            lap += self._second_difference(self.values, i, h)
        self._interp_u = RegularGridInterpolator(axes, self.values, method="linear")
        self._interp_g = [RegularGridInterpolator(axes, g, method="linear") for g in grads]
        self._interp_l = RegularGridInterpolator(axes, lap, method="linear")

    @staticmethod
    def _second_difference(values, axis, h):
        d2 = np.zeros_like(values)
        n = values.shape[axis]
        sl = [slice(None)] * values.ndim

        def at(idx):
            s = list(sl)
            s[axis] = idx
            return tuple(s)

        d2[at(slice(1, n - 1))] = (
            values[at(slice(2, n))] - 2.0 * values[at(slice(1, n - 1))] + values[at(slice(0, n - 2))]
        ) / (h * h)
        # one-sided copies at the edges keep the field defined on the whole box
        d2[at(0)] = d2[at(1)]
        d2[at(n - 1)] = d2[at(n - 2)]
        return d2

    def _call(self, interp, points):
        try:
            return interp(points)
        except ValueError as exc:
            raise EvaluationDomainError(f"point outside the sampled grid: {exc}") from None

    def value_many(self, points):
        return self._call(self._interp_u, _as_points(points, self.dimension))

    def gradient_many(self, points):
        pts = _as_points(points, self.dimension)
        return np.stack([self._call(g, pts) for g in self._interp_g], axis=-1)

    def laplacian_many(self, points):
        return self._call(self._interp_l, _as_points(points, self.dimension))


@dataclass(frozen=True)
class MollifierSpec:
    """Smoothing kernel: radial bump of the given width, unit mass.

    The kernel exp(-1/(1 - (|y|/width)^2)) is supported on the open ball of
    radius `width`. Discretization uses a tensor Gauss grid with
    `points_per_axis` nodes per axis; nodes outside the ball get zero weight
    and are dropped, and the remaining weights are normalized to sum exactly
    to 1.
    """

    width: float
    points_per_axis: int = 9
    _cache: dict = dataclass_field(default_factory=dict, repr=False, compare=False)

    def stencil(self, dimension: int):
        """Offsets (S, d) and nonnegative weights (S,) summing to 1."""
        if dimension in self._cache:
            return self._cache[dimension][:2]
        self._build(dimension)
        return self._cache[dimension][:2]

    def derivative_stencil(self, dimension: int):
        """Offsets (S, d), gradient weights (S, d), Laplacian weights (S,).

        These differentiate the kernel, not the smoothed function: pairing
        them with base-field values realizes u * grad(phi) and u * lap(phi),
        so they stay meaningful when the base derivatives jump or fail to
        exist along kinks. Calibrated so gradients of affine fields and
        Laplacians of quadratics come out exactly.
        """
        if dimension in self._cache:
            return self._cache[dimension][0], *self._cache[dimension][2:]
        self._build(dimension)
        return self._cache[dimension][0], *self._cache[dimension][2:]

    def _build(self, dimension: int):
        g, w = np.polynomial.legendre.leggauss(self.points_per_axis)
        g = g * self.width
        w = w * self.width
        grids = np.meshgrid(*([g] * dimension), indexing="ij")
        offsets = np.stack([m.ravel() for m in grids], axis=-1)
        wgrid = np.ones(len(offsets))
        for i in range(dimension):
            wgrid = wgrid * np.meshgrid(*([w] * dimension), indexing="ij")[i].ravel()
        s = np.sum(offsets**2, axis=1) / (self.width**2)
        kernel = np.zeros(len(offsets))
        inside = s < 1.0
        kernel[inside] = np.exp(-1.0 / (1.0 - s[inside]))
        weights = wgrid * kernel
        keep = weights > 0
        offsets, wgrid, kernel, s = offsets[keep], wgrid[keep], kernel[keep], s[keep]
        mass = np.sum(wgrid * kernel)
        values = wgrid * kernel / mass

        # kernel derivatives: phi = exp(psi(s)), psi = -1/(1 - s), s = |y|^2/w^2
        w2 = self.width**2
        psi_s = -1.0 / (1.0 - s) ** 2
        psi_ss = -2.0 / (1.0 - s) ** 3
        grad_kernel = kernel[:, None] * psi_s[:, None] * (2.0 * offsets / w2)
        lap_kernel = kernel * (
            psi_s * 2.0 * dimension / w2 + (psi_s**2 + psi_ss) * 4.0 * s / w2
        )
        grads = wgrid[:, None] * grad_kernel / mass
        laps = wgrid * lap_kernel / mass

        # gradient calibration: zero total weight, then an exact first moment,
        # which makes affine fields differentiate exactly
        grads = grads - values[:, None] * np.sum(grads, axis=0)
        moment = -np.einsum("sj,sk->jk", grads, offsets)
        grads = grads @ np.linalg.inv(moment)

        # Laplacian calibration: kill the 0th and 1st moments, then scale so
        # |y|^2 maps to 2 * dimension; quadratics then come out exactly
        laps = laps - values * np.sum(laps)
        laps = laps + grads @ np.sum(laps[:, None] * offsets, axis=0)
        laps = laps * (2.0 * dimension / np.sum(laps * np.sum(offsets**2, axis=1)))

        self._cache[dimension] = (offsets, values, grads, laps)


class MollifiedField(PotentialField):
    """Discrete convolution of a base potential with a mollifier stencil.

    All three quantities are quadratures against the kernel: values pair base
    values with kernel weights, while gradients and Laplacians pair base
    values with kernel-derivative weights. The base field never has to supply
    a derivative, so a kink in the base gradient shows up here as a smeared
    but continuous profile instead of a jump, and the distributional part of
    a kinked Laplacian is captured rather than skipped.
    """

    def __init__(self, base: PotentialField, spec: MollifierSpec):
        self.base = base
        self.spec = spec
        self.dimension = base.dimension
        self._offsets, self._weights = spec.stencil(self.dimension)
        _, self._grad_weights, self._lap_weights = spec.derivative_stencil(
            self.dimension
        )
        if base.domain_box is not None:
            self.domain_box = Box(
                base.domain_box.lo + spec.width, base.domain_box.hi - spec.width
            )

    def _check_domain(self, pts):
        if self.base.domain_box is None:
            return
        lo, hi = self.domain_box.lo, self.domain_box.hi
        if np.any(pts < lo - 1e-14) or np.any(pts > hi + 1e-14):
            raise EvaluationDomainError(
                "mollifier stencil extends outside the base field's evaluable region"
            )

    def _spread(self, pts):
        # (N, S, d) points shifted by every stencil offset, flattened
        return (pts[:, None, :] - self._offsets[None, :, :]).reshape(-1, self.dimension)

    def value_many(self, points):
        pts = _as_points(points, self.dimension)
        self._check_domain(pts)
        vals = self.base.value_many(self._spread(pts)).reshape(len(pts), -1)
        return vals @ self._weights

    def gradient_many(self, points):
        pts = _as_points(points, self.dimension)
        self._check_domain(pts)
        vals = self.base.value_many(self._spread(pts)).reshape(len(pts), -1)
        return vals @ self._grad_weights

    def laplacian_many(self, points):
        pts = _as_points(points, self.dimension)
        self._check_domain(pts)
        vals = self.base.value_many(self._spread(pts)).reshape(len(pts), -1)
        return vals @ self._lap_weights


def mollify(base: PotentialField, width: float, points_per_axis: int = 9) -> MollifiedField:
    """Smooth `base` with a radial bump kernel of the given width."""
    return MollifiedField(base, MollifierSpec(width, points_per_axis))


# ---------------------------------------------------------------------------
# Gradient lower bounds


@dataclass(frozen=True)
class GradientBoundReport:
    """Outcome of a gradient lower-bound scan over a box."""

    ok: bool
    m: float
    worst_point: np.ndarray
    threshold: float
    samples: int
    note: str = "bound certified on the sample plan of the declared box only"


@dataclass(frozen=True)
class GradientCertificate:
    """Witness that |grad u| stayed above `m` on the scanned box."""

    box: Box
    m: float
    report: GradientBoundReport


def check_gradient_bound(
    field: PotentialField,
    box: Box,
    samples: int = 10_000,
    threshold: float = 1e-6,
    polish: bool = True,
) -> GradientBoundReport:
    """Scan |grad u| over a deterministic lattice and report the minimum.

    The lattice minimum is refined by a bounded local minimization started
    from the few lowest sample points, so interior minima are located to far
    better accuracy than the lattice spacing. The result is still a sampled
    bound, not a proof.
    """
    pts = box.lattice(samples)
    norms = np.linalg.norm(field.gradient_many(pts), axis=1)
    order = np.argsort(norms)
    best = float(norms[order[0]])
    best_point = pts[order[0]]

    if polish:
        bounds = list(zip(box.lo, box.hi))

        def objective(x):
            g = field.gradient(np.asarray(x))
            return float(g @ g)

        for idx in order[:3]:
            res = minimize(
                objective,
                pts[idx],
                method="Powell",
                bounds=bounds,
                options={"xtol": 1e-12, "ftol": 1e-14, "maxiter": 200},
            )
            cand = float(np.sqrt(max(res.fun, 0.0)))
            if cand < best:
                best = cand
                best_point = np.asarray(res.x, dtype=float)

    return GradientBoundReport(
        ok=best >= threshold,
        m=best,
        worst_point=best_point,
        threshold=threshold,
        samples=samples,
    )


def certify(
    field: PotentialField,
    box: Box,
    samples: int = 10_000,
    threshold: float = 1e-6,
) -> GradientCertificate:
    """Certificate that the gradient stays away from zero on `box`.

    Raises CertificationError when the scanned minimum falls below the
    threshold, reporting the offending point.
    """
    report = check_gradient_bound(field, box, samples=samples, threshold=threshold)
    if not report.ok:
        raise CertificationError(
            f"|grad u| drops to {report.m:.3e} near {report.worst_point} "
            f"(threshold {report.threshold:.1e})"
        )
    return GradientCertificate(box=box, m=report.m, report=report)

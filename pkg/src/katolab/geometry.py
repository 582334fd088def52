"""Discretized model manifolds: measures, divergence-form Laplacians, curvature.

Three model families are supported:

* ``warped_product``: metric dr^2 + w(r)^2 g_{S^{n-1}} on an interval
  [0, R], reduced to the radial coordinate.  The measure density is
  sigma_{n-1} w(r)^{n-1} and radial functions see the operator
  -(J u')'/J with J = w^{n-1}.  A ``pole`` endpoint closes the model
  smoothly (w = 0, w' = 1 there); ``reflecting`` truncates it with a
  Neumann wall and is flagged as an approximation in reports.
* ``conformal_circle``: a circle of given length carrying the weighted
  structure (e^{2u} dtheta, e^{-2u} d^2/dtheta^2).  One-dimensional, so
  its Ricci tensor vanishes; it is the clean spectral test bed.
* ``conformal_torus_2d``: the flat periodic square with metric
  e^{2u} g_flat.  In two dimensions the Dirichlet energy is conformally
  invariant, so the conductances are the flat ones and only the node
  weights carry e^{2u}; the Laplacian is e^{-2u} times the flat one and
  the Gauss curvature is K = e^{-2u} Delta_flat u under the non-negative
  Laplacian convention.

All Laplacians are assembled in divergence form from per-edge
conductances and per-node volume weights, so symmetry with respect to
the volume inner product and positive semi-definiteness hold by
construction.  The sign convention is the geometer's non-negative
Laplacian throughout; semigroups are e^{-t Delta}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.integrate
import scipy.sparse

from .profiles import Profile1D, Profile2D

WARPED = "warped_product"
CIRCLE = "conformal_circle"
TORUS = "conformal_torus_2d"

POLE_TOL = 1e-8

# 5-point Gauss-Legendre on [0, 1]
_GL_X = np.array(
    [0.04691007703066800, 0.23076534494715845, 0.5, 0.76923465505284155, 0.95308992296933200]
)
_GL_W = np.array(
    [0.11846344252809454, 0.23931433524968324, 0.28444444444444444, 0.23931433524968324, 0.11846344252809454]
)


def sphere_area(n: int) -> float:
    """Area of the unit (n-1)-sphere."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def ball_volume_constant(n: int) -> float:
    """Lebesgue volume of the unit ball in R^n."""
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


@dataclass(frozen=True)
class GeometrySpec:
    """Recipe for a discretized model manifold.

    ``extent`` is the interval length R for warped products, the
    circumference for circles and the side length for the torus.
    ``endpoints`` only applies to warped products.
    """

    kind: str
    dimension: int
    resolution: int
    extent: float
    profile: Optional[object] = None  # Profile1D (warped/circle) or Profile2D (torus)
    endpoints: tuple = ("pole", "pole")

    def validate(self):
        if self.kind not in (WARPED, CIRCLE, TORUS):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.resolution < 16:
            raise ValueError("resolution must be at least 16")
        if self.extent <= 0:
            raise ValueError("domain extent must be positive")
        if self.kind == WARPED:
            if self.dimension < 2:
                raise ValueError("warped products need dimension >= 2")
            if self.profile is None:
                raise ValueError("warped products need a warp profile")
            for end in self.endpoints:
                if end not in ("pole", "reflecting"):
                    raise ValueError(f"bad endpoint condition {end!r}")
        elif self.kind == CIRCLE:
            # a circle is genuinely one-dimensional; the n >= 2 rule is
            # relaxed for this kind only (its Ricci tensor vanishes)
            if self.dimension != 1:
                raise ValueError("conformal_circle has dimension 1")
        elif self.kind == TORUS:
            if self.dimension != 2:
                raise ValueError("conformal_torus_2d has dimension 2")


@dataclass
class ModelGeometry:
    """A built model: grid, measure, conductances and curvature fields.

    ``nodes`` holds radial coordinates (1-D kinds) or (m^2, 2) grid
    coordinates (torus).  ``ricci_lower`` is the signed lowest Ricci
    eigenvalue per node and ``ric_minus`` its negative part, clipped at
    zero.  ``gauss_curvature`` is the signed scalar curvature for
    two-dimensional kinds and ``None`` otherwise.
    """

    spec: GeometrySpec
    nodes: np.ndarray
    volume_weights: np.ndarray
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_c: np.ndarray
    ric_minus: np.ndarray
    ricci_lower: np.ndarray
    gauss_curvature: Optional[np.ndarray]
    h: float
    interior: np.ndarray
    _stiffness: scipy.sparse.csr_matrix = field(repr=False, default=None)

    # -- basic calculus ------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.volume_weights.shape[0]

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    @property
    def stiffness(self) -> scipy.sparse.csr_matrix:
        return self._stiffness

    @property
    def total_volume(self) -> float:
        return float(self.volume_weights.sum())

    @property
    def is_closed(self) -> bool:
        if self.spec.kind in (CIRCLE, TORUS):
            return True
        return self.spec.endpoints == ("pole", "pole")

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        """Non-negative divergence-form Laplacian applied to a field."""
        return (self._stiffness @ u) / self.volume_weights

    def gamma(self, u: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
        """Pointwise squared gradient (carre du champ) of the operator.

        gamma(u, v)_i = (1 / 2 nu_i) sum_{j ~ i} c_ij (u_i - u_j)(v_i - v_j),
        which integrates exactly to the Dirichlet form and is O(h^2)
        consistent with <du, dv>_g at interior nodes.
        """
        if v is None:
            v = u
        du = u[self.edge_i] - u[self.edge_j]
        dv = v[self.edge_i] - v[self.edge_j]
        contrib = self.edge_c * du * dv
        out = np.zeros_like(self.volume_weights)
        np.add.at(out, self.edge_i, contrib)
        np.add.at(out, self.edge_j, contrib)
        return out / (2.0 * self.volume_weights)

    def dirichlet(self, u: np.ndarray, v: np.ndarray | None = None) -> float:
        """Dirichlet energy sum_edges c (du)(dv)."""
        if v is None:
            v = u
        du = u[self.edge_i] - u[self.edge_j]
        dv = v[self.edge_i] - v[self.edge_j]
        return float(np.sum(self.edge_c * du * dv))

    def integrate(self, u: np.ndarray) -> float:
        return float(np.dot(self.volume_weights, u))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.dot(self.volume_weights, u * v))

    def third_derivative_scale(self, u: np.ndarray) -> float:
        """Crude max |d^3 u| estimate used to scale pointwise tolerances."""
        if self.spec.kind == TORUS:
            m = int(round(math.sqrt(self.n_nodes)))
            grid = u.reshape(m, m)
            d3x = grid - 3 * np.roll(grid, -1, 0) + 3 * np.roll(grid, -2, 0) - np.roll(grid, -3, 0)
            d3y = grid - 3 * np.roll(grid, -1, 1) + 3 * np.roll(grid, -2, 1) - np.roll(grid, -3, 1)
            return float(max(np.abs(d3x).max(), np.abs(d3y).max()) / self.h**3)
        if self.spec.kind == CIRCLE:
            d3 = u - 3 * np.roll(u, -1) + 3 * np.roll(u, -2) - np.roll(u, -3)
            return float(np.abs(d3).max() / self.h**3)
        d3 = u[3:] - 3 * u[2:-1] + 3 * u[1:-2] - u[:-3]
        return float(np.abs(d3).max() / self.h**3) if d3.size else 0.0


def as_field(geom: ModelGeometry, values) -> np.ndarray:
    """Validate and return per-node field values."""
    arr = np.asarray(values, dtype=float)
    if arr.shape != (geom.n_nodes,):
        raise ValueError(f"field has shape {arr.shape}, expected ({geom.n_nodes},)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field contains non-finite values")
    return arr


# -- assembly ----------------------------------------------------------


def _cell_integral(fn, a: float, b: float) -> float:
    if b <= a:
        return 0.0
    xs = a + (b - a) * _GL_X
    return float((b - a) * np.dot(_GL_W, fn(xs)))


def _build_warped(spec: GeometrySpec) -> ModelGeometry:
    n = spec.dimension
    m = spec.resolution
    w = spec.profile
    r = np.linspace(0.0, spec.extent, m)
    h = r[1] - r[0]
    sigma = sphere_area(n)

    for side, end in zip((0.0, spec.extent), spec.endpoints):
        if end == "pole":
            w0 = float(np.asarray(w.value(np.array([side])))[0])
            slope = float(np.asarray(w.d1(np.array([side])))[0])
            want = 1.0 if side == 0.0 else -1.0
            if abs(w0) > POLE_TOL or abs(slope - want) > POLE_TOL:
                raise ValueError(
                    f"pole closure violated at r={side}: w={w0:.3e}, w'={slope:.3e}"
                )

    # positivity of the warp away from poles
    probe = np.linspace(h / 2.0, spec.extent - h / 2.0, 4 * m)
    if np.min(w.value(probe)) <= 0.0:
        raise ValueError("warp function must be positive on the open domain")

    def density(s):
        return sigma * np.maximum(w.value(np.asarray(s)), 0.0) ** (n - 1)

    weights = np.empty(m)
    for i in range(m):
        a = max(0.0, r[i] - h / 2.0)
        b = min(spec.extent, r[i] + h / 2.0)
        weights[i] = _cell_integral(density, a, b)
    if np.min(weights) <= 0.0:
        raise ValueError("degenerate volume weights; raise the resolution")

    mid = r[:-1] + h / 2.0
    cond = density(mid) / h
    edge_i = np.arange(m - 1)
    edge_j = edge_i + 1

    ric_lower = _warped_ricci_lower(spec, r, h)
    gauss = None
    if n == 2:
        # for a surface of revolution the single curvature is -w''/w
        gauss = ric_lower.copy()

    # pointwise-margin interior: the 1-D reduction degenerates at the
    # coordinate ends (cells see O(1) relative variation of J near a
    # pole), so a fixed 5% collar at each end is excluded; keeping the
    # collar resolution-independent keeps refinement orders clean
    collar = 0.05 * spec.extent
    interior = (r > collar) & (r < spec.extent - collar)

    return _finalize(spec, r, weights, edge_i, edge_j, cond, ric_lower, gauss, h, interior)


def _warped_ricci_lower(spec: GeometrySpec, r: np.ndarray, h: float) -> np.ndarray:
    """Signed lowest Ricci eigenvalue; radial -(n-1)w''/w against
    tangential -w''/w + (n-2)(1-w'^2)/w^2."""
    n = spec.dimension
    w = spec.profile
    wv = w.value(r)
    w1 = w.d1(r)
    w2 = w.d2(r)
    # evaluate only where w is safely away from a pole zero
    safe = np.abs(wv) > 1e-7 * max(1.0, float(np.max(np.abs(wv))))
    lower = np.empty_like(wv)
    with np.errstate(divide="ignore", invalid="ignore"):
        radial = -(n - 1) * w2 / wv
        tangential = -w2 / wv + (n - 2) * (1.0 - w1**2) / wv**2
        both = np.minimum(radial, tangential)
    lower[safe] = both[safe]
    if not np.all(safe):
        # pole nodes: 0/0 limits; copy the nearest interior value (O(h))
        idx = np.where(safe)[0]
        if idx.size == 0:
            raise ValueError("warp function vanishes everywhere")
        for i in np.where(~safe)[0]:
            lower[i] = lower[idx[np.argmin(np.abs(idx - i))]]
    if not np.all(np.isfinite(lower)):
        raise ValueError("Ricci eigenvalues not finite; check the warp profile")
    return lower


def _build_circle(spec: GeometrySpec) -> ModelGeometry:
    m = spec.resolution
    h = spec.extent / m
    theta = np.arange(m) * h
    u = np.zeros(m) if spec.profile is None else np.asarray(spec.profile.value(theta))
    weights = np.exp(2.0 * u) * h
    edge_i = np.arange(m)
    edge_j = (edge_i + 1) % m
    cond = np.full(m, 1.0 / h)
    zeros = np.zeros(m)
    interior = np.ones(m, dtype=bool)
    return _finalize(spec, theta, weights, edge_i, edge_j, cond, zeros, None, h, interior)


def _build_torus(spec: GeometrySpec) -> ModelGeometry:
    m = spec.resolution
    h = spec.extent / m
    axis = np.arange(m) * h
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    prof = spec.profile
    if prof is None:
        u = np.zeros(m * m)
        lap_flat_u = np.zeros(m * m)
    elif isinstance(prof, Profile2D):
        u = prof.value(X, Y).ravel()
        # non-negative convention: Delta_flat u = -(u_xx + u_yy)
        lap_flat_u = -(prof.dxx(X, Y) + prof.dyy(X, Y)).ravel()
    else:
        u = np.asarray(prof, dtype=float).ravel()
        if u.shape != (m * m,):
            raise ValueError("sampled torus exponent has the wrong shape")
        grid = u.reshape(m, m)
        lap_flat_u = -(
            (np.roll(grid, -1, 0) - 2 * grid + np.roll(grid, 1, 0)) / h**2
            + (np.roll(grid, -1, 1) - 2 * grid + np.roll(grid, 1, 1)) / h**2
        ).ravel()

    weights = np.exp(2.0 * u) * h * h

    idx = np.arange(m * m).reshape(m, m)
    right = np.roll(idx, -1, axis=0).ravel()
    up = np.roll(idx, -1, axis=1).ravel()
    flat = idx.ravel()
    edge_i = np.concatenate([flat, flat])
    edge_j = np.concatenate([right, up])
    edge_c = np.full(2 * m * m, 1.0)  # flat conductances: 2-D conformal invariance

    gauss = np.exp(-2.0 * u) * lap_flat_u
    ric_lower = gauss.copy()  # Ric = K g in dimension 2
    interior = np.ones(m * m, dtype=bool)
    return _finalize(spec, nodes, weights, edge_i, edge_j, edge_c, ric_lower, gauss, h, interior)


def _finalize(spec, nodes, weights, edge_i, edge_j, edge_c, ric_lower, gauss, h, interior):
    n_nodes = weights.shape[0]
    rows = np.concatenate([edge_i, edge_j, edge_i, edge_j])
    cols = np.concatenate([edge_j, edge_i, edge_i, edge_j])
    vals = np.concatenate([-edge_c, -edge_c, edge_c, edge_c])
    A = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))
    ric_minus = np.maximum(0.0, -ric_lower)
    return ModelGeometry(
        spec=spec,
        nodes=nodes,
        volume_weights=weights,
        edge_i=np.asarray(edge_i),
        edge_j=np.asarray(edge_j),
        edge_c=np.asarray(edge_c, dtype=float),
        ric_minus=ric_minus,
        ricci_lower=ric_lower,
        gauss_curvature=gauss,
        h=float(h),
        interior=interior,
        _stiffness=A,
    )


def build_geometry(spec: GeometrySpec) -> ModelGeometry:
    """Construct the discrete model described by ``spec``."""
    spec.validate()
    if spec.kind == WARPED:
        return _build_warped(spec)
    if spec.kind == CIRCLE:
        return _build_circle(spec)
    return _build_torus(spec)


def ricci_minus_field(geom: ModelGeometry) -> np.ndarray:
    """Negative part of the lowest Ricci eigenvalue, as a node field."""
    return geom.ric_minus.copy()


def ball_volume(geom: ModelGeometry, r: float) -> float:
    """Measure of the metric ball of radius r about the pole.

    Only pole-centered balls are supported: they reduce to the exact
    one-dimensional quadrature sigma_{n-1} int_0^r w(s)^{n-1} ds.
    """
    spec = geom.spec
    if spec.kind != WARPED or spec.endpoints[0] != "pole":
        raise ValueError("ball volumes need a warped model with a pole at r=0")
    if not 0.0 < r <= spec.extent:
        raise ValueError(f"radius {r} outside (0, {spec.extent}]")
    n = spec.dimension
    sigma = sphere_area(n)
    w = spec.profile
    val, _ = scipy.integrate.quad(
        lambda s: w.value(np.array([s]))[0] ** (n - 1), 0.0, r, limit=200
    )
    return sigma * val

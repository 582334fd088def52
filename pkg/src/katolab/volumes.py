"""Volume ratios, the comparison bound, almost monotonicity, and doubling.

The volume ratio of a pole-centered ball is
V(r) = nu(B_r) / (omega_n r^n).  On a certified weighted model the
comparison bound

    nu_bar(B_R) / nu_bar(B_r)  <=  e^{Cbar(N) kappa^2 R^2} (R/r)^N,
    Cbar(N) = (N-1)/4,  kappa^2 = -K/T,

holds for geodesic balls of the changed metric; with a radial conformal
factor those balls are exact reparametrizations of the base balls, so
no containment slack is needed.  Almost monotonicity is quantified by
the smallest constant C* with

    log(V(R)/V(r)) <= C* * (Phi(R) - Phi(r))

over admissible pairs r <= (1-eta) R; the classical monotone-ratio test
is the degenerate case Phi = 0.  C* estimates the structural constant
divided by log(1/(1-eta)), so C* * log(1/(1-eta)) should be stable
across eta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.integrate

from .geometry import ModelGeometry, ball_volume, ball_volume_constant
from .kato import KatoBoundFn, KatoProfile, phi_integral
from .time_change import ConformalData


@dataclass
class VolumeRatioCurve:
    """Ratios nu(B_r)/(omega_n r^n) about the pole on a radii grid."""

    radii: np.ndarray
    ratios: np.ndarray
    n: int
    omega_n: float
    center: str = "pole"

    def __post_init__(self):
        if np.any(self.ratios <= 0):
            raise ValueError("volume ratios must be positive")
        if np.any(np.diff(self.radii) <= 0):
            raise ValueError("radii must be increasing")


def volume_ratio_curve(geom: ModelGeometry, radii: Sequence[float]) -> VolumeRatioCurve:
    """Quadrature-exact volume ratios for pole-centered balls."""
    radii = np.asarray(radii, dtype=float)
    n = geom.dimension
    omega = ball_volume_constant(n)
    ratios = np.array([ball_volume(geom, float(r)) / (omega * r**n) for r in radii])
    return VolumeRatioCurve(radii=radii, ratios=ratios, n=n, omega_n=omega)


def comparison_volume(kappa: float, N: float, rho: float) -> float:
    """Comparison profile int_0^rho sinh^{N-1}(kappa s) ds.

    The kappa = 0 limit uses the convention rho^N / N (the integrand is
    taken against its leading power); only the derived ratio bound is
    load-bearing downstream.
    """
    if N < 1:
        raise ValueError("comparison dimension must be at least 1")
    if rho <= 0:
        raise ValueError("rho must be positive")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if kappa == 0.0:
        return rho**N / N
    val, _ = scipy.integrate.quad(
        lambda s: math.sinh(kappa * s) ** (N - 1), 0.0, rho,
        epsrel=1e-10, epsabs=0.0, limit=200,
    )
    return float(val)


def bg_constant(N: float) -> float:
    """Exponential prefactor constant (N-1)/4 in the ratio bound."""
    return (N - 1.0) / 4.0


@dataclass
class BGPair:
    r: float
    R: float
    ratio: float
    bound: float
    ok: bool


@dataclass
class BGReport:
    """Comparison-bound verdicts over a grid of radius pairs."""

    kappa: float
    N: float
    pairs: list
    violations: int
    worst_log_margin: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _radial_cumulatives(geom: ModelGeometry, conf: Optional[ConformalData]):
    """Cumulative changed distance and changed measure along the radius.

    Returns (r_grid, dbar, nubar_cumulative): dbar is the geodesic
    radius of the conformal metric and nubar the measure of the
    corresponding ball, both exact reparametrizations for radial f.
    """
    spec = geom.spec
    if spec.kind != "warped_product" or spec.endpoints[0] != "pole":
        raise ValueError("ratio bounds need a warped model with a pole at r=0")
    r = geom.nodes
    f = conf.f if conf is not None else np.zeros_like(r)
    ef = np.exp(f)
    dbar = scipy.integrate.cumulative_trapezoid(ef, r, initial=0.0)
    # measure of the pole ball in the changed structure: int e^{2f} dnu
    from .geometry import sphere_area

    n = spec.dimension
    density = sphere_area(n) * spec.profile.value(r) ** (n - 1) * np.exp(2.0 * f)
    nubar = scipy.integrate.cumulative_trapezoid(density, r, initial=0.0)
    return r, dbar, nubar


def bg_bound_check(geom: ModelGeometry, conf: Optional[ConformalData],
                   K_over_T: float, N: float,
                   n_pairs: int = 20, r_lo_frac: float = 0.05,
                   r_hi: Optional[float] = None) -> BGReport:
    """Check the ratio bound on an n_pairs x n_pairs grid of (r, R).

    Radii are geodesic radii of the changed metric, taken on grid nodes
    so ball measures carry only quadrature error.
    """
    if K_over_T > 1e-12:
        raise ValueError("the certificate lower bound must be nonpositive")
    kappa = math.sqrt(max(0.0, -K_over_T))
    r_grid, dbar, nubar = _radial_cumulatives(geom, conf)
    hi = dbar[-1] if r_hi is None else min(r_hi, dbar[-1])
    lo = r_lo_frac * hi
    # node indices whose changed radius spans [lo, hi]
    usable = np.where((dbar >= lo) & (dbar <= hi) & (nubar > 0))[0]
    if usable.size < n_pairs + 1:
        raise ValueError("not enough radial resolution for the pair grid")
    picks = usable[np.unique(np.linspace(0, usable.size - 1, 2 * n_pairs).astype(int))]
    cbar = bg_constant(N)
    pairs = []
    viol = 0
    worst = math.inf
    for a in range(picks.size):
        for b in range(a + 1, picks.size):
            i, j = picks[a], picks[b]
            r_, R_ = dbar[i], dbar[j]
            ratio = nubar[j] / nubar[i]
            bound = math.exp(cbar * kappa**2 * R_**2) * (R_ / r_) ** N
            log_margin = math.log(bound) - math.log(ratio)
            ok = log_margin >= -1e-9
            if not ok:
                viol += 1
            worst = min(worst, log_margin)
            pairs.append(BGPair(r=float(r_), R=float(R_), ratio=float(ratio),
                                bound=float(bound), ok=ok))
    return BGReport(kappa=kappa, N=N, pairs=pairs, violations=viol,
                    worst_log_margin=float(worst))


@dataclass
class MonotonicityReport:
    """Fitted almost-monotonicity constants, one per eta."""

    etas: list
    cstar: dict           # eta -> fitted C*
    cstar_scaled: dict    # eta -> C* log(1/(1-eta))
    exact_monotone: bool
    finite: bool
    worst_pair: dict
    pairs_checked: int


def _phi_difference(phi_fn: Callable[[float], float], r: float, R: float) -> float:
    return phi_fn(R) - phi_fn(r)


def make_phi_from_profile(profile: KatoProfile) -> Callable[[float], float]:
    """Phi differences from a measured Kato profile.

    Integrates k(s^2)/s with the monotone interpolant of the profile;
    only called on [r, R] ranges covered by the measured grid, so no
    zero-endpoint regularization is needed.
    """
    interp = profile.interpolator()
    t_lo = float(profile.times[0])

    def phi(tau: float) -> float:
        lo = math.sqrt(t_lo)
        if tau <= lo:
            # below the measured grid k is frozen at its smallest value
            return float(interp(t_lo)) * math.log(max(tau, 1e-300) / lo)
        val, _ = scipy.integrate.quad(
            lambda s: float(interp(s * s)) / s, lo, tau, limit=200
        )
        return val

    return phi


def make_phi_from_bound(bound: KatoBoundFn) -> Callable[[float], float]:
    return lambda tau: phi_integral(bound, tau)


def almost_monotonicity_check(geom: ModelGeometry,
                              phi_fn: Callable[[float], float],
                              radii: Sequence[float],
                              etas: Sequence[float] = (0.05, 0.1, 0.2),
                              curve: Optional[VolumeRatioCurve] = None) -> MonotonicityReport:
    """Fit the smallest C* with log(V(R)/V(r)) <= C* (Phi(R) - Phi(r)).

    Pairs obey r <= (1-eta) R per eta.  C* = 0 when the ratio curve is
    monotone (the classical comparison); C* = inf flags growth without
    Kato mass to explain it.
    """
    for eta in etas:
        if not 0.0 < eta < 1.0 - 1.0 / math.sqrt(2.0):
            raise ValueError(f"eta={eta} outside (0, 1 - 1/sqrt(2))")
    radii = np.asarray(radii, dtype=float)
    if curve is None:
        curve = volume_ratio_curve(geom, radii)
    logV = np.log(curve.ratios)
    phis = np.array([phi_fn(float(r)) for r in radii])
    pos_tol = 1e-11
    cstar = {}
    cstar_scaled = {}
    worst = {"eta": None, "r": None, "R": None, "cstar": 0.0}
    checked = 0
    finite = True
    any_growth = False
    for eta in etas:
        best = 0.0
        for j in range(len(radii)):
            for i in range(j):
                if radii[i] > (1.0 - eta) * radii[j]:
                    continue
                checked += 1
                growth = logV[j] - logV[i]
                if growth <= pos_tol:
                    continue
                any_growth = True
                dphi = phis[j] - phis[i]
                if dphi <= 0:
                    best = math.inf
                    finite = False
                    continue
                c = growth / dphi
                if c > best:
                    best = c
                    if c > worst["cstar"]:
                        worst = {"eta": eta, "r": float(radii[i]),
                                 "R": float(radii[j]), "cstar": float(c)}
        cstar[eta] = best
        cstar_scaled[eta] = best * math.log(1.0 / (1.0 - eta))
    return MonotonicityReport(
        etas=list(etas),
        cstar=cstar,
        cstar_scaled=cstar_scaled,
        exact_monotone=not any_growth,
        finite=finite,
        worst_pair=worst,
        pairs_checked=checked,
    )


@dataclass
class DoublingReport:
    """Doubling inequality nu(B_r) <= C (r/s)^N nu(B_s) over pairs."""

    N: float
    base_constant: float
    pairs: list
    violations: int
    worst_log_margin: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def doubling_check(geom: ModelGeometry, f_max: float, N: float,
                   K_over_T: float, pairs: Sequence[tuple]) -> DoublingReport:
    """Doubling with constants assembled from the realized f bound.

    The chain through the changed structure gives
    C(r) = e^{(N+2) f_max} exp(Cbar(N) kappa^2 e^{2 f_max} r^2) with
    kappa^2 = -K/T; for an unweighted certificate (f_max = 0, K = 0)
    this is the clean Bishop constant 1.
    """
    kappa2 = max(0.0, -K_over_T)
    cbar = bg_constant(N)
    base = math.exp((N + 2.0) * f_max)
    rows = []
    viol = 0
    worst = math.inf
    for s, r in pairs:
        if not s < r:
            raise ValueError("doubling pairs need s < r")
        c_r = base * math.exp(cbar * kappa2 * math.exp(2.0 * f_max) * r * r)
        lhs = ball_volume(geom, r)
        rhs = c_r * (r / s) ** N * ball_volume(geom, s)
        log_margin = math.log(rhs) - math.log(lhs)
        ok = log_margin >= -1e-9
        if not ok:
            viol += 1
        worst = min(worst, log_margin)
        rows.append(BGPair(r=float(s), R=float(r), ratio=float(lhs),
                           bound=float(rhs), ok=ok))
    return DoublingReport(N=N, base_constant=base, pairs=rows,
                          violations=viol, worst_log_margin=float(worst))

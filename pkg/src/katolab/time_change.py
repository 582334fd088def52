"""Conformal time change and Bakry-Emery certificate verification.

Parameter selection follows the two constructive regimes.  Under the
Dynkin condition k_T <= gamma < 1/(n-2):

    lambda = (n - 2 + 1/gamma)/2,      e^{-beta T} = (1 - (n-2) gamma)/2,
    q = 2 (n-2)^2 gamma / (1 - (n-2) gamma),

giving BE(K/T, n+q) with K = -2 beta T / lambda.  Under the sharper
condition k_T < 1/(3(n-2)) the statement-level certificate is

    K = -4 k_T,   N = n + 4 (n-2)^2 k_T,   C = 4 k_T,

backed by the proof-level choice beta = 1/T, lambda = (1-1/e)/k_T.  In
dimension two the gauge applies with lambda = 1/(2 k_T), beta T = log 2,
and the conformal metric has Gauss curvature >= -2 k_T log(4) / T.

The verifiers assemble every inequality from the discrete operators:
the carre du champ Gamma of the divergence-form Laplacian plays the
role of |du|^2, so Bochner-type margins are exact integrals by parts at
the grid level and converge at second order in the interior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import ModelGeometry
from .kato import dynkin_gamma_range, dprime_threshold
from .gauge import GaugeResult, gauge_phi
from .spectral import SpectralDecomposition


@dataclass(frozen=True)
class BEParameters:
    """Curvature-dimension certificate (K/T, N) with its gauge inputs.

    K is the dimensionless numerator: the certified lower bound is K/T.
    C bounds the conformal exponent f from above; lambda and beta are
    the gauge parameters; q = N - n.
    """

    K: float
    N: float
    C: float
    lam: float
    beta: float
    q: float
    n: int
    T: float
    regime: str

    @property
    def K_over_T(self) -> float:
        return self.K / self.T


def select_parameters_D(n: int, gamma: float, T: float) -> BEParameters:
    """Certificate under the Dynkin condition k_T <= gamma."""
    hi = dynkin_gamma_range(n)
    if not 0.0 < gamma < hi:
        raise ValueError(f"gamma={gamma} outside (0, {hi})")
    lam = 0.5 * (n - 2 + 1.0 / gamma)
    betaT = -math.log(0.5 * (1.0 - (n - 2) * gamma))
    denom = 1.0 - (n - 2) * gamma
    q = 2.0 * (n - 2) ** 2 * gamma / denom
    K = -2.0 * betaT / lam
    C = (math.log(2.0) + betaT) / lam
    return BEParameters(K=K, N=n + q, C=C, lam=lam, beta=betaT / T, q=q,
                        n=n, T=T, regime="D")


def select_parameters_Dprime(n: int, k_T: float, T: float) -> BEParameters:
    """Statement-level certificate under k_T < 1/(3(n-2)).

    Proof-level parameters beta = 1/T, lambda = (1-1/e)/k_T; the
    bridging inequalities 1/lambda <= 2 k_T, q <= 4 (n-2)^2 k_T and
    log(2e)/lambda <= 4 k_T are asserted on construction.
    """
    thr = dprime_threshold(n)
    if not k_T < thr:
        raise ValueError(f"k_T={k_T} not below the threshold {thr}")
    if k_T < 0:
        raise ValueError("k_T must be nonnegative")
    if k_T == 0.0:
        return BEParameters(K=0.0, N=float(n), C=0.0, lam=math.inf,
                            beta=1.0 / T, q=0.0, n=n, T=T, regime="Dprime")
    c1 = 1.0 - math.exp(-1.0)
    lam = c1 / k_T
    q = (n - 2) ** 2 * k_T / (c1 - (n - 2) * k_T)
    params = BEParameters(
        K=-4.0 * k_T,
        N=n + 4.0 * (n - 2) ** 2 * k_T,
        C=4.0 * k_T,
        lam=lam,
        beta=1.0 / T,
        q=q,
        n=n,
        T=T,
        regime="Dprime",
    )
    assert 1.0 / lam <= 2.0 * k_T + 1e-15
    assert q <= 4.0 * (n - 2) ** 2 * k_T + 1e-12
    assert math.log(2.0 * math.e) / lam <= 4.0 * k_T + 1e-12
    return params


def select_parameters_dim2(k_T: float, T: float) -> BEParameters:
    """Dimension-two certificate: any finite k_T is admissible.

    Gauge potential Ric_-/(2 k_T), so lambda = 1/(2 k_T) and
    e^{-beta T} = 1/2; the Gauss curvature of the conformal metric is
    bounded below by -2 k_T log(4)/T and N = 2.
    """
    if k_T < 0:
        raise ValueError("k_T must be nonnegative")
    if k_T == 0.0:
        return BEParameters(K=0.0, N=2.0, C=0.0, lam=math.inf,
                            beta=math.log(2.0) / T, q=0.0, n=2, T=T,
                            regime="dim2")
    lam = 1.0 / (2.0 * k_T)
    betaT = math.log(2.0)
    K = -2.0 * betaT / lam  # equals -2 k_T log 4
    C = (math.log(2.0) + betaT) / lam  # equals 2 k_T log 4
    return BEParameters(K=K, N=2.0, C=C, lam=lam, beta=betaT / T, q=0.0,
                        n=2, T=T, regime="dim2")


def c_transformation(n: int, q: float) -> float:
    """Coefficient c(n, q) = (n-2)(n+q-2)/q, with the q = inf limit n-2."""
    if n == 2:
        return 0.0
    if math.isinf(q):
        return float(n - 2)
    if q <= 0:
        raise ValueError("q must be positive (or inf) when n > 2")
    return (n - 2) * (n + q - 2) / q


@dataclass
class ConformalData:
    """Time-changed structure (e^{2f} g, e^{2f} nu) with operator handles.

    The Dirichlet form is invariant under the change, so the conformal
    operator is e^{-2f} Delta with the same conductances and weights
    scaled by e^{2f}.
    """

    geometry: ModelGeometry
    f: np.ndarray
    lam: float
    chain_residual: float = 0.0

    def __post_init__(self):
        self.scale = np.exp(2.0 * self.f)
        self.nu_bar = self.geometry.volume_weights * self.scale

    def L(self, u: np.ndarray) -> np.ndarray:
        return self.geometry.laplacian(u) / self.scale

    def gamma_bar(self, u: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
        return self.geometry.gamma(u, v) / self.scale


def build_conformal(geom: ModelGeometry, gauge: GaugeResult,
                    lam: float | None = None) -> ConformalData:
    """Conformal data from a gauge function: f = log(phi)/lambda >= 0.

    Also evaluates the chain-rule identity
    Delta f = Delta phi/(lambda phi) + lambda Gamma(f), whose discrete
    residual is second order on closed models; the max over interior
    nodes is recorded.
    """
    lam = gauge.lam if lam is None else lam
    phi = gauge.phi
    if np.min(phi) < 1.0 - 1e-6:
        raise ValueError(f"gauge function dips below 1: min {np.min(phi):.8f}")
    if math.isinf(lam):
        f = np.zeros_like(phi)
        residual = 0.0
    else:
        f = np.log(np.maximum(phi, 1.0)) / lam
        lhs = geom.laplacian(f)
        rhs = geom.laplacian(phi) / (lam * phi) + lam * geom.gamma(f)
        residual = float(np.max(np.abs((lhs - rhs)[geom.interior])))
    data = ConformalData(geometry=geom, f=f, lam=lam, chain_residual=residual)
    gauge.f = f
    return data


def trivial_conformal(geom: ModelGeometry) -> ConformalData:
    """Identity time change (f = 0)."""
    return ConformalData(geometry=geom, f=np.zeros(geom.n_nodes), lam=math.inf)


def build_test_suite(dec: SpectralDecomposition, count: int = 100,
                     modes: int = 12, rng=None) -> np.ndarray:
    """Seeded random low-mode combinations; rows are test functions."""
    if rng is None:
        rng = np.random.default_rng(0)
    m = min(modes, dec.mode_count)
    coeffs = rng.uniform(-1.0, 1.0, size=(count, m))
    return coeffs @ dec.eigenfields[:, :m].T


@dataclass
class MarginReport:
    """Pointwise margins of a curvature inequality over a test suite.

    A violation is a margin below -tol_grid at an interior node, where
    tol_grid = kappa_tol * h * (third-derivative scale of u); the raw
    worst margin is kept as well because its decay under refinement is
    the sharper diagnostic.
    """

    name: str
    n_functions: int
    min_margin: float
    violations: int
    checked: int
    tol_grid_max: float
    worst_function: int
    worst_node: int
    margin_quantiles: dict
    passed: bool
    histogram: tuple = ()  # (bin_edges, counts) over all interior margins

    @property
    def violation_magnitude(self) -> float:
        return max(0.0, -self.min_margin)


def _margin_report(name, margins_list, tols, interior) -> MarginReport:
    mins = []
    viol = 0
    checked = 0
    worst = (0.0, -1, -1)
    all_m = []
    for k, (marg, tol) in enumerate(zip(margins_list, tols)):
        m_int = marg[interior]
        all_m.append(m_int)
        mn = float(np.min(m_int)) if m_int.size else 0.0
        mins.append(mn)
        viol += int(np.sum(m_int < -tol))
        checked += m_int.size
        if mn < worst[0]:
            node = int(np.where(interior)[0][np.argmin(m_int)])
            worst = (mn, k, node)
    stacked = np.concatenate(all_m) if all_m else np.zeros(1)
    quant = {
        "q01": float(np.quantile(stacked, 0.01)),
        "q50": float(np.quantile(stacked, 0.50)),
        "q99": float(np.quantile(stacked, 0.99)),
    }
    return MarginReport(
        name=name,
        n_functions=len(margins_list),
        min_margin=float(min(mins)) if mins else 0.0,
        violations=viol,
        checked=checked,
        tol_grid_max=float(np.max(tols)) if len(tols) else 0.0,
        worst_function=worst[1],
        worst_node=worst[2],
        margin_quantiles=quant,
        passed=(viol == 0),
    )


def _tol_grid(geom: ModelGeometry, u: np.ndarray, kappa_tol: float) -> float:
    return kappa_tol * geom.h * geom.third_derivative_scale(u)


def verify_bochner_baseline(geom: ModelGeometry, suite: np.ndarray,
                            kappa_tol: float = 10.0) -> MarginReport:
    """Margins of the unweighted Bochner inequality.

    Gamma(Delta u, u) - Delta Gamma(u)/2 >= (Delta u)^2/n - Ric_- Gamma(u)
    at interior nodes, for every test function.
    """
    n = geom.dimension
    margins, tols = [], []
    for u in suite:
        lap = geom.laplacian(u)
        g2 = geom.gamma(lap, u) - 0.5 * geom.laplacian(geom.gamma(u))
        rhs = lap**2 / n - geom.ric_minus * geom.gamma(u)
        margins.append(g2 - rhs)
        tols.append(_tol_grid(geom, u, kappa_tol))
    return _margin_report("bochner_baseline", margins, tols, geom.interior)


def verify_transformation_rule(geom: ModelGeometry, conf: ConformalData,
                               q: float, suite: np.ndarray,
                               kappa_tol: float = 10.0) -> MarginReport:
    """Margins of the time-change transformation inequality.

    Gamma_bar(L u, u) - L Gamma_bar(u)/2
      >= (L u)^2/(n+q) + (-Ric_- + Delta f - c(n,q) Gamma(f)) e^{-2f} Gamma_bar(u)

    with c(n, q) = (n-2)(n+q-2)/q; q = inf drops the (L u)^2 term and
    sends c to n-2.
    """
    n = geom.dimension
    c = c_transformation(n, q)
    lap_f = geom.laplacian(conf.f)
    gamma_f = geom.gamma(conf.f)
    coeff = (-geom.ric_minus + lap_f - c * gamma_f) / conf.scale
    inv_nq = 0.0 if math.isinf(q) else 1.0 / (n + q)
    margins, tols = [], []
    for u in suite:
        Lu = conf.L(u)
        gbar_u = conf.gamma_bar(u)
        lhs = conf.gamma_bar(Lu, u) - 0.5 * conf.L(conf.gamma_bar(u))
        rhs = Lu**2 * inv_nq + coeff * gbar_u
        margins.append(lhs - rhs)
        tols.append(_tol_grid(geom, u, kappa_tol))
    return _margin_report("transformation_rule", margins, tols, geom.interior)


def verify_BE(geom: ModelGeometry, conf: ConformalData, K_over_T: float,
              N: float, suite: np.ndarray,
              kappa_tol: float = 10.0) -> MarginReport:
    """Margins of the Bakry-Emery condition BE(K/T, N) for the changed
    structure: Gamma_bar(Lu, u) - L Gamma_bar(u)/2 >= (Lu)^2/N + (K/T) Gamma_bar(u)."""
    margins, tols = [], []
    for u in suite:
        Lu = conf.L(u)
        gbar_u = conf.gamma_bar(u)
        lhs = conf.gamma_bar(Lu, u) - 0.5 * conf.L(conf.gamma_bar(u))
        rhs = Lu**2 / N + K_over_T * gbar_u
        margins.append(lhs - rhs)
        tols.append(_tol_grid(geom, u, kappa_tol))
    return _margin_report("bakry_emery", margins, tols, geom.interior)


def be_falsification_control(geom: ModelGeometry, conf: ConformalData,
                             K_over_T: float, N: float, suite: np.ndarray,
                             kappa_tol: float = 10.0, factor: float = 10.0):
    """Non-vacuity control: rerun the BE check with the curvature claim
    tightened to +factor*|K|/T.

    A lower bound is strengthened by raising it, so the control flips
    the certified (nonpositive) bound to a positive one; the check is
    expected to produce violations, guarding against vacuous tolerances.
    """
    K_false = factor * abs(K_over_T)
    report = verify_BE(geom, conf, K_false, N, suite, kappa_tol)
    return report, K_false


def chain_rule_residual(geom: ModelGeometry, phi: np.ndarray) -> float:
    """Self-test of the discrete calculus on chi(s) = s^3:
    Delta chi(phi) vs chi'(phi) Delta phi - chi''(phi) Gamma(phi)."""
    chi = phi**3
    lhs = geom.laplacian(chi)
    rhs = 3.0 * phi**2 * geom.laplacian(phi) - 6.0 * phi * geom.gamma(phi)
    return float(np.max(np.abs((lhs - rhs)[geom.interior])))


@dataclass
class Gauss2dReport:
    """Conformal Gauss-curvature certificate on a two-dimensional model."""

    k_T: float
    T: float
    f_max: float
    f_bound: float
    curvature_min: float
    curvature_bound: float
    margin: float
    gauss_bonnet_before: float
    gauss_bonnet_after: float
    trivial: bool
    f: np.ndarray = field(repr=False, default=None)
    curvature_new: np.ndarray = field(repr=False, default=None)
    gauge: Optional[GaugeResult] = field(repr=False, default=None)

    @property
    def bound_holds(self) -> bool:
        return self.margin >= -1e-4

    @property
    def f_bound_holds(self) -> bool:
        return self.f_max <= self.f_bound + 1e-6


def gauss_curvature_check_2d(geom: ModelGeometry, dec: SpectralDecomposition,
                             T: float, k_T: Optional[float] = None,
                             gauge: Optional[GaugeResult] = None,
                             **gauge_kwargs) -> Gauss2dReport:
    """Dimension-two pipeline: conformal Gauss curvature lower bound.

    Potential Ric_-/(2 k_T), gauge function phi, exponent
    f = 2 k_T log(phi); the new curvature e^{-2f}(Delta f + K) must stay
    above -2 k_T log(4)/T, and the total curvature integral vanishes on
    the torus before and after the change (Gauss-Bonnet).
    """
    if geom.dimension != 2 or geom.gauss_curvature is None:
        raise ValueError("the Gauss-curvature check needs a 2-d model")
    from .kato import kato_of_manifold

    K_g = geom.gauss_curvature
    gb_before = geom.integrate(K_g)
    if k_T is None:
        k_T = kato_of_manifold(geom, dec, T)
    if k_T <= 1e-14:
        f = np.zeros(geom.n_nodes)
        return Gauss2dReport(
            k_T=k_T, T=T, f_max=0.0, f_bound=0.0,
            curvature_min=float(np.min(K_g)), curvature_bound=-0.0,
            margin=float(np.min(K_g)) - 0.0,
            gauss_bonnet_before=gb_before, gauss_bonnet_after=gb_before,
            trivial=True, f=f, curvature_new=K_g.copy(), gauge=None,
        )
    lam = 1.0 / (2.0 * k_T)
    beta = math.log(2.0) / T
    if gauge is None:
        V = lam * geom.ric_minus
        gauge = gauge_phi(dec, V, beta, T, lam=lam, **gauge_kwargs)
    f = 2.0 * k_T * np.log(np.maximum(gauge.phi, 1.0))
    K_new = np.exp(-2.0 * f) * (geom.laplacian(f) + K_g)
    bound = -2.0 * k_T * math.log(4.0) / T
    f_bound = 2.0 * k_T * math.log(4.0)
    gb_after = float(np.dot(geom.volume_weights * np.exp(2.0 * f), K_new))
    return Gauss2dReport(
        k_T=k_T,
        T=T,
        f_max=float(np.max(f)),
        f_bound=f_bound,
        curvature_min=float(np.min(K_new)),
        curvature_bound=bound,
        margin=float(np.min(K_new)) - bound,
        gauss_bonnet_before=gb_before,
        gauss_bonnet_after=gb_after,
        trivial=False,
        f=f,
        curvature_new=K_new,
        gauge=gauge,
    )

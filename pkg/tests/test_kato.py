"""Kato constants, smallness conditions and the Phi integral."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import katolab as kl
from katolab.kato import (
    KatoBoundFn,
    check_conditions,
    dprime_threshold,
    kato_profile,
    phi_integral,
)


def bump_potential(geom, center=1.0, width=0.3, height=1.0):
    r = geom.nodes if geom.nodes.ndim == 1 else geom.nodes[:, 0]
    return height * np.exp(-(((r - center) / width) ** 2))


def quadrature_oracle(geom, dec, V, t, n_s=4001):
    # direct space-time quadrature: Simpson in s of e^{-s Delta} V, on the
    # substitution s = u^2 that absorbs the kernel's 1/sqrt(s) short-time
    # spike for rough potentials
    u = np.linspace(0.0, math.sqrt(t), n_s)
    vals = np.array(
        [2.0 * ui * kl.apply_semigroup(dec, float(ui * ui), V) for ui in u]
    )
    from scipy.integrate import simpson

    return float(np.max(simpson(vals, x=u, axis=0)))


def test_constant_potential_exact(circle_256):
    geom, dec = circle_256
    V = np.full(geom.n_nodes, 0.7)
    for t in (0.1, 1.0, 3.0):
        assert kl.kato_of_potential(dec, V, t) == pytest.approx(0.7 * t, rel=1e-10)


def test_zero_potential(circle_256):
    _, dec = circle_256
    assert kl.kato_of_potential(dec, np.zeros(dec.geometry.n_nodes), 1.0) == 0.0


def test_point_bump_against_time_quadrature(circle_256):
    geom, dec = circle_256
    V = np.zeros(geom.n_nodes)
    V[40] = 1.0 / geom.volume_weights[40]  # unit-mass spike
    ours = kl.kato_of_potential(dec, V, 0.5)
    oracle = quadrature_oracle(geom, dec, V, 0.5)
    assert ours == pytest.approx(oracle, abs=1e-8 * max(1.0, oracle))


def test_manifold_kato_sphere_zero(sphere3_256):
    geom, dec = sphere3_256
    assert kl.kato_of_manifold(geom, dec, 1.0) == 0.0


def test_manifold_kato_dumbbell(dumbbell_256):
    geom, dec = dumbbell_256
    t = 1.0
    ours = kl.kato_of_manifold(geom, dec, t)
    # elementary bounds: 0 < k_t <= t * max Ric_-
    assert 0.0 < ours <= t * np.max(geom.ric_minus)
    oracle = quadrature_oracle(geom, dec, geom.ric_minus, t)
    assert ours == pytest.approx(oracle, abs=1e-8 * max(1.0, oracle))


def test_profile_monotone(dumbbell_256):
    geom, dec = dumbbell_256
    times = np.geomspace(0.02, 4.0, 12)
    prof = kato_profile(geom, dec, times)
    assert np.all(np.diff(prof.values) >= -1e-12)
    assert prof.k_T == prof.values[-1]


def test_scaling_exact(dumbbell_256):
    geom, dec = dumbbell_256
    V = bump_potential(geom)
    a = kl.kato_of_potential(dec, V, 0.8)
    b = kl.kato_of_potential(dec, 3.5 * V, 0.8)
    assert b == pytest.approx(3.5 * a, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_subadditivity_random(circle_pair_cache, seed):
    geom, dec = circle_pair_cache
    rng = np.random.default_rng(seed)
    V1 = np.abs(rng.standard_normal(geom.n_nodes))
    V2 = np.abs(rng.standard_normal(geom.n_nodes))
    t = float(rng.uniform(0.05, 2.0))
    k12 = kl.kato_of_potential(dec, V1 + V2, t)
    k1 = kl.kato_of_potential(dec, V1, t)
    k2 = kl.kato_of_potential(dec, V2, t)
    assert k12 <= k1 + k2 + 1e-12 * (k1 + k2)


def test_time_subadditivity(dumbbell_256):
    # k_{t+s} <= k_t + k_s through the Markov property
    geom, dec = dumbbell_256
    V = geom.ric_minus
    for t, s in ((0.3, 0.5), (1.0, 1.0), (0.1, 2.0)):
        kts = kl.kato_of_potential(dec, V, t + s)
        kt = kl.kato_of_potential(dec, V, t)
        ks = kl.kato_of_potential(dec, V, s)
        assert kts <= kt + ks + 1e-9


def test_negative_potential_rejected(circle_256):
    _, dec = circle_256
    V = np.full(dec.geometry.n_nodes, -1e-6)
    with pytest.raises(ValueError):
        kl.kato_of_potential(dec, V, 1.0)


# -- Phi integral ------------------------------------------------------


def test_phi_power_law_closed_form():
    for a, b in ((0.3, 0.5), (1.7, 1.0), (0.05, 2.0)):
        bound = KatoBoundFn.power_law(a, b)
        for tau in (0.3, 1.0, 2.0):
            assert phi_integral(bound, tau) == pytest.approx(
                a * tau ** (2 * b) / (2 * b), rel=1e-12
            )


def test_phi_zero_bound():
    assert phi_integral(KatoBoundFn.power_law(0.0, 1.0), 1.0) == 0.0


def test_phi_log_bound_against_mpmath():
    c = 0.2
    bound = KatoBoundFn(fn=lambda t: c / np.log(np.e + 1.0 / t) ** 2, label="log")
    tau = 1.0
    ours = phi_integral(bound, tau, rtol=1e-9)
    # independent high-precision oracle on the log-scale substitution,
    # split so the slowly decaying tail is resolved
    with mpmath.workdps(40):
        oracle = 0.5 * mpmath.quad(
            lambda x: c / mpmath.log(mpmath.e + mpmath.exp(x)) ** 2,
            [0, 10, 100, 1e3, 1e5, 1e8, mpmath.inf],
        )
    assert ours == pytest.approx(float(oracle), rel=1e-6)


def test_phi_divergent_detected():
    bound = KatoBoundFn(fn=lambda t: np.full_like(np.asarray(t, dtype=float), 0.25),
                        label="const")
    assert math.isinf(phi_integral(bound, 1.0))
    # power law with nonpositive exponent diverges too
    assert math.isinf(phi_integral(KatoBoundFn.power_law(1.0, 0.0), 1.0))


def test_phi_expression_bound():
    bound = KatoBoundFn.from_expression("0.15*t**0.5")
    assert phi_integral(bound, 2.0) == pytest.approx(0.15 * 2.0, rel=1e-8)


# -- condition checks --------------------------------------------------


def _profile(n, k_T, T=1.0):
    times = np.linspace(T / 4, T, 4)
    values = np.linspace(k_T / 2, k_T, 4)
    return kl.KatoProfile(times, values, n=n)


def test_conditions_threshold_examples():
    rep = check_conditions(_profile(3, 0.2), 3, 0.5)
    assert rep.dynkin_ok and rep.dprime_ok  # 0.2 < 1/3

    rep4 = check_conditions(_profile(4, 0.2), 4, 0.4)
    assert rep4.dprime_threshold == pytest.approx(1.0 / 6.0)
    assert not rep4.dprime_ok

    rep0 = check_conditions(_profile(3, 0.0), 3, 0.9)
    assert rep0.dynkin_ok and rep0.dprime_ok


def test_conditions_gamma_range():
    with pytest.raises(ValueError):
        check_conditions(_profile(4, 0.1), 4, 0.6)  # gamma >= 1/(n-2)
    with pytest.raises(ValueError):
        check_conditions(_profile(3, 0.1), 3, 0.0)
    # dimension 2 admits any positive gamma
    rep = check_conditions(_profile(2, 5.0), 2, 10.0)
    assert rep.dynkin_ok
    assert math.isinf(rep.dprime_threshold)


def test_sk_condition_flags():
    prof = _profile(3, 0.2)
    good = KatoBoundFn.power_law(0.25, 0.5)  # majorizes, bound(T)=0.25 < 1/3
    rep = check_conditions(prof, 3, 0.5, bound=good)
    assert rep.sk_ok and prof.sk_ok
    tight = KatoBoundFn.power_law(0.05, 0.5)  # fails to majorize
    rep2 = check_conditions(_profile(3, 0.2), 3, 0.5, bound=tight)
    assert not rep2.sk_ok


@pytest.fixture(scope="module")
def circle_pair_cache():
    spec = kl.GeometrySpec("conformal_circle", 1, 128, 2 * np.pi)
    geom = kl.build_geometry(spec)
    return geom, kl.decompose(geom)

"""Gauge construction: Duhamel operator, Neumann series, oracles, bounds."""

import math

import mpmath
import numpy as np
import pytest

import katolab as kl
from katolab.gauge import SpaceTimeField, exp_poly_moments, window_times


def smooth_bump(geom, height=0.4):
    r = geom.nodes if geom.nodes.ndim == 1 else geom.nodes[:, 0]
    return height * np.exp(np.cos(r)) / np.e


def const_field(dec, T, value=1.0, n_time=48):
    times = window_times(T, n_time)
    n = dec.geometry.n_nodes
    return SpaceTimeField(times, np.full((len(times), n), value),
                          np.zeros((len(times), n)))


def test_moments_against_incomplete_gamma():
    # closed form: int_0^d e^{-mu t} t^p dt = gamma_lower(p+1, mu d)/mu^{p+1}
    for delta in (1e-4, 0.03, 0.4, 2.0):
        mus = np.array([0.0, 1e-9, 0.3 / delta, 5.0 / delta, 400.0 / delta])
        ours = exp_poly_moments(mus, delta)
        for j, mu in enumerate(mus):
            for p in range(4):
                if mu * delta < 1e-8:
                    ref = delta ** (p + 1) / (p + 1) * (
                        1 - (p + 1) * mu * delta / (p + 2)
                    )
                else:
                    ref = float(mpmath.gammainc(p + 1, 0, mu * delta)) / mu ** (p + 1)
                assert ours[p, j] == pytest.approx(ref, rel=1e-10, abs=1e-300)


def test_duhamel_zero(circle_256):
    geom, dec = circle_256
    u = const_field(dec, 1.0, value=0.0)
    out, bound = kl.duhamel_apply(dec, smooth_bump(geom), u)
    assert out.sup_norm() == 0.0
    assert bound >= 0.0


def test_duhamel_constant_potential(circle_256):
    geom, dec = circle_256
    V0 = 0.6
    u = const_field(dec, 1.0)
    out, _ = kl.duhamel_apply(dec, np.full(geom.n_nodes, V0), u)
    for i, t in enumerate(out.times):
        assert np.max(np.abs(out.values[i] - V0 * t)) < 1e-12


def test_duhamel_sup_equals_kato(circle_256):
    # |K 1|_sup at the horizon is the Kato constant, by construction
    geom, dec = circle_256
    V = smooth_bump(geom)
    T = 1.0
    u = const_field(dec, T)
    out, bound = kl.duhamel_apply(dec, V, u)
    k_T = kl.kato_of_potential(dec, V, T)
    assert np.max(out.values[-1]) == pytest.approx(k_T, abs=1e-8)
    assert bound == pytest.approx(k_T, abs=1e-10)


def test_solve_I_zero_potential(circle_256):
    geom, dec = circle_256
    I, diag = kl.solve_I(dec, np.zeros(geom.n_nodes), math.log(4.0), 1.0)
    assert diag.terms_per_window == [2]  # the constant plus one vanishing term
    # floor set by the eigensolver's spurious mode content of the
    # constant (~ n eps), not by the series construction
    assert np.max(np.abs(I.values - 1.0)) < 5e-12


def test_solve_I_constant_closed_form(circle_256):
    geom, dec = circle_256
    V0, T, beta = 0.5, 1.0, math.log(4.0)
    I, diag = kl.solve_I(dec, np.full(geom.n_nodes, V0), beta, T,
                         tol=1e-10, t_max=2.0)
    for i, t in enumerate(I.times):
        ref = math.exp(V0 * t)
        assert np.max(np.abs(I.values[i] - ref)) < 1e-7 * ref
    assert diag.contraction_max <= diag.k_T_V + 1e-6
    assert diag.bounds_ok


def test_solve_I_backward_euler_oracle(circle_256):
    geom, dec = circle_256
    V = smooth_bump(geom)
    T, beta = 1.0, math.log(4.0)
    I, _ = kl.solve_I(dec, V, beta, T, tol=1e-10)
    # backward Euler on the same discrete operator
    import scipy.sparse
    import scipy.sparse.linalg

    dt = 2e-5
    steps_at = {float(t): int(round(t / dt)) for t in I.times[1:]}
    A = scipy.sparse.identity(geom.n_nodes) + dt * (
        scipy.sparse.diags(1.0 / geom.volume_weights) @ geom.stiffness
        - scipy.sparse.diags(V)
    )
    lu = scipy.sparse.linalg.splu(A.tocsc())
    u = np.ones(geom.n_nodes)
    want = dict(steps_at)
    got = {}
    n_max = max(steps_at.values())
    for k in range(1, n_max + 1):
        u = lu.solve(u)
        for t, steps in steps_at.items():
            if steps == k:
                got[t] = u.copy()
    for i, t in enumerate(I.times[1:], start=1):
        ref = got[float(t)]
        assert np.max(np.abs(I.values[i] - ref)) < 1e-5


def test_minimal_solution_ordering(circle_256):
    """J <= I up to the time-stepper's certified error.

    On closed models the minimal solution coincides with the series
    construction, so the ordering is equality within discretization; the
    Crank-Nicolson error is certified by step halving.
    """
    geom, dec = circle_256
    V = smooth_bump(geom)
    T, beta = 1.0, math.log(4.0)
    I, _ = kl.solve_I(dec, V, beta, T, tol=1e-10)
    import scipy.sparse
    import scipy.sparse.linalg

    H = scipy.sparse.diags(1.0 / geom.volume_weights) @ geom.stiffness \
        - scipy.sparse.diags(V)

    def crank_nicolson(dt, t_end):
        A = (scipy.sparse.identity(geom.n_nodes) + 0.5 * dt * H).tocsc()
        B = scipy.sparse.identity(geom.n_nodes) - 0.5 * dt * H
        lu = scipy.sparse.linalg.splu(A)
        u = np.ones(geom.n_nodes)
        for _ in range(int(round(t_end / dt))):
            u = lu.solve(B @ u)
        return u

    t_end = float(I.times[-1])
    J1 = crank_nicolson(1e-3, t_end)
    J2 = crank_nicolson(5e-4, t_end)
    stepper_err = (4.0 / 3.0) * np.max(np.abs(J1 - J2))
    assert np.max(J2 - I.values[-1]) <= 1e-7 + stepper_err


def test_solve_I_hypothesis_violation(circle_256):
    geom, dec = circle_256
    V = np.full(geom.n_nodes, 2.0)  # k_T(V) = 2 > 1 - e^{-beta}
    with pytest.raises(ValueError, match="Dynkin"):
        kl.solve_I(dec, V, 1.0, 1.0)


def test_gauge_zero_potential(circle_256):
    geom, dec = circle_256
    res = kl.gauge_phi(dec, np.zeros(geom.n_nodes), math.log(2.0), 1.0)
    assert np.max(np.abs(res.phi - 1.0)) < 1e-12
    assert res.bounds_ok


def test_gauge_constant_closed_form(circle_256):
    geom, dec = circle_256
    V0, T, beta = 0.5, 1.0, math.log(4.0)
    res = kl.gauge_phi(dec, np.full(geom.n_nodes, V0), beta, T,
                       tol=1e-10, tail_tol=1e-10)
    target = 2 * beta / (2 * beta - V0)
    assert np.max(np.abs(res.phi - target)) < 1e-7 * target
    assert 1.0 - 1e-6 <= res.phi_min and res.phi_max <= res.phi_upper_bound + 1e-6


def test_gauge_oracle_equivalence(circle_256):
    geom, dec = circle_256
    V = smooth_bump(geom)
    T, beta = 1.0, math.log(4.0)
    res = kl.gauge_phi(dec, V, beta, T, tol=1e-10, tail_tol=1e-9)
    phi_direct = kl.direct_solve_phi(geom, V, beta)
    assert np.max(np.abs(res.phi - phi_direct)) <= 1e-6
    assert res.diagnostics.contraction_max <= res.diagnostics.k_T_V + 1e-6
    assert res.pde_residual <= 1e-6 * max(1.0, 2 * beta)


def test_direct_solve_rejects_nonpositive_operator(circle_256):
    geom, _ = circle_256
    V = np.full(geom.n_nodes, 3.0)
    with pytest.raises(ValueError, match="positive"):
        kl.direct_solve_phi(geom, V, beta=0.5)


def test_spectral_bound_examples(circle_256):
    geom, dec = circle_256
    rep0 = kl.spectral_bound_check(geom, np.zeros(geom.n_nodes), 0.7)
    assert rep0.lambda_min == pytest.approx(0.0, abs=1e-9)
    assert rep0.bound_holds

    V0 = 0.4
    rep = kl.spectral_bound_check(geom, np.full(geom.n_nodes, V0), beta=0.7)
    assert rep.lambda_min == pytest.approx(-V0, abs=1e-9)
    assert rep.margin == pytest.approx(0.7 - V0, abs=1e-9)


def test_spectral_bound_certified_by_dynkin(circle_256):
    """Whenever the Dynkin hypothesis holds, spec(Delta - V) >= -beta."""
    geom, dec = circle_256
    rng = np.random.default_rng(4)
    T = 1.0
    for _ in range(5):
        V = np.abs(rng.standard_normal(geom.n_nodes))
        k1 = kl.kato_of_potential(dec, V, T)
        # scale to sit just under the threshold for beta = ln 4
        beta = math.log(4.0)
        target = 0.95 * (1 - math.exp(-beta * T))
        V = V * (target / k1)
        rep = kl.spectral_bound_check(geom, V, beta)
        assert rep.margin >= -1e-9


def test_spectral_bound_flagging_when_hypothesis_violated(circle_256):
    geom, _ = circle_256
    V = np.full(geom.n_nodes, 5.0)
    rep = kl.spectral_bound_check(geom, V, beta=0.5, hypothesis_ok=False)
    assert not rep.asserted
    assert rep.lambda_min == pytest.approx(-5.0, abs=1e-8)


def test_semigroup_Lp_rows(circle_256):
    geom, dec = circle_256
    T = 1.0
    rows0 = kl.semigroup_Lp_check(geom, np.zeros(geom.n_nodes), math.log(2.0), T)
    for row in rows0:
        assert row.norm == pytest.approx(1.0, abs=1e-9)
        assert row.ok

    V0, beta = 0.5, math.log(4.0)
    rows = kl.semigroup_Lp_check(geom, np.full(geom.n_nodes, V0), beta, T)
    for row in rows:
        assert row.norm == pytest.approx(math.exp(V0 * row.t), rel=1e-9)
        assert row.ok

    rowsb = kl.semigroup_Lp_check(geom, smooth_bump(geom), beta, T)
    assert all(r.margin > 0 for r in rowsb)


def test_window_times_shape():
    ts = window_times(2.0, 32)
    assert ts[0] == 0.0 and ts[-1] == 2.0
    assert np.all(np.diff(ts) > 0)
    with pytest.raises(ValueError):
        window_times(1.0, 4)


def test_spacetime_field_validation():
    with pytest.raises(ValueError):
        SpaceTimeField(np.array([0.0, 0.0, 1.0]), np.zeros((3, 4)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        SpaceTimeField(np.array([0.0, 1.0]), np.full((2, 4), np.nan), np.zeros((2, 4)))


def test_spacetime_sample_interpolation(circle_256):
    geom, dec = circle_256
    V0, T, beta = 0.5, 1.0, math.log(4.0)
    I, _ = kl.solve_I(dec, np.full(geom.n_nodes, V0), beta, T, tol=1e-10)
    for t in (0.037, 0.4, 0.93):
        ref = math.exp(V0 * t)
        assert np.max(np.abs(I.sample(t) - ref)) < 1e-7 * ref

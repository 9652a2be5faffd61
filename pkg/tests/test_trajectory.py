import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from ioncool import dynamics, kernels
from ioncool.trajectory import (
    AnsatzParams,
    Protocol,
    UnphysicalTrajectoryError,
    aux_energies,
    frequency_mismatch,
    rho_minus,
    rho_plus,
    solve_q_plus,
    stray_shift,
)

GOOD = AnsatzParams(2.0, 0.0, 20.0)


def sympy_coefficients(A, B, r):
    u = sp.symbols("u")
    c = sp.symbols("c0:8")
    poly = sum(ci * u ** (2 * i) for i, ci in enumerate(c))
    eqs = [sp.Eq(c[0], r), sp.Eq(2 * c[1], A), sp.Eq(c[7], B), sp.Eq(poly.subs(u, sp.Rational(1, 2)), 1)]
    eqs += [sp.Eq(sp.diff(poly, u, k).subs(u, sp.Rational(1, 2)), 0) for k in range(1, 5)]
    sol = sp.solve(eqs, c, dict=True)[0]
    return np.array([float(sol[ci]) for ci in c])


@pytest.mark.parametrize("A,B,r", [(0, 0, 0.8), (3.5, -120, 0.9), (-7, 4096, 0.75)])
def test_rho_coefficients_symbolic(A, B, r):
    got = kernels.rho_coefficients(A, B, r)
    want = sympy_coefficients(sp.nsimplify(A), sp.nsimplify(B), sp.nsimplify(r))
    np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-9)


@given(st.floats(-50, 50), st.floats(-2e4, 2e4), st.floats(0.5, 1.0))
def test_rho_boundary_conditions(A, B, r):
    ends = rho_plus(np.array([0.0, 1.0]), A, B, r)
    mid = rho_plus(0.5, A, B, r)
    scale = 1e-12 * (1 + abs(A) + abs(B))
    np.testing.assert_allclose(ends[0], 1.0, atol=scale)
    np.testing.assert_allclose(ends[1:], 0.0, atol=1e3 * scale)
    assert mid[0] == pytest.approx(r, abs=1e-15)
    assert mid[1] == 0.0
    assert mid[2] == pytest.approx(A, abs=1e-13 * (1 + abs(A)))


def test_rho_derivatives_finite_difference():
    s = np.linspace(0.05, 0.95, 7)
    h = 1e-5
    for j in range(4):
        up = rho_plus(s + h, 1.7, 300.0, 0.82)[j]
        dn = rho_plus(s - h, 1.7, 300.0, 0.82)[j]
        fd = (up - dn) / (2 * h)
        np.testing.assert_allclose(rho_plus(s, 1.7, 300.0, 0.82)[j + 1], fd, rtol=1e-6, atol=1e-5)


def test_rho_minus_is_one():
    assert rho_minus() == 1.0
    np.testing.assert_array_equal(rho_minus(np.zeros(3)), 1.0)


def test_protocol_endpoints(design):
    p = Protocol(design, GOOD)
    ev = p.evaluate([0.0, GOOD.t_f / 2, GOOD.t_f])
    # d comes from a cube root of the frequency difference: a few ulp of rounding
    assert ev.d[0] == pytest.approx(design.constraints.d0, rel=1e-11)
    assert ev.d[2] == pytest.approx(design.constraints.d0, rel=1e-11)
    assert ev.alpha[0] == pytest.approx(design.alpha_out, rel=1e-10)
    assert ev.beta[0] == pytest.approx(design.beta_out, rel=1e-10)
    # rho'' at the midpoint detunes it slightly from the static design
    assert ev.beta[1] <= design.constraints.beta_max
    assert 0 < abs(p.midpoint_mismatch()) < 1e-3
    slow = Protocol(design, AnsatzParams(GOOD.A, GOOD.B, 1e6))
    assert abs(slow.midpoint_mismatch()) < 1e-9
    assert ev.omega_plus_sq[0] == pytest.approx(design.Omega0_plus**2, rel=1e-12)


def test_distance_derivatives_finite_difference(design):
    p = Protocol(design, AnsatzParams(1.2, 800.0, 18.0))
    t = np.linspace(1.0, 17.0, 9)
    h = 1e-4
    ev, up, dn = p.evaluate(t), p.evaluate(t + h), p.evaluate(t - h)
    np.testing.assert_allclose(ev.d_dot, (up.d - dn.d) / (2 * h), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(ev.d_ddot, (up.d_dot - dn.d_dot) / (2 * h), rtol=1e-6, atol=1e-7)
    # Omega_+^2 = Omega_0+^2 / rho^4 - rho''/rho
    r = rho_plus(t / p.t_f, 1.2, 800.0, design.rho_in_plus)
    om = design.Omega0_plus**2 / r[0] ** 4 - r[2] / p.t_f**2 / r[0]
    np.testing.assert_allclose(ev.omega_plus_sq, om, rtol=1e-12)


def test_static_protocol(design):
    p = Protocol(design, AnsatzParams(0.0, 0.0, math.inf))
    ev = p.evaluate([0.0, 1e3, 1e6])
    np.testing.assert_allclose(ev.d, design.constraints.d0, rtol=1e-11)
    np.testing.assert_array_equal(ev.d_dot, 0.0)


def test_check_flags_unphysical(design):
    assert Protocol(design, GOOD).check().valid
    bad = Protocol(design, AnsatzParams(-400.0, 0.0, 20.0))
    chk = bad.check()
    assert not chk.valid and chk.violation > 0 and chk.reason
    with pytest.raises(UnphysicalTrajectoryError):
        bad.distance_and_potential(np.linspace(0, 20, 401))


def test_invalid_params():
    with pytest.raises(ValueError):
        AnsatzParams(0, 0, -1.0)


def test_q_plus_against_solve_ivp(design):
    p = Protocol(design, AnsatzParams(1.5, 200.0, 15.0))
    sq = math.sqrt(design.m1 / 2)

    def rhs(t, y):
        ev = p.evaluate(t)
        return [y[1], -ev.omega_plus_sq[0] * y[0] - sq * ev.d_ddot[0]]

    sol = solve_ivp(rhs, (0, p.t_f), [0.0, 0.0], method="DOP853", rtol=1e-11, atol=1e-13)
    got = solve_q_plus(p)
    assert got.q == pytest.approx(sol.y[0, -1], rel=1e-6, abs=1e-10)
    assert got.q_dot == pytest.approx(sol.y[1, -1], rel=1e-6, abs=1e-10)


def test_aux_energy_minimum_is_small(design):
    from ioncool.optimize import CostSpec, optimize_runtime

    res = optimize_runtime(design, 30.0, CostSpec("approx_nonrobust"))
    e_q = aux_energies(Protocol(design, res.params), 0.0)[0]
    assert e_q == pytest.approx(res.cost, rel=1e-12)
    assert e_q / design.quantum < 1e-6


@pytest.mark.parametrize("eta", [-0.02, -0.01, 0.005, 0.02])
def test_frequency_mismatch_first_order(design, eta):
    p = Protocol(design, AnsatzParams(2.0, 0.0, 20.0))
    for t in (0.0, 5.0, 10.0):
        w1, w2 = dynamics.local_curvatures(p, t, eta)
        approx = frequency_mismatch(p, eta, t)
        assert approx == pytest.approx(w2 - w1, rel=0.10)


@pytest.mark.parametrize("eta", [-0.02, 0.01])
def test_stray_shift_first_order(design, eta):
    p = Protocol(design, GOOD)
    for t in (0.0, 10.0):
        _, (x1, x2) = dynamics._equilibria_at(p, t, eta)
        assert (x1 + x2) / 2 == pytest.approx(stray_shift(p, eta), rel=0.05)


def test_perturbed_aux_limits(design):
    from ioncool.trajectory import perturbed_aux

    p = Protocol(design, GOOD)
    assert perturbed_aux(p, 0.0).E_q == pytest.approx(0.0, abs=1e-20)
    with pytest.warns(UserWarning):
        perturbed_aux(p, 0.15)
    with pytest.raises(ValueError):
        perturbed_aux(p, 0.3)


def test_json_export(design):
    import json

    doc = json.loads(Protocol(design, GOOD).to_json(n_samples=11))
    assert len(doc["samples"]["t"]) == 11
    assert doc["params"]["t_f"] == 20.0


def test_static_protocol_has_no_approximate_cost(design):
    p = Protocol(design, AnsatzParams(0.0, 0.0, math.inf))
    # a finite horizon is needed to integrate; the potential never moves
    from ioncool import kernels as k

    pp = p.kernel_params()
    ys, status, *_ = k.integrate(k.MODE_AUX, pp, np.zeros(4), 0.0, np.array([50.0]), 1e-10, 1e-12, np.inf, 10**6)
    assert status == k.STATUS_OK
    np.testing.assert_array_equal(ys[0], 0.0)


def test_perturbed_aux_is_odd_in_eta(design):
    from ioncool.trajectory import perturbed_aux

    p = Protocol(design, AnsatzParams(1.5, 400.0, 15.0))
    a, b = perturbed_aux(p, 0.02), perturbed_aux(p, -0.02)
    assert a.q == pytest.approx(-b.q, rel=1e-9)
    assert a.q_dot == pytest.approx(-b.q_dot, rel=1e-9)
    assert a.E_q == pytest.approx(b.E_q, rel=1e-9)

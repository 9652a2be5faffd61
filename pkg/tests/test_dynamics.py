import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ioncool import dynamics
from ioncool.export import read_csv
from ioncool.trajectory import AnsatzParams, Protocol, stray_gamma

PARAMS = AnsatzParams(1.5, 400.0, 20.0)
CFG = dynamics.SimConfig()


def naive_rhs(protocol, eta):
    cc = protocol.design.const.coulomb_constant
    g_s = stray_gamma(protocol.design, eta)
    m1, m2 = protocol.design.m1, protocol.design.m2

    def f(t, y):
        ev = protocol.evaluate(t)
        a, b, g = ev.alpha[0], ev.beta[0], ev.gamma[0] + g_s
        x1, x2, p1, p2 = y
        fc = cc / (x2 - x1) ** 2
        return [p1 / m1, p2 / m2, -(g + 2 * a * x1 + 4 * b * x1**3) - fc, -(g + 2 * a * x2 + 4 * b * x2**3) + fc]

    return f


def test_equilibria_stationary(design):
    for gamma in (0.0, 1e-3, -0.05):
        x1, x2 = dynamics.exact_equilibria(design.alpha_in, design.beta_in, gamma, design.const.coulomb_constant)
        g1, g2 = dynamics._gradient(x1, x2, design.alpha_in, design.beta_in, gamma, design.const.coulomb_constant)
        assert x2 > x1
        assert abs(g1) < 1e-10 and abs(g2) < 1e-10


def test_equilibria_reject_bad_potential():
    with pytest.raises(dynamics.EquilibriumError):
        dynamics.exact_equilibria(1.0, -1.0, 0.0, 1.0)


def test_ground_state_has_no_excess(design):
    p = Protocol(design, PARAMS)
    s0 = dynamics.prepare_state(p)
    assert dynamics.excess_energy(s0, p) == (0.0, 0.0)


@pytest.mark.parametrize("eta", [0.0, 0.02])
def test_against_solve_ivp(design, eta):
    p = Protocol(design, PARAMS)
    cfg = replace(CFG, eta=eta, E_in=(5 * design.quantum, 0.0), phi=0.7)
    out = dynamics.simulate(p, cfg)
    s0 = dynamics.prepare_state(p, eta, cfg.E_in, cfg.phi)
    sol = solve_ivp(naive_rhs(p, eta), (0, p.t_f), s0.as_array(), method="DOP853", rtol=1e-12, atol=1e-12)
    ref = dynamics.IonState(*sol.y[:, -1], t=p.t_f)
    np.testing.assert_allclose(out.final.as_array(), ref.as_array(), rtol=1e-7, atol=1e-8)
    e_ref = dynamics.excess_energy(ref, p, eta)
    assert out.E_ex_1 == pytest.approx(e_ref[0], rel=1e-5, abs=1e-6 * design.quantum)


def test_energy_conservation_static(design):
    p = Protocol(design, AnsatzParams(0.0, 0.0, math.inf))
    s0 = dynamics.prepare_state(p, 0.0, (10 * design.quantum, 3 * design.quantum), (0.2, 1.3))
    out = dynamics.integrate(p, s0, CFG, t_end=200 * design.period)
    h0 = dynamics.total_energy(s0, p)
    assert abs(dynamics.total_energy(out.final, p) - h0) / abs(h0) < 1e-9
    # the drift is also small against the motional excitation itself
    assert abs(dynamics.total_energy(out.final, p) - h0) < 1e-5 * 13 * design.quantum


def test_mirror_symmetry(design):
    p = Protocol(design, PARAMS)
    e = 7 * design.quantum
    s0 = dynamics.prepare_state(p, 0.0, (e, e), (0.4, 0.4 + math.pi))
    out = dynamics.integrate(p, s0, CFG)
    assert out.E_ex_1 == pytest.approx(out.E_ex_2, rel=1e-9)


def test_excess_energy_matches_naive_difference(design):
    p = Protocol(design, PARAMS)
    pot, (x10, x20) = dynamics._equilibria_at(p, 3.0, 0.0)
    v = lambda x: pot.gamma * x + pot.alpha * x * x + pot.beta * x**4  # noqa: E731
    st = dynamics.IonState(x10 + 0.3, x20 - 0.2, 1.5, -0.7, 3.0)
    cc = design.const.coulomb_constant
    g1, g2 = dynamics._gradient(x10, x20, pot.alpha, pot.beta, pot.gamma, cc)
    naive1 = 1.5**2 / (2 * design.m1) + v(st.x1) - v(x10) + (g1 - 2 * pot.alpha * x10 - 4 * pot.beta * x10**3 - pot.gamma) * 0.3
    e1, _ = dynamics.excess_energy(st, p)
    assert e1 == pytest.approx(naive1, rel=1e-10)


@pytest.mark.parametrize("phi", [0.0, math.pi / 2, 1.0])
def test_prepared_energy(design, phi):
    p = Protocol(design, PARAMS)
    e_in = 10 * design.quantum
    s0 = dynamics.prepare_state(p, 0.0, (e_in, 0.0), phi)
    e1, e2 = dynamics.excess_energy(s0, p)
    assert e1 == pytest.approx(e_in, rel=0.02)
    assert e2 == 0.0


def test_tolerance_halving(design):
    p = Protocol(design, PARAMS)
    cfg = replace(CFG, E_in=(10 * design.quantum, 0.0))
    a = dynamics.simulate(p, cfg)
    b = dynamics.simulate(p, replace(cfg, rel_tol=CFG.rel_tol / 2, abs_tol=CFG.abs_tol / 2))
    assert abs(a.E_ex_1 - b.E_ex_1) / design.quantum < 1e-3


def test_phase_scan_matches_single_runs(design):
    p = Protocol(design, PARAMS)
    e_in = (4 * design.quantum, 0.0)
    scan = dynamics.phase_resolved_energies(p, 0.01, e_in, 5, CFG)
    for k in range(5):
        out = dynamics.simulate(p, replace(CFG, eta=0.01, E_in=e_in, phi=2 * math.pi * k / 5))
        assert scan[k, 0] == pytest.approx(out.E_ex_1, rel=1e-10, abs=1e-14)
        assert scan[k, 1] == pytest.approx(out.E_ex_2, rel=1e-10, abs=1e-14)


def test_step_limit(design):
    with pytest.raises(dynamics.IntegrationError):
        dynamics.simulate(Protocol(design, PARAMS), replace(CFG, max_steps=5))


def test_barrier_is_central_maximum(design):
    prot = Protocol(design, PARAMS)
    pot = dynamics._potential_at(prot, 0.0, 0.0)
    assert dynamics._barrier(pot) == pytest.approx(0.0, abs=1e-9)
    pot = dynamics._potential_at(prot, 0.0, 0.02)
    xb = dynamics._barrier(pot)
    assert 4 * pot.beta * xb**3 + 2 * pot.alpha * xb + pot.gamma == pytest.approx(0.0, abs=1e-9)
    assert 12 * pot.beta * xb**2 + 2 * pot.alpha < 0
    assert math.isnan(dynamics._barrier(pot._replace(alpha=1.0)))


def test_ion_in_the_wrong_well_is_an_error(design):
    prot = Protocol(design, PARAMS)
    x0 = design.d0 / 2
    bad = dynamics.IonState(-x0 - 3.0, -x0 + 3.0, 0.0, 0.0)
    with pytest.raises(dynamics.IntegrationError) as exc:
        dynamics.integrate(prot, bad, CFG, t_end=0.05)
    assert "other well" in str(exc.value)
    dynamics.integrate(prot, dynamics.IonState(-x0, x0, 0.0, 0.0), CFG, t_end=0.05)


def test_state_and_config_validation():
    with pytest.raises(ValueError):
        dynamics.IonState(1.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        dynamics.SimConfig(rel_tol=0.0)


def test_trajectory_csv(design, tmp_path):
    p = Protocol(design, PARAMS)
    out = dynamics.simulate(p, replace(CFG, n_samples=11))
    path = tmp_path / "traj.csv"
    dynamics.write_trajectory_csv(path, out, {"tool": "ioncool"})
    meta, header, rows = read_csv(path)
    assert meta["tool"] == "ioncool"
    assert len(rows) == 11 and header[0] == "t"

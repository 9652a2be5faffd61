import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import BETA_MAX, M_CA
from ioncool import dynamics
from ioncool.acceptance import _equal_limit_error, AcceptanceContext
from ioncool.design import PhysicalConstraints
from ioncool.optimize import NMSettings, scan_seeds
from ioncool.trajectory import AnsatzParams, Protocol
from ioncool.unequal import (
    design_for_ratio,
    designed_gradient,
    exchange_time,
    mass_weighted_hessian,
    optimize_unequal,
    solve_boundaries_unequal,
)

PARAMS = AnsatzParams(3.0, 1000.0, 15.0)


@pytest.mark.parametrize("ratio,f0", [(1.25, 0.508), (2.0, 0.555), (5.0, 0.608), (10.0, 0.616)])
def test_initial_frequency(ratio, f0):
    d = design_for_ratio(ratio, BETA_MAX)
    assert d.omega0 / (2 * math.pi) == pytest.approx(f0, abs=2e-3)


def test_equal_mass_limit():
    assert _equal_limit_error(AcceptanceContext()) < 1e-9


@given(st.floats(1.05, 12.0), st.floats(0.0, 1.0))
def test_designed_equilibria_and_modes(ratio, frac):
    d = design_for_ratio(ratio, BETA_MAX)
    p = Protocol(d, PARAMS)
    t = frac * PARAMS.t_f
    g1, g2 = designed_gradient(p, t)
    ev = p.evaluate(t)
    scale = d.const.coulomb_constant / ev.d[0] ** 2
    assert abs(g1) < 1e-10 * scale and abs(g2) < 1e-10 * scale
    k = mass_weighted_hessian(p, t)
    # equal mass-weighted curvatures decouple the modes
    assert k[0, 0] == pytest.approx(k[1, 1], rel=1e-10)
    lam = np.linalg.eigvalsh(k)
    assert lam[0] == pytest.approx(ev.omega_minus_sq[0], rel=1e-9)
    assert lam[1] == pytest.approx(ev.omega_plus_sq[0], rel=1e-9)


def test_normal_mode_transform_is_symplectic():
    d = design_for_ratio(2.0, BETA_MAX)
    p = Protocol(d, PARAMS)
    for t in np.linspace(0, PARAMS.t_f, 5):
        _, vecs = np.linalg.eigh(mass_weighted_hessian(p, t))
        # q = V^T sqrt(M) x with conjugate momenta V^T M^-1/2 p
        m = np.diag([d.m1, d.m2])
        T = vecs.T @ np.sqrt(m)
        S = vecs.T @ np.linalg.inv(np.sqrt(m))
        np.testing.assert_allclose(T @ S.T, np.eye(2), atol=1e-12)


def test_shift_derivatives_finite_difference():
    d = design_for_ratio(5.0, BETA_MAX)
    p = Protocol(d, PARAMS)
    t = np.linspace(1.0, 14.0, 7)
    h = 1e-4
    ev, up, dn = p.evaluate(t), p.evaluate(t + h), p.evaluate(t - h)
    np.testing.assert_allclose(ev.s_dot, (up.s - dn.s) / (2 * h), rtol=1e-6, atol=1e-10)
    np.testing.assert_allclose(ev.s_ddot, (up.s_dot - dn.s_dot) / (2 * h), rtol=1e-5, atol=1e-9)


def test_one_versus_two_parameters():
    d = design_for_ratio(2.0, BETA_MAX)
    one = optimize_unequal(d, 15.0, 1)
    two = optimize_unequal(d, 15.0, 2)
    assert two.cost / d.quantum < 1e-3
    assert one.cost / d.quantum > 0.1


def test_two_parameter_fallback_scans(monkeypatch):
    # a starved simplex forces the restart path, including the coarse scan
    import ioncool.unequal as uq

    calls = []

    def spy(obj, n_best=3, grid=None):
        calls.append((n_best, grid))
        return scan_seeds(obj, n_best, ((-4.0, 4.0, 2.0), (-8.0, 8.0, 4.0)))

    monkeypatch.setattr(uq, "scan_seeds", spy)
    d = design_for_ratio(2.0, BETA_MAX)
    res = optimize_unequal(d, 15.0, 2, settings=NMSettings(max_eval=3))
    assert calls == [(uq.SCAN_SEEDS_2D, uq.SCAN_RANGE_2D)]
    assert res.evaluations > 3 * 3
    assert np.isfinite(res.cost)


def test_stray_field_not_supported():
    with pytest.raises(NotImplementedError):
        optimize_unequal(design_for_ratio(2.0, BETA_MAX), 15.0, eta=0.01)


def test_exchange_time_ordering():
    times = [exchange_time(design_for_ratio(r, BETA_MAX)) for r in (1.25, 2, 5, 10)]
    assert all(b < a for a, b in zip(times, times[1:]))


def test_unequal_mirror_breaks_but_ground_state_is_clean():
    d = design_for_ratio(2.0, BETA_MAX)
    p = Protocol(d, AnsatzParams(0.0, 0.0, math.inf))
    s0 = dynamics.prepare_state(p)
    pot = dynamics._potential_at(p, 0.0, 0.0)
    cc = d.const.coulomb_constant
    g1, g2 = dynamics._gradient(s0.x1, s0.x2, pot.alpha, pot.beta, pot.gamma, cc)
    scale = cc / (s0.x2 - s0.x1) ** 2
    assert abs(g1) < 1e-10 * scale and abs(g2) < 1e-10 * scale
    assert pot.gamma == pytest.approx(d.gamma_out, rel=1e-8)
    assert s0.x1 + s0.x2 != 0.0  # off-centre for unequal masses


def test_boundary_requires_separation():
    c = PhysicalConstraints.from_ratios(BETA_MAX, 5, 0.9, M_CA, M_CA / 2)
    from ioncool.design import InfeasibleDesignError

    with pytest.raises(InfeasibleDesignError):
        solve_boundaries_unequal(c)

import math

import numpy as np
import pytest

from conftest import make_design
from ioncool import analysis
from ioncool.store import ResultStore
from ioncool.optimize import CostSpec
from ioncool.trajectory import AnsatzParams


def test_envelope_fit_synthetic():
    t = np.arange(10.0, 30.01, 0.25)
    a, b, c, d = 50.0, 0.35, 0.9, 0.4
    y = a * np.exp(-b * t) * np.sin(c * t + d) ** 2
    rng = np.random.default_rng(3)
    y *= np.exp(0.05 * rng.standard_normal(t.size))
    fit = analysis.fit_envelope(t, y, 1.0, level_quanta=0.1)
    assert fit.ok
    assert fit.b == pytest.approx(b, rel=0.05)
    assert fit.c == pytest.approx(c, rel=0.02)
    assert fit.T_crit == pytest.approx(math.log(a / 0.1) / b, rel=0.05)
    assert fit.peak_residual < 0.2


def test_envelope_needs_points():
    with pytest.raises(ValueError):
        analysis.fit_envelope([1, 2, 3], [1, 1, 1], 1.0)


def test_lorentz_fit_synthetic():
    eta = np.linspace(-0.1, 0.1, 41)
    e_in, r, k = 10.0, 1.05, 0.678
    y = analysis.lorentz_model(eta, k, e_in, r)
    fit = analysis.fit_lorentzian(eta, y, e_in, r, 1.0)
    assert fit.k == pytest.approx(k, rel=1e-6)
    assert fit.eta_half == pytest.approx(1 / (24 * k * r**5), rel=1e-6)
    # the model at eta_half is half the initial energy
    assert analysis.lorentz_model(fit.eta_half, k, e_in, r) == pytest.approx(e_in / 2)
    tol = fit.tolerable_eta(0.1)
    assert analysis.lorentz_model(tol, k, e_in, r) == pytest.approx(0.1, rel=1e-9)
    with pytest.raises(ValueError):
        fit.tolerable_eta(20.0)


def test_tolerable_ratio_between_targets():
    fit = analysis.LorentzFit(0.68, 0.0, analysis.eta_half(0.68, 1.1), 1.1, 10.0, 41)
    ratio = fit.tolerable_eta(0.1, 1.0) / fit.tolerable_eta(0.1, 10.0)
    assert ratio == pytest.approx(math.sqrt((0.1 / 0.9) / (0.1 / 9.9)))


def test_parabola_vertex():
    x = np.array([1.0, 2.0, 3.0])
    assert analysis._parabola_vertex(x, (x - 2.3) ** 2) == pytest.approx(2.3)
    assert analysis._parabola_vertex(x, -(x**2)) == 2.0


def test_scaling_exponents():
    designs = analysis.scaling_designs(make_design().constraints.beta_max, (0.1, 1, 10, 100), 1.1)
    ex = analysis.scaling_exponents(designs)
    assert ex["omega0"] == pytest.approx(0.3, abs=1e-9)
    assert ex["d_c"] == pytest.approx(-0.2, abs=1e-9)
    assert ex["gamma_half"] == pytest.approx(0.4, abs=1e-9)
    assert ex["exchange_over_omega0"] == pytest.approx(0.0, abs=1e-9)


def test_cycle_grid(design):
    g = analysis.cycle_grid(design, 4.5, 5.5, 0.5)
    np.testing.assert_allclose(g / design.period, [4.5, 5.0, 5.5])


def test_robustness_grid_and_rows(design):
    params = [AnsatzParams(1.5, 400.0, 18.0), AnsatzParams(1.5, 400.0, 20.0)]
    sw = analysis.robustness_grid(design, params, [-0.01, 0.0, 0.01])
    assert sw.E1.shape == (2, 3) and not sw.flags.any()
    rows = list(sw.rows())
    assert len(rows) == 6 and rows[0][:2] == (18.0, -0.01)
    np.testing.assert_array_equal(sw.column(0.0), sw.E1[:, 1])
    # a parallel pool gives the same numbers
    sw2 = analysis.robustness_grid(design, params, [-0.01, 0.0, 0.01], jobs=2)
    np.testing.assert_array_equal(sw.E1, sw2.E1)


def test_chain_cache_roundtrip(design, tmp_path):
    store = ResultStore(tmp_path)
    t = [19.0, 20.0]
    a = analysis.optimize_chain(design, CostSpec("exact_nonrobust"), t, store)
    b = analysis.optimize_chain(design, CostSpec("exact_nonrobust"), t, store)
    assert [x.params for x in a] == [x.params for x in b]
    assert a[0].params.t_f == 19.0
    assert len(list(tmp_path.rglob("*.json"))) == 2


def test_cooling_time_on_coarse_grid(design):
    params = [AnsatzParams(5.5, 4000.0, t) for t in (15.0, 16.5, 18.0)]
    res = analysis.find_cooling_time(design, params, 10.0, n_phases=3)
    assert res.t_f.tolist() == [15.0, 16.5, 18.0]
    assert 15.0 <= res.T_c <= 18.0
    assert res.E_min == pytest.approx(res.E1[res.index])


def test_initial_energy_scan(design):
    from ioncool import dynamics
    from ioncool.trajectory import Protocol

    p = AnsatzParams(1.5, 400.0, 20.0)
    out = analysis.initial_energy_scan(design, p, [0.0, 1.0], n_phases=3)
    ground = dynamics.simulate(Protocol(design, p)).E_ex_1 / design.quantum
    assert out[0] == pytest.approx(ground, rel=1e-12)
    assert out[1] != out[0]

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ioncool import dynamics
from ioncool.acceptance import nm_vs_golden
from ioncool.export import read_csv
from ioncool.optimize import (
    B_SCALE,
    CostSpec,
    NMSettings,
    evaluate_cost,
    golden_section,
    minimize_with_fallback,
    nelder_mead,
    optimize_runtime,
    params_from_z,
    scan_seeds,
    write_trace_csv,
    z_from_params,
)
from ioncool.trajectory import AnsatzParams, Protocol


def rosenbrock(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2


def test_nm_rosenbrock():
    r = nelder_mead(rosenbrock, [-1.2, 1.0], ftol=1e-14, xtol=1e-10, max_eval=5000)
    assert r.converged
    np.testing.assert_allclose(r.x, [1.0, 1.0], atol=1e-6)
    # the best value never increases along the trace
    best = [f for _, f in r.trace]
    assert all(b <= a for a, b in zip(best, best[1:]))


def test_nm_quadratic_and_golden():
    r = nelder_mead(lambda x: (x[0] - 3) ** 2, [0.0], ftol=1e-16, xtol=1e-10)
    assert r.x[0] == pytest.approx(3.0, abs=1e-8)
    assert golden_section(lambda x: (x - 3) ** 2, -10, 10) == pytest.approx(3.0, abs=1e-8)


def test_nm_budget():
    r = nelder_mead(rosenbrock, [-1.2, 1.0], max_eval=30)
    assert not r.converged and r.n_eval <= 33


def test_nm_vs_golden_on_exact_cost(design):
    a_nm, a_g = nm_vs_golden(design, 30.0)
    assert a_nm == pytest.approx(a_g, abs=1e-3)


def test_scaled_coordinates():
    p = AnsatzParams(1.5, 2048.0, 20.0)
    z = z_from_params(p, 2)
    assert z[1] == 2048.0 / B_SCALE
    assert params_from_z(z, 20.0) == p
    assert params_from_z(z[:1], 20.0).B == 0.0


def test_scan_seeds():
    f = lambda z: math.sin(3 * z[0]) + 0.01 * z[0] ** 2  # noqa: E731
    seeds = scan_seeds(f, n_best=2, grid=(-5, 5, 0.05))
    assert len(seeds) == 2
    (x0, s0), (x1, _) = seeds
    assert f(x0) <= f(x1)
    assert x0[0] == pytest.approx(-0.52, abs=0.06)
    assert s0.tolist() == [0.05]


def test_scan_seeds_finds_narrow_valley():
    # a slanted valley far from the origin plus a broad, shallower basin at it
    def f(z):
        a, b = z
        return 1 - 0.5 * math.exp(-(a * a + b * b) / 20) - math.exp(-((b - 2 * a + 3) ** 2) / 0.5 - (a - 4) ** 2 / 4)

    seeds = scan_seeds(f, n_best=3, grid=((-10, 10, 0.5), (-10, 10, 0.5)))
    x, scale = seeds[0]
    assert scale.tolist() == [0.5, 0.5]
    r = nelder_mead(f, x, scale)
    assert r.fun < 0.0 < f(np.zeros(2)) - 0.4  # the valley, not the wide basin
    assert abs(r.x[1] - 2 * r.x[0] + 3) < 0.05 and 3 < r.x[0] < 5


def test_fallback_restarts():
    calls = []

    def f(z):
        calls.append(z.copy())
        return (z[0] - 10) ** 2 if z[0] > 5 else 1.0 + (z[0] + 1) ** 2

    best, n = minimize_with_fallback(f, np.array([0.0]), NMSettings(1e-12, 1e-10, 500), 1e-3, lambda: [np.array([8.0])])
    assert best.x[0] == pytest.approx(10.0, abs=1e-4)
    assert n == len(calls)


def test_cost_spec_validation():
    with pytest.raises(ValueError):
        CostSpec("bogus")
    with pytest.raises(ValueError):
        CostSpec("exact_robust", -0.1)
    assert CostSpec("approx_robust").n_params == 2
    assert CostSpec("exact_nonrobust").n_params == 1


def test_penalties(design):
    cost, flagged = evaluate_cost(CostSpec("exact_nonrobust"), AnsatzParams(2e7, 0, 20.0), design)
    assert flagged and cost >= 1e6 * design.quantum
    cost, flagged = evaluate_cost(CostSpec("exact_nonrobust"), AnsatzParams(-400.0, 0, 20.0), design)
    assert flagged


@given(st.sampled_from(["approx_nonrobust", "approx_robust", "exact_nonrobust", "exact_robust"]),
       st.floats(-30, 30), st.floats(-5e3, 5e3))
def test_costs_non_negative(design, kind, A, B):
    cost, _ = evaluate_cost(CostSpec(kind), AnsatzParams(A, B, 20.0), design)
    assert cost >= 0 and math.isfinite(cost)


def test_robust_cost_decomposition(design):
    p = AnsatzParams(1.5, 400.0, 20.0)
    cost, _ = evaluate_cost(CostSpec("exact_robust", 0.015), p, design)
    prot = Protocol(design, p)
    a = dynamics.simulate(prot)
    b = dynamics.simulate(prot, dynamics.SimConfig(eta=0.015))
    assert cost == pytest.approx(a.E_ex_1 + a.E_ex_2 + b.E_ex_1 + b.E_ex_2, rel=1e-12)


def test_exact_beats_approx_at_short_runtime(design):
    q = design.quantum
    ex = optimize_runtime(design, 15.0, CostSpec("exact_nonrobust"))
    ap = optimize_runtime(design, 15.0, CostSpec("approx_nonrobust"))
    assert ex.cost / q < 1e-4
    assert ap.cost / q < 1e-4  # the approximate cost itself is minimised
    e_true = dynamics.simulate(Protocol(design, ap.params)).E_ex_1 / q
    assert e_true > 1e6 * max(ex.cost / q, 1e-16)


def test_trace_csv(design, tmp_path):
    r = optimize_runtime(design, 25.0, CostSpec("exact_nonrobust"))
    path = tmp_path / "trace.csv"
    write_trace_csv(path, r, {"t_f": 25.0})
    meta, header, rows = read_csv(path)
    assert header == ["evaluations", "best_cost"] and len(rows) == len(r.trace)

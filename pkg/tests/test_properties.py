import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ioncool import dynamics, kernels
from ioncool.store import content_hash
from ioncool.trajectory import AnsatzParams, Protocol
from ioncool.units import parse_quantity

finite = dict(allow_nan=False, allow_infinity=False)


@given(st.floats(-10, 10), st.floats(-3e3, 3e3), st.floats(5, 60), st.floats(0, 0.5))
def test_protocol_time_reversal(design, A, B, t_f, frac):
    p = Protocol(design, AnsatzParams(A, B, t_f))
    ev = p.evaluate([frac * t_f, (1 - frac) * t_f])
    np.testing.assert_allclose(ev.rho[0], ev.rho[1], rtol=1e-12)
    np.testing.assert_allclose(ev.omega_plus_sq[0], ev.omega_plus_sq[1], rtol=1e-9)


@given(st.floats(0.0, 20.0), st.floats(0.0, 2 * np.pi))
def test_prepared_energy_is_positive(design, quanta, phi):
    p = Protocol(design, AnsatzParams(2.0, 0.0, 20.0))
    s0 = dynamics.prepare_state(p, 0.0, (quanta * design.quantum, 0.0), phi)
    e1, e2 = dynamics.excess_energy(s0, p)
    assert e1 >= 0 and e2 == 0.0


@given(st.floats(-0.05, 0.05), st.floats(0.0, 1.0))
def test_stray_equilibria_are_stationary(design, eta, frac):
    p = Protocol(design, AnsatzParams(2.0, 0.0, 20.0))
    pot, (x1, x2) = dynamics._equilibria_at(p, frac * 20.0, eta)
    g = dynamics._gradient(x1, x2, pot.alpha, pot.beta, pot.gamma, design.const.coulomb_constant)
    assert max(map(abs, g)) < 1e-10


@given(st.dictionaries(st.text(max_size=5), st.floats(**finite) | st.integers(), max_size=6))
def test_hash_independent_of_key_order(d):
    rev = dict(reversed(list(d.items())))
    assert content_hash(d) == content_hash(rev)


@given(st.floats(1e-6, 1e6), st.sampled_from(["um", "mm", "nm", "m"]))
def test_length_units_consistent(v, unit):
    factor = {"um": 1.0, "mm": 1e3, "nm": 1e-3, "m": 1e6}[unit]
    assert parse_quantity(f"{v!r} {unit}", "length") == pytest.approx(v * factor, rel=1e-12)


def test_fallback_path_matches_numba(design):
    """The pure-numpy kernels reproduce the compiled ones."""
    p = Protocol(design, AnsatzParams(1.5, 400.0, 20.0))
    cfg = dynamics.SimConfig(E_in=(3 * design.quantum, 0.0), phi=0.3)
    here = dynamics.simulate(p, cfg)
    code = (
        "import json, ioncool._jit as j; from ioncool import dynamics; from ioncool.trajectory import *;"
        "from ioncool.design import *;"
        f"D = solve_boundaries(PhysicalConstraints({design.constraints.beta_max!r}, {design.constraints.d0!r},"
        f" {design.constraints.d_in!r}, {design.m1!r}));"
        "p = Protocol(D, AnsatzParams(1.5, 400.0, 20.0));"
        "o = dynamics.simulate(p, dynamics.SimConfig(E_in=(3 * D.quantum, 0.0), phi=0.3));"
        "print(json.dumps([j.NUMBA_ENABLED, o.E_ex_1, o.E_ex_2, o.n_steps]))"
    )
    env = dict(os.environ, IONCOOL_DISABLE_NUMBA="1")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    enabled, e1, e2, n = json.loads(res.stdout)
    assert not enabled
    assert n == here.n_steps
    assert e1 == pytest.approx(here.E_ex_1, rel=1e-9)
    assert e2 == pytest.approx(here.E_ex_2, rel=1e-9, abs=1e-12)


def test_protocol_table_matches_point(design):
    p = Protocol(design, AnsatzParams(1.5, 400.0, 20.0))
    ts = np.linspace(0, 20, 5)
    tab = kernels.protocol_table(p.kernel_params(), ts)
    for t, row in zip(ts, tab):
        np.testing.assert_allclose(row, kernels.protocol_point(t, p.kernel_params()), rtol=0, atol=0)

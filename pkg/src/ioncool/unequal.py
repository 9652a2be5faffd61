"""Exchange protocols for ions of unequal mass.

A linear term ``gamma(t) x`` shifts the ions off-centre by ``s(t)`` so that
both local curvatures, weighted by their masses, stay equal and the
normal modes decouple. The mode frequencies follow the same auxiliary
functions as the equal-mass scheme; the kernels evaluate ``s``, ``gamma``
and their derivatives whenever the masses differ.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import dynamics
from .design import DesignBoundary, DesignError, InfeasibleDesignError, PhysicalConstraints, critical_distance
from .optimize import (
    FALLBACK_QUANTA,
    SCAN_RANGE_2D,
    SCAN_SEEDS_2D,
    NMSettings,
    OptResult,
    _penalty,
    minimize_with_fallback,
    params_from_z,
    scan_seeds,
    z_from_params,
)
from .trajectory import AnsatzParams, Protocol
from .units import CONST, PhysConstants

MASS_RATIOS = (1.25, 2.0, 5.0, 10.0)
UNEQUAL_D_IN_OVER_DC = 1.25


def _potential_from_modes(S: float, d: float, m1: float, m2: float, cc: float):
    """``(alpha, beta, gamma, s)`` for mode-frequency sum ``S`` at separation ``d``."""
    beta = (m1 + m2) * S / (8 * d * d) - 2 * cc / d**5
    s = (m2 - m1) * S / (48 * beta * d)
    alpha = cc / d**3 - beta * d * d / 2 - 6 * beta * s * s
    gamma = -2 * alpha * s - 2 * beta * (1.5 * d * d * s + 2 * s**3)
    return alpha, beta, gamma, s


def solve_boundaries_unequal(constraints: PhysicalConstraints, const: PhysConstants = CONST) -> DesignBoundary:
    """Boundary and midpoint potentials for arbitrary masses.

    At the midpoint ``d = d_in`` and ``beta = beta_max`` fix the sum and
    difference of the squared mode frequencies; the centre-of-mass
    frequency is then held for the outer separation ``d0``.
    """
    c = constraints
    cc = const.coulomb_constant
    m1, m2 = c.m1, c.m2
    mu = math.sqrt(m1 * m2)
    dc = critical_distance(c.beta_max, const)
    if c.d_in < dc * (1 - 1e-12):
        raise InfeasibleDesignError(f"d_in = {c.d_in:.4g} um is below d_c = {dc:.4g} um")
    S_in = 8 * c.d_in**2 * (c.beta_max + 2 * cc / c.d_in**5) / (m1 + m2)
    W_in = 4 * cc / (mu * c.d_in**3)
    om_m2 = (S_in - W_in) / 2
    if om_m2 <= 0:
        raise InfeasibleDesignError("centre-of-mass frequency squared is not positive")
    om_in_p2 = (S_in + W_in) / 2
    om0_p2 = om_m2 + 4 * cc / (mu * c.d0**3)
    a_in, b_in, g_in, s_in = _potential_from_modes(S_in, c.d_in, m1, m2, cc)
    a_out, b_out, g_out, s_out = _potential_from_modes(om0_p2 + om_m2, c.d0, m1, m2, cc)
    if b_out <= 0:
        raise InfeasibleDesignError(f"outer quartic coefficient {b_out:.3g} is not positive")
    # equal mass-weighted curvatures: each equals half the trace
    omega0 = math.sqrt((om0_p2 + om_m2) / 2)
    return DesignBoundary(
        constraints=c,
        alpha_out=a_out,
        beta_out=b_out,
        alpha_in=a_in,
        beta_in=b_in,
        Omega0_minus=math.sqrt(om_m2),
        Omega0_plus=math.sqrt(om0_p2),
        Omega_in_plus=math.sqrt(om_in_p2),
        omega0=omega0,
        d_c=dc,
        rho_in_plus=math.sqrt(math.sqrt(om0_p2) / math.sqrt(om_in_p2)),
        gamma_out=g_out,
        gamma_in=g_in,
        s_out=s_out,
        s_in=s_in,
        const=const,
    )


def design_for_ratio(ratio: float, beta_max: float, d0_over_dc: float = 5.0,
                     d_in_over_dc: float = UNEQUAL_D_IN_OVER_DC, m1: float = 39.96,
                     const: PhysConstants = CONST) -> DesignBoundary:
    """Design with a hot ion of mass ``m1`` and a coolant of mass ``m1 / ratio``."""
    if not ratio > 0:
        raise DesignError("mass ratio must be positive")
    c = PhysicalConstraints.from_ratios(beta_max, d0_over_dc, d_in_over_dc, m1, m1 / ratio, const)
    return solve_boundaries_unequal(c, const)


def build_unequal_protocol(design: DesignBoundary, params: AnsatzParams) -> Protocol:
    return Protocol(design, params)


def mass_weighted_hessian(protocol: Protocol, t: float) -> np.ndarray:
    """Hessian of the potential at the designed equilibria, scaled by ``1/sqrt(m_i m_j)``."""
    ev = protocol.evaluate(t)
    d, s, a, b = ev.d[0], ev.s[0], ev.alpha[0], ev.beta[0]
    cc = protocol.design.const.coulomb_constant
    m1, m2 = protocol.design.m1, protocol.design.m2
    x1, x2 = s - d / 2, s + d / 2
    k = 2 * cc / d**3
    h11 = 2 * a + 12 * b * x1 * x1 + k
    h22 = 2 * a + 12 * b * x2 * x2 + k
    return np.array([[h11 / m1, -k / math.sqrt(m1 * m2)], [-k / math.sqrt(m1 * m2), h22 / m2]])


def designed_gradient(protocol: Protocol, t: float):
    """Potential gradient at the designed equilibria ``s -+ d/2`` (zero by construction)."""
    ev = protocol.evaluate(t)
    d, s = ev.d[0], ev.s[0]
    cc = protocol.design.const.coulomb_constant
    return dynamics._gradient(s - d / 2, s + d / 2, ev.alpha[0], ev.beta[0], ev.gamma[0], cc)


@dataclass(frozen=True)
class UnequalCooling:
    ratio: float
    omega0: float
    T_c: float
    E_min_quanta: float
    found: bool


def unequal_cost(design: DesignBoundary, params: AnsatzParams,
                 sim_config: dynamics.SimConfig = dynamics.SimConfig()):
    """Total ground-state excitation of both ions and a penalty flag."""
    if not (abs(params.A) <= 1e7 and abs(params.B) <= 1e7):
        return _penalty(design, 1.0), True
    protocol = Protocol(design, params)
    chk = protocol.check()
    if not chk.valid:
        return _penalty(design, chk.violation), True
    try:
        out = dynamics.simulate(protocol, sim_config)
    except (dynamics.IntegrationError, dynamics.EquilibriumError):
        return _penalty(design, 1.0), True
    cost = out.E_ex_1 + out.E_ex_2
    if not math.isfinite(cost):
        return _penalty(design, 1.0), True
    return max(cost, 0.0), False


def optimize_unequal(design: DesignBoundary, t_f: float, n_params: int = 2,
                     warm_start: AnsatzParams | None = None, eta: float = 0.0,
                     settings: NMSettings = NMSettings(), sim_config: dynamics.SimConfig = dynamics.SimConfig()
                     ) -> OptResult:
    """Minimise the total excitation over ``A`` (``n_params = 1``) or ``(A, B)``."""
    if eta != 0.0:
        raise NotImplementedError("stray-field robustness is not available for unequal masses")
    if n_params not in (1, 2):
        raise ValueError("n_params must be 1 or 2")

    def obj(z):
        return unequal_cost(design, params_from_z(z, t_f), sim_config)[0]

    seed = np.zeros(n_params) if warm_start is None else z_from_params(warm_start, n_params)
    base = [np.zeros(n_params)] if warm_start is not None else []

    def extra():
        return base + (scan_seeds(obj) if n_params == 1 else scan_seeds(obj, SCAN_SEEDS_2D, SCAN_RANGE_2D))

    best, evaluations = minimize_with_fallback(obj, seed, settings, FALLBACK_QUANTA * design.quantum, extra)
    params = params_from_z(best.x, t_f)
    cost, flagged = unequal_cost(design, params, sim_config)
    return OptResult(params, cost, evaluations, best.converged, flagged, tuple(best.trace))


def optimize_unequal_chain(design: DesignBoundary, t_grid, n_params: int = 2, store=None,
                           settings: NMSettings = NMSettings(), sim_config: dynamics.SimConfig = dynamics.SimConfig()):
    """Warm-started optimisation down a run-time grid, cached per point."""
    from dataclasses import asdict

    from .analysis import _opt_from_record, _opt_to_record, design_key, sim_key
    from .store import NullStore

    store = store or NullStore()
    t_grid = [float(t) for t in t_grid]
    out = [None] * len(t_grid)
    warm = None
    for i in sorted(range(len(t_grid)), key=lambda i: -t_grid[i]):
        t = t_grid[i]
        key = {"design": design_key(design), "n_params": n_params, "settings": asdict(settings),
               "sim": sim_key(sim_config), "t_f": t, "warm": None if warm is None else [warm.A, warm.B]}
        rec = store.get("opt_unequal", key)
        if rec is None:
            res = optimize_unequal(design, t, n_params, warm, 0.0, settings, sim_config)
            store.put("opt_unequal", key, _opt_to_record(res))
        else:
            res = _opt_from_record(rec)
        out[i] = res
        warm = res.params
    return out


def exchange_time(design: DesignBoundary) -> float:
    """Swap time estimate at the inner separation from the Coulomb exchange rate."""
    from .design import exchange_estimate

    w = design.omega0
    return exchange_estimate(design.m1, design.m2, w, w, design.d_in, design.const)[1]


def cooling_scan_unequal(beta_max: float, t_grids: dict, ratios=MASS_RATIOS, store=None, n_phases: int = 25,
                         E_hot_quanta: float = 10.0, d_in_over_dc: float = UNEQUAL_D_IN_OVER_DC,
                         sim_config: dynamics.SimConfig = dynamics.SimConfig(), jobs: int = 1) -> list:
    """Cooling time per mass ratio; ``t_grids`` maps each ratio to its run-time grid."""
    from .analysis import find_cooling_time

    out = []
    for ratio in ratios:
        design = design_for_ratio(ratio, beta_max, d_in_over_dc=d_in_over_dc)
        opts = optimize_unequal_chain(design, t_grids[ratio], 2, store, sim_config=sim_config)
        res = find_cooling_time(design, [o.params for o in opts], E_hot_quanta, n_phases, sim_config, jobs)
        out.append(UnequalCooling(ratio, design.omega0, res.T_c, res.E_min / design.quantum, res.found))
    return out

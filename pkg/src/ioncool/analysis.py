"""Experiment layer: run-time sweeps, robustness grids and the fits built on them."""
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit, least_squares

from . import dynamics
from .design import DesignBoundary, PhysicalConstraints, solve_boundaries
from .optimize import CostSpec, NMSettings, OptResult, optimize_runtime
from .store import NullStore
from .trajectory import AnsatzParams, Protocol, stray_gamma

DEFAULT_ETA_GRID = np.linspace(-0.05, 0.05, 41)
HOT_QUANTA = 10.0
TARGET_QUANTA = 0.1
LORENTZ_THRESHOLD_QUANTA = 2.0


# ---------------------------------------------------------------- plumbing

def _map(fn, tasks, jobs=1):
    """Ordered map, optionally over a process pool."""
    tasks = list(tasks)
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def default_jobs() -> int:
    return max(1, int(os.environ.get("IONCOOL_JOBS", "1")))


def design_key(design: DesignBoundary) -> dict:
    c = design.constraints
    return {"beta_max": c.beta_max, "d0": c.d0, "d_in": c.d_in, "m1": c.m1, "m2": c.m2,
            "cc": design.const.coulomb_constant, "hbar": design.const.hbar}


def sim_key(cfg: dynamics.SimConfig) -> dict:
    return {"rel_tol": cfg.rel_tol, "abs_tol": cfg.abs_tol, "max_step": repr(cfg.max_step)}


# ---------------------------------------------------------------- results

@dataclass
class SweepResult:
    t_f: np.ndarray
    eta: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    flags: np.ndarray
    params: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def column(self, eta: float = 0.0, ion: int = 1) -> np.ndarray:
        j = int(np.argmin(np.abs(self.eta - eta)))
        return (self.E1 if ion == 1 else self.E2)[:, j]

    def rows(self):
        for i, t in enumerate(self.t_f):
            for j, e in enumerate(self.eta):
                yield (float(t), float(e), float(self.E1[i, j]), float(self.E2[i, j]), int(self.flags[i, j]))

    header = ("t_f", "eta", "E_ex_1", "E_ex_2", "flags")


@dataclass(frozen=True)
class EnvelopeFit:
    a: float
    b: float
    c: float
    d: float
    T_crit: float | None
    level: float
    cov: tuple = ()
    peak_residual: float = math.nan
    ok: bool = True

    def envelope(self, t):
        return self.a * np.exp(-self.b * np.asarray(t))

    def __call__(self, t):
        t = np.asarray(t)
        return self.envelope(t) * np.sin(self.c * t + self.d) ** 2


@dataclass(frozen=True)
class LorentzFit:
    k: float
    k_err: float
    eta_half: float
    d_in_over_dc: float
    E_in: float
    n_points: int

    def tolerable_eta(self, E_target: float, E_in: float | None = None) -> float:
        """Largest ``|eta|`` keeping the hot ion below ``E_target``."""
        r = E_target / (self.E_in if E_in is None else E_in)
        if not 0 < r < 1:
            raise ValueError("target must lie between 0 and the initial energy")
        return self.eta_half * math.sqrt(r / (1 - r))

    def model(self, eta):
        return lorentz_model(np.asarray(eta), self.k, self.E_in, self.d_in_over_dc)


@dataclass(frozen=True)
class CoolingResult:
    found: bool
    T_c: float
    E_min: float
    index: int
    t_f: np.ndarray
    E1: np.ndarray
    E2: np.ndarray

    def cycles(self, design: DesignBoundary) -> float:
        return self.T_c / design.period


# ---------------------------------------------------------------- optimisation chains

def _opt_to_record(r: OptResult) -> dict:
    return {"A": r.params.A, "B": r.params.B, "t_f": r.params.t_f, "cost": r.cost,
            "evaluations": r.evaluations, "converged": r.converged, "flagged": r.flagged}


def _opt_from_record(rec: dict) -> OptResult:
    return OptResult(AnsatzParams(rec["A"], rec["B"], rec["t_f"]), rec["cost"], rec["evaluations"],
                     rec["converged"], rec["flagged"])


def optimize_chain(design: DesignBoundary, spec: CostSpec, t_grid, store=None,
                   settings: NMSettings = NMSettings(), sim_config: dynamics.SimConfig = dynamics.SimConfig(),
                   seed: AnsatzParams | None = None, progress=None) -> list:
    """Optimise every run-time of ``t_grid``, continuing downward from the longest.

    Each optimum seeds the next shorter run-time. Results come back in the
    order of ``t_grid`` and are cached per point, the key including the
    warm start so a resumed chain reproduces the original one exactly.
    """
    store = store or NullStore()
    t_grid = [float(t) for t in t_grid]
    order = sorted(range(len(t_grid)), key=lambda i: -t_grid[i])
    out = [None] * len(t_grid)
    warm = seed
    for i in order:
        t = t_grid[i]
        key = {"design": design_key(design), "spec": asdict(spec), "settings": asdict(settings),
               "sim": sim_key(sim_config), "t_f": t,
               "warm": None if warm is None else [warm.A, warm.B]}
        rec = store.get("opt", key)
        if rec is None:
            res = optimize_runtime(design, t, spec, warm, settings, sim_config)
            store.put("opt", key, _opt_to_record(res))
        else:
            res = _opt_from_record(rec)
        out[i] = res
        warm = res.params
        if progress is not None:
            progress(res)
    return out


# ---------------------------------------------------------------- grids

def _grid_cell(task):
    design, params, eta, E_in, n_phases, cfg = task
    protocol = Protocol(design, params)
    try:
        if max(E_in) > 0:
            e1, e2 = dynamics.phase_averaged_energy(protocol, eta, E_in, n_phases, cfg)
        else:
            out = dynamics.simulate(protocol, replace(cfg, eta=eta, E_in=(0.0, 0.0)))
            e1, e2 = out.E_ex_1, out.E_ex_2
        return e1, e2, 0
    except (dynamics.IntegrationError, dynamics.EquilibriumError) as exc:
        return math.nan, math.nan, getattr(exc, "status", 9) or 9


def robustness_grid(design: DesignBoundary, params, eta_grid=DEFAULT_ETA_GRID, E_in=(0.0, 0.0),
                    n_phases: int = 25, sim_config: dynamics.SimConfig = dynamics.SimConfig(),
                    jobs: int = 1, metadata: dict | None = None) -> SweepResult:
    """Final excess energies for every ``(t_f, eta)`` pair.

    ``params`` lists one ``AnsatzParams`` per run-time. Hot-ion requests
    (any ``E_in > 0``) are averaged over ``n_phases`` initial phases.
    """
    params = list(params)
    etas = np.atleast_1d(np.asarray(eta_grid, dtype=float))
    tasks = [(design, p, float(e), tuple(E_in), n_phases, sim_config) for p in params for e in etas]
    res = _map(_grid_cell, tasks, jobs)
    shape = (len(params), etas.size)
    E1 = np.array([r[0] for r in res]).reshape(shape)
    E2 = np.array([r[1] for r in res]).reshape(shape)
    flags = np.array([r[2] for r in res], dtype=int).reshape(shape)
    t_f = np.array([p.t_f for p in params])
    meta = {"design": design_key(design), "E_in": list(E_in), "n_phases": n_phases, **(metadata or {})}
    return SweepResult(t_f, etas, E1, E2, flags, params, meta)


def runtime_sweep(design: DesignBoundary, spec: CostSpec, t_grid, store=None,
                  settings: NMSettings = NMSettings(), sim_config: dynamics.SimConfig = dynamics.SimConfig(),
                  jobs: int = 1) -> SweepResult:
    """Optimise each run-time and report the ground-state excitation at ``eta = 0``."""
    opts = optimize_chain(design, spec, t_grid, store, settings, sim_config)
    sweep = robustness_grid(design, [o.params for o in opts], [0.0], sim_config=sim_config, jobs=jobs,
                            metadata={"spec": asdict(spec), "settings": asdict(settings)})
    for i, o in enumerate(opts):
        if o.flagged:
            sweep.flags[i, :] |= 16
    sweep.metadata["costs"] = [o.cost for o in opts]
    return sweep


# ---------------------------------------------------------------- envelope fit

def _local_maxima(y):
    y = np.asarray(y)
    idx = [i for i in range(1, len(y) - 1) if y[i] >= y[i - 1] and y[i] >= y[i + 1]]
    return np.array(idx, dtype=int)


def fit_envelope(t, E, quantum: float, level_quanta: float = TARGET_QUANTA, n_freq: int = 40,
                 n_phase: int = 8) -> EnvelopeFit:
    """Fit ``a exp(-b t) sin^2(c t + d)`` to excitations in log space.

    Multi-start over the oscillation frequency ``c`` and phase ``d``; the
    critical time is where the envelope ``a exp(-b t)`` equals the level.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(E, dtype=float) / quantum
    good = np.isfinite(y) & (y > 0)
    t, y = t[good], y[good]
    if t.size < 6:
        raise ValueError("too few valid points for an envelope fit")
    span = t.max() - t.min()
    dt = np.min(np.diff(np.sort(t)))
    ly = np.log(y)
    # the upper hull seeds the envelope
    slope, icpt = np.polyfit(t, ly, 1)
    hull_icpt = icpt + np.max(ly - (slope * t + icpt))
    b0 = max(-slope, 1e-3)

    def resid(p):
        la, b, c, d = p
        s2 = np.sin(c * t + d) ** 2
        return ly - (la - b * t + np.log(s2 + 1e-300))

    best = None
    # a period of the minima pattern (pi / c) must span at least four samples
    c_lo, c_hi = math.pi / span, math.pi / (4 * dt)
    lower = [-np.inf, 0.0, c_lo, -np.inf]
    upper = [np.inf, np.inf, c_hi, np.inf]
    for c0 in np.geomspace(c_lo, c_hi, n_freq)[1:-1]:
        for d0 in np.linspace(0, math.pi, n_phase, endpoint=False):
            try:
                r = least_squares(resid, [hull_icpt, b0, c0, d0], bounds=(lower, upper), max_nfev=2000)
            except ValueError:
                continue
            if best is None or r.cost < best.cost:
                best = r
    la, b, c, d = best.x
    if c < 0:
        c, d = -c, -d
    d = d % math.pi
    a = math.exp(la)
    ok = bool(a > 0 and b > 0)
    T_crit = math.log(a / level_quanta) / b if ok else None
    cov = ()
    try:
        J = best.jac
        dof = max(t.size - 4, 1)
        s2 = 2 * best.cost / dof
        cov = tuple(map(tuple, np.linalg.inv(J.T @ J) * s2))
    except np.linalg.LinAlgError:
        pass
    fit = EnvelopeFit(a * quantum, b, c, d, T_crit, level_quanta * quantum, cov)
    peaks = _local_maxima(y)
    if peaks.size:
        model = fit(t[peaks]) / quantum
        pr = float(np.median(np.abs(model - y[peaks]) / y[peaks]))
    else:
        pr = math.nan
    return replace(fit, peak_residual=pr, ok=ok)


# ---------------------------------------------------------------- cooling

def _parabola_vertex(x, y):
    (x0, x1, x2), (y0, y1, y2) = x, y
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    A = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    B = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / den
    if A <= 0:
        return x1
    xv = -B / (2 * A)
    return min(max(xv, x0), x2)


def hot_ion_scan(design: DesignBoundary, params, E_hot_quanta: float = HOT_QUANTA, eta: float = 0.0,
                 n_phases: int = 25, sim_config: dynamics.SimConfig = dynamics.SimConfig(), jobs: int = 1):
    """Phase-averaged final energies with ion 1 hot and ion 2 in the ground state."""
    E_in = (E_hot_quanta * design.quantum, 0.0)
    return robustness_grid(design, params, [eta], E_in, n_phases, sim_config, jobs)


def find_cooling_time(design: DesignBoundary, params, E_hot_quanta: float = HOT_QUANTA, n_phases: int = 25,
                      sim_config: dynamics.SimConfig = dynamics.SimConfig(), jobs: int = 1,
                      target_quanta: float = TARGET_QUANTA) -> CoolingResult:
    """Run-time of the most complete energy swap on the supplied parameter grid."""
    params = sorted(params, key=lambda p: p.t_f)
    sweep = hot_ion_scan(design, params, E_hot_quanta, 0.0, n_phases, sim_config, jobs)
    e1, e2 = sweep.E1[:, 0], sweep.E2[:, 0]
    t = sweep.t_f
    k = int(np.nanargmin(e1))
    T_c = t[k]
    if 0 < k < len(t) - 1:
        T_c = _parabola_vertex(t[k - 1:k + 2], e1[k - 1:k + 2])
    found = bool(e1[k] < target_quanta * design.quantum)
    return CoolingResult(found, float(T_c), float(e1[k]), k, t, e1, e2)


def initial_energy_scan(design: DesignBoundary, params: AnsatzParams, E_grid_quanta, n_phases: int = 25,
                        sim_config: dynamics.SimConfig = dynamics.SimConfig()) -> np.ndarray:
    """Phase-averaged hot-ion final energy against its initial energy (both in quanta)."""
    protocol = Protocol(design, params)
    q = design.quantum
    out = []
    for e in E_grid_quanta:
        e1, _ = dynamics.phase_averaged_energy(protocol, 0.0, (float(e) * q, 0.0), n_phases, sim_config)
        out.append(e1 / q)
    return np.array(out)


# ---------------------------------------------------------------- resonance

def lorentz_model(eta, k, E_in, d_in_over_dc):
    x = 24.0 * k * d_in_over_dc**5 * eta
    return E_in * (1.0 - 1.0 / (1.0 + x * x))


def eta_half(k: float, d_in_over_dc: float) -> float:
    return 1.0 / (24.0 * k * d_in_over_dc**5)


def fit_lorentzian(eta, E1, E_in: float, d_in_over_dc: float, quantum: float,
                   threshold_quanta: float = LORENTZ_THRESHOLD_QUANTA, k0: float = 2 / 3) -> LorentzFit:
    """Fit the single width factor ``k`` on the sub-threshold part of an eta cut."""
    eta = np.asarray(eta, dtype=float)
    E1 = np.asarray(E1, dtype=float)
    sel = np.isfinite(E1) & (E1 < threshold_quanta * quantum)
    if sel.sum() < 3:
        raise ValueError("fewer than three points below the fit threshold")
    x, y = eta[sel], E1[sel] / quantum
    e_in = E_in / quantum

    def f(xx, k):
        return lorentz_model(xx, k, e_in, d_in_over_dc)

    popt, pcov = curve_fit(f, x, y, p0=[k0])
    k = abs(float(popt[0]))
    k_err = float(np.sqrt(pcov[0, 0])) if np.isfinite(pcov[0, 0]) else math.nan
    return LorentzFit(k, k_err, eta_half(k, d_in_over_dc), d_in_over_dc, E_in, int(sel.sum()))


def resonance_cut(design: DesignBoundary, params: AnsatzParams, eta_grid, E_hot_quanta: float = HOT_QUANTA,
                  n_phases: int = 25, sim_config: dynamics.SimConfig = dynamics.SimConfig(), jobs: int = 1):
    """Hot-ion final energy against the stray-field parameter at one protocol."""
    E_in = (E_hot_quanta * design.quantum, 0.0)
    sweep = robustness_grid(design, [params], eta_grid, E_in, n_phases, sim_config, jobs)
    return sweep.eta, sweep.E1[0], sweep.E2[0]


# ---------------------------------------------------------------- scaling

@dataclass(frozen=True)
class ScalingCell:
    beta_multiplier: float
    d_in_over_dc: float
    omega0: float
    d_c: float
    gamma_half: float
    T_c_cycles: float | None
    T_crit_cycles: float | None


def gamma_for_eta(design: DesignBoundary, eta: float) -> float:
    return stray_gamma(design, eta)


def power_law_exponent(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def scaling_designs(beta_ref: float, multipliers, d_in_over_dc: float, d0_over_dc: float = 5.0,
                    m: float = 39.96):
    out = []
    for mult in multipliers:
        c = PhysicalConstraints.from_ratios(beta_ref * mult, d0_over_dc, d_in_over_dc, m)
        out.append(solve_boundaries(c))
    return out


def scaling_exponents(designs, k: float = 2 / 3) -> dict:
    """Regressed power-law exponents against ``beta_max`` of the static scales."""
    beta = np.array([d.constraints.beta_max for d in designs])
    om = np.array([d.omega0 for d in designs])
    dc = np.array([d.d_c for d in designs])
    gh = np.array([gamma_for_eta(d, eta_half(k, d.d_in / d.d_c)) for d in designs])
    ratio = np.array([d.Omega_in_plus / d.omega0 for d in designs])
    return {
        "omega0": power_law_exponent(beta, om),
        "d_c": power_law_exponent(beta, dc),
        "gamma_half": power_law_exponent(beta, gh),
        "exchange_over_omega0": power_law_exponent(beta, ratio),
    }


def cycle_grid(design: DesignBoundary, lo_cycles: float, hi_cycles: float, step_cycles: float) -> np.ndarray:
    n = int(round((hi_cycles - lo_cycles) / step_cycles))
    return (lo_cycles + step_cycles * np.arange(n + 1)) * design.period

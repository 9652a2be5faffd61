"""Per-run-time optimisation of the protocol's free parameters.

The optimiser works in scaled coordinates ``z = (A, B / B_SCALE)``: ``B``
multiplies ``u^14`` and enters the low-order coefficients divided by 1024,
so without scaling a unit simplex step in ``B`` would be invisible.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import minimum_filter

from . import dynamics
from .design import DesignBoundary
from .trajectory import AnsatzParams, Protocol, aux_energies

COST_KINDS = ("approx_nonrobust", "exact_nonrobust", "approx_robust", "exact_robust")
PENALTY_QUANTA = 1e6
PARAM_BOUND = 1e7
B_SCALE = 1024.0
FALLBACK_QUANTA = 1e-3
SCAN_RANGE = (-20.0, 20.0, 0.25)  # coarse A grid seeding one-parameter problems
SCAN_RANGE_2D = ((-20.0, 20.0, 0.5), (-64.0, 64.0, 2.0))  # (A, B/1024) grid for two parameters
SCAN_SEEDS_2D = 8


@dataclass(frozen=True)
class CostSpec:
    kind: str
    eta_design: float = 0.015

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}; expected one of {COST_KINDS}")
        if not self.eta_design >= 0:
            raise ValueError("eta_design must be non-negative")

    @property
    def robust(self) -> bool:
        return self.kind.endswith("_robust")

    @property
    def exact(self) -> bool:
        return self.kind.startswith("exact")

    @property
    def n_params(self) -> int:
        return 2 if self.robust else 1


@dataclass(frozen=True)
class NMSettings:
    ftol: float = 1e-10
    xtol: float = 1e-9
    max_eval: int = 2000


@dataclass
class NMResult:
    x: np.ndarray
    fun: float
    n_eval: int
    converged: bool
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class OptResult:
    params: AnsatzParams
    cost: float
    evaluations: int
    converged: bool
    flagged: bool = False
    trace: tuple = ()

    def cost_quanta(self, design: DesignBoundary) -> float:
        return self.cost / design.quantum


def nelder_mead(objective, x0, simplex_scale=None, ftol=1e-10, xtol=1e-9, max_eval=2000,
                f_target=-math.inf) -> NMResult:
    """Downhill simplex with coefficients (1, 2, 1/2, 1/2).

    Stops when both the cost spread over the simplex is below ``ftol`` and
    the largest vertex distance from the best vertex is below ``xtol``,
    when the best cost reaches ``f_target``, or after ``max_eval`` calls.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.size
    if simplex_scale is None:
        simplex_scale = np.where(x0 != 0, 0.1 * np.abs(x0), 1.0)
    step = np.broadcast_to(np.asarray(simplex_scale, dtype=float), (n,))
    sim = np.tile(x0, (n + 1, 1))
    for i in range(n):
        sim[i + 1, i] += step[i]
    n_eval = 0
    trace = []

    def f(x):
        nonlocal n_eval
        n_eval += 1
        v = float(objective(x))
        return v if math.isfinite(v) else math.inf

    fs = np.array([f(x) for x in sim])
    converged = False
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        trace.append((n_eval, fs[0]))
        if fs[0] <= f_target:
            converged = True
            break
        size = np.max(np.abs(sim[1:] - sim[0]))
        if fs[-1] - fs[0] <= ftol and size <= xtol:
            converged = True
            break
        if n_eval >= max_eval:
            break
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = f(xr)
        if fs[0] <= fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (sim[-1] - centroid)
            fc = f(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
            fs[i] = f(sim[i])
    best = int(np.argmin(fs))
    return NMResult(sim[best].copy(), float(fs[best]), n_eval, converged, trace)


def golden_section(objective, lo, hi, tol=1e-10, max_iter=200):
    """Minimum of a unimodal scalar function on ``[lo, hi]``."""
    g = (math.sqrt(5) - 1) / 2
    a, b = float(lo), float(hi)
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * (1 + abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = objective(d)
    return (a + b) / 2


def params_from_z(z, t_f: float) -> AnsatzParams:
    z = np.atleast_1d(z)
    B = float(z[1]) * B_SCALE if z.size > 1 else 0.0
    return AnsatzParams(float(z[0]), B, float(t_f))


def z_from_params(params: AnsatzParams, n_params: int) -> np.ndarray:
    z = [params.A, params.B / B_SCALE]
    return np.array(z[:n_params])


def _penalty(design: DesignBoundary, violation: float) -> float:
    return PENALTY_QUANTA * design.quantum * (1.0 + min(violation, 1e3))


def evaluate_cost(spec: CostSpec, params: AnsatzParams, design: DesignBoundary,
                  sim_config: dynamics.SimConfig = dynamics.SimConfig()):
    """Cost in internal energy units and whether the penalty branch was taken."""
    if not (abs(params.A) <= PARAM_BOUND and abs(params.B) <= PARAM_BOUND):
        return _penalty(design, 1.0), True
    protocol = Protocol(design, params)
    chk = protocol.check()
    if not chk.valid:
        return _penalty(design, chk.violation), True
    try:
        if spec.kind == "approx_nonrobust":
            cost = aux_energies(protocol, 0.0)[0]
        elif spec.kind == "approx_robust":
            e_p, e_m = aux_energies(protocol, spec.eta_design)
            cost = e_p + e_m
        elif spec.kind == "exact_nonrobust":
            cost = dynamics.simulate(protocol, sim_config).E_ex_1
        else:
            cost = 0.0
            for eta in (0.0, spec.eta_design):
                out = dynamics.simulate(protocol, _with_eta(sim_config, eta))
                cost += out.E_ex_1 + out.E_ex_2
    except (dynamics.IntegrationError, dynamics.EquilibriumError, FloatingPointError):
        return _penalty(design, 1.0), True
    if not math.isfinite(cost):
        return _penalty(design, 1.0), True
    # tiny negative values are rounding noise at the energy floor
    return max(cost, 0.0), False


def _with_eta(cfg: dynamics.SimConfig, eta: float) -> dynamics.SimConfig:
    from dataclasses import replace

    return replace(cfg, eta=eta, E_in=(0.0, 0.0), n_samples=0)


def scan_seeds(objective, n_best: int = 3, grid=SCAN_RANGE) -> list:
    """Lowest local minima of ``objective`` on a coarse grid, best first.

    ``grid`` is one ``(lo, hi, step)`` triple per parameter. The costs
    oscillate in ``A`` and the good two-parameter basins are narrow valleys,
    so a simplex started at the wrong place stalls; the scan hands it seeds.
    Each seed comes with the grid steps as its simplex scale.
    """
    grids = [grid] if np.isscalar(grid[0]) else list(grid)
    axes = [lo + step * np.arange(int(round((hi - lo) / step)) + 1) for lo, hi, step in grids]
    steps = np.array([g[2] for g in grids], dtype=float)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    fs = np.array([float(objective(x)) for x in pts]).reshape(mesh[0].shape)
    fs[~np.isfinite(fs)] = np.inf
    is_min = fs == minimum_filter(fs, size=3, mode="nearest")
    idx = np.flatnonzero(is_min & np.isfinite(fs))
    idx = idx[np.argsort(fs.ravel()[idx], kind="stable")][:n_best]
    return [(pts[i].copy(), steps) for i in idx]


def minimize_with_fallback(objective, seed, settings: NMSettings = NMSettings(), fallback_cost: float = math.inf,
                           extra_seeds=()):
    """Nelder-Mead from ``seed``; if the result stays above ``fallback_cost``,
    restart from ``seed`` plus and minus one simplex step and from every
    ``extra_seeds`` entry, returning the best run and the total evaluations.
    ``extra_seeds`` may be a callable, evaluated only when the restart happens;
    an entry is a point or a ``(point, simplex_scale)`` pair.
    """
    seed = np.asarray(seed, dtype=float)
    scale = np.where(seed != 0, 0.1 * np.abs(seed), 1.0)
    runs = [nelder_mead(objective, seed, scale, settings.ftol, settings.xtol, settings.max_eval)]
    if runs[0].fun > fallback_cost:
        if callable(extra_seeds):
            extra_seeds = extra_seeds()
        for s in [*extra_seeds, seed + scale, seed - scale]:
            s, sc = s if isinstance(s, tuple) else (s, None)
            s = np.asarray(s, dtype=float)
            if sc is None:
                sc = np.where(s != 0, 0.1 * np.abs(s), 1.0)
            runs.append(nelder_mead(objective, s, sc, settings.ftol, settings.xtol, settings.max_eval))
    best = min(runs, key=lambda r: r.fun)
    return best, sum(r.n_eval for r in runs)


def optimize_runtime(design: DesignBoundary, t_f: float, spec: CostSpec, warm_start: AnsatzParams | None = None,
                     settings: NMSettings = NMSettings(), sim_config: dynamics.SimConfig = dynamics.SimConfig(),
                     fallback: bool = True) -> OptResult:
    """Best ansatz parameters at one run-time.

    Starts from ``warm_start`` (or ``A = B = 0``); if the converged cost
    stays above 1e-3 quanta, restarts from the default seed, from the
    lowest local minima of a coarse scan over ``A`` (and ``B``) and from the
    seed shifted by one simplex step either way, keeping the best.
    """
    n = spec.n_params

    def obj(z):
        return evaluate_cost(spec, params_from_z(z, t_f), design, sim_config)[0]

    seed = np.zeros(n) if warm_start is None else z_from_params(warm_start, n)
    base = [np.zeros(n)] if warm_start is not None else []

    def extra():
        return base + (scan_seeds(obj) if n == 1 else scan_seeds(obj, SCAN_SEEDS_2D, SCAN_RANGE_2D))

    threshold = FALLBACK_QUANTA * design.quantum if fallback else math.inf
    best, evaluations = minimize_with_fallback(obj, seed, settings, threshold, extra)
    params = params_from_z(best.x, t_f)
    cost, flagged = evaluate_cost(spec, params, design, sim_config)
    return OptResult(params, cost, evaluations, best.converged, flagged, tuple(best.trace))


def write_trace_csv(path, result: OptResult, metadata: dict | None = None):
    from .export import metadata_lines

    with open(path, "w", newline="") as fh:
        for line in metadata_lines(metadata or {}):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(["evaluations", "best_cost"])
        for n_eval, fbest in result.trace:
            w.writerow([n_eval, repr(float(fbest))])

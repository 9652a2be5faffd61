"""Command-line front end.

Exit codes: 0 success, 1 infeasible physics, 2 configuration or unit error,
3 numerical failure (including failed validation criteria).
"""
import argparse
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, analysis, dynamics
from .acceptance import UNEQUAL_GRID, UNEQUAL_SCAN_MAX, AcceptanceContext, run_all
from .config import ConfigError, ExperimentConfig, GridSpec, load_config, table1_config
from .design import DesignError, solve_boundaries
from .export import base_metadata, csv_text, json_text
from .optimize import CostSpec
from .store import NullStore, ResultStore
from .trajectory import UnphysicalTrajectoryError
from .unequal import UNEQUAL_D_IN_OVER_DC, design_for_ratio, optimize_unequal_chain, solve_boundaries_unequal
from .units import UnitError

EXIT_OK, EXIT_PHYSICS, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _design(cfg: ExperimentConfig):
    c = cfg.constraints
    return solve_boundaries(c) if c.equal_mass else solve_boundaries_unequal(c)


def _t_grid(cfg: ExperimentConfig, design) -> np.ndarray:
    return cfg.t_grid.values(design.period)


class Runner:
    def __init__(self, cfg: ExperimentConfig, out: Path, store, jobs: int, command: str):
        self.cfg, self.out, self.store, self.jobs, self.command = cfg, out, store, jobs, command

    def meta(self, **extra):
        return base_metadata(self.cfg.physics_subset(), command=self.command, **extra)

    def write(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(text)
        return path

    def chain(self, design, spec: CostSpec | None = None, t_grid=None):
        spec = spec or self.cfg.cost
        t = _t_grid(self.cfg, design) if t_grid is None else t_grid
        return analysis.optimize_chain(design, spec, t, self.store, self.cfg.optimizer, self.cfg.sim)


# ---------------------------------------------------------------- subcommands

def cmd_design(r: Runner, args) -> int:
    d = _design(r.cfg)
    report = {"design": d.summary()}
    r.write("design.json", json_text(report, r.meta()))
    s = d.summary()
    print(f"d_c = {s['d_c']:.3f} um  omega0/2pi = {s['omega0_over_2pi_MHz']:.4f} MHz  period = {s['period_us']:.4f} us")
    for k, v in s.items():
        print(f"  {k:22s} {v:.10g}")
    return EXIT_OK


def cmd_optimize(r: Runner, args) -> int:
    d = _design(r.cfg)
    opts = r.chain(d)
    q = d.quantum
    rows = [(o.params.t_f, o.params.A, o.params.B, o.cost / q, o.evaluations, int(o.converged), int(o.flagged))
            for o in opts]
    header = ("t_f", "A", "B", "cost_quanta", "evaluations", "converged", "flagged")
    meta = r.meta(cost=asdict(r.cfg.cost), optimizer=asdict(r.cfg.optimizer))
    path = r.write("optimize.csv", csv_text(header, rows, meta))
    print(f"{len(rows)} run-times optimised -> {path}")
    return EXIT_NUMERIC if any(o.flagged for o in opts) else EXIT_OK


def cmd_sweep(r: Runner, args) -> int:
    d = _design(r.cfg)
    opts = r.chain(d)
    sw = analysis.robustness_grid(d, [o.params for o in opts], r.cfg.eta_grid, sim_config=r.cfg.sim, jobs=r.jobs)
    q = d.quantum
    rows = [(t, e, e1 / q, e2 / q, f) for t, e, e1, e2, f in sw.rows()]
    header = ("t_f", "eta", "E_ex_1_quanta", "E_ex_2_quanta", "flags")
    meta = r.meta(cost=asdict(r.cfg.cost), optimizer=asdict(r.cfg.optimizer))
    path = r.write("sweep.csv", csv_text(header, rows, meta))
    print(f"{len(rows)} grid cells -> {path}")
    return EXIT_NUMERIC if np.any(sw.flags) else EXIT_OK


def _cool(r: Runner, design):
    spec = CostSpec("exact_robust", r.cfg.cost.eta_design)
    opts = r.chain(design, spec)
    t_max = r.cfg.scan_max_cycles * design.period * (1 + 1e-12)
    params = [o.params for o in opts if o.params.t_f <= t_max]
    res = analysis.find_cooling_time(design, params, r.cfg.hot_quanta, r.cfg.n_phases, r.cfg.sim, r.jobs)
    return opts, res


def cmd_cool(r: Runner, args) -> int:
    d = _design(r.cfg)
    opts, res = _cool(r, d)
    q = d.quantum
    report = {"T_c_us": res.T_c, "T_c_cycles": res.cycles(d), "E_min_quanta": res.E_min / q, "found": res.found,
              "hot_quanta": r.cfg.hot_quanta, "n_phases": r.cfg.n_phases}
    r.write("cool.json", json_text(report, r.meta()))
    rows = [(t, e1 / q, e2 / q) for t, e1, e2 in zip(res.t_f, res.E1, res.E2)]
    r.write("cool_scan.csv", csv_text(("t_f", "E_1_quanta", "E_2_quanta"), rows, r.meta()))
    state = "minimum" if res.found else "no minimum below 0.1 quanta; best"
    print(f"{state}: T_c = {res.T_c:.3f} us ({res.cycles(d):.2f} cycles), E = {res.E_min / q:.4g} quanta")
    return EXIT_OK


def cmd_resonance(r: Runner, args) -> int:
    d = _design(r.cfg)
    _, res = _cool(r, d)
    opts = r.chain(d, CostSpec("exact_robust", r.cfg.cost.eta_design))
    scanned = sorted((o.params for o in opts if o.params.t_f <= r.cfg.scan_max_cycles * d.period * (1 + 1e-12)),
                     key=lambda p: p.t_f)
    params = scanned[res.index]
    eta, e1, e2 = analysis.resonance_cut(d, params, r.cfg.eta_grid, r.cfg.hot_quanta, r.cfg.n_phases, r.cfg.sim,
                                         r.jobs)
    q = d.quantum
    rows = [(float(x), a / q, b / q) for x, a, b in zip(eta, e1, e2)]
    r.write("resonance.csv", csv_text(("eta", "E_1_quanta", "E_2_quanta"), rows, r.meta(t_f=params.t_f)))
    fit = analysis.fit_lorentzian(eta, e1, r.cfg.hot_quanta * q, r.cfg.d_in_over_dc, q)
    tol = fit.tolerable_eta(0.1 * q)
    report = {"t_f": params.t_f, "k": fit.k, "k_err": fit.k_err, "eta_half": fit.eta_half,
              "tolerable_eta_to_0.1": tol, "n_points": fit.n_points,
              "gamma_half": analysis.gamma_for_eta(d, fit.eta_half)}
    r.write("resonance.json", json_text(report, r.meta()))
    print(f"k = {fit.k:.4f} +- {fit.k_err:.2g}, eta_half = {fit.eta_half:.5f}, tolerable |eta| = {tol:.5f}")
    return EXIT_OK


def cmd_scale(r: Runner, args) -> int:
    base = r.cfg.constraints
    designs = analysis.scaling_designs(base.beta_max, r.cfg.beta_multipliers, r.cfg.d_in_over_dc,
                                       r.cfg.d0_over_dc, base.m1)
    ex = analysis.scaling_exponents(designs)
    rows = []
    for mult, d in zip(r.cfg.beta_multipliers, designs):
        T_c = None
        if not args.static_only:
            _, res = _cool(r, d)
            T_c = res.cycles(d)
        rows.append((mult, d.d_in / d.d_c, d.omega0, d.d_c,
                     analysis.gamma_for_eta(d, analysis.eta_half(2 / 3, d.d_in / d.d_c)),
                     math.nan if T_c is None else T_c))
    header = ("beta_multiplier", "d_in_over_dc", "omega0", "d_c", "gamma_half", "T_c_cycles")
    r.write("scale.csv", csv_text(header, rows, r.meta()))
    r.write("scale.json", json_text({"exponents": ex}, r.meta()))
    print("exponents: " + ", ".join(f"{k} {v:.4f}" for k, v in ex.items()))
    for row in rows:
        print(f"  x{row[0]:<6g} T_c = {row[-1]:.2f} cycles")
    return EXIT_OK


def cmd_unequal(r: Runner, args) -> int:
    # the unequal-mass study has its own inner separation and microsecond grid
    # unless the command line says otherwise
    rows = []
    base = r.cfg.constraints
    d_in = args.d_in_over_dc if args.d_in_over_dc is not None else UNEQUAL_D_IN_OVER_DC
    own_grid = all(getattr(args, f"t_{k}") is None for k in ("start", "stop", "step", "unit"))
    for ratio in r.cfg.mass_ratios:
        d = design_for_ratio(ratio, base.beta_max, r.cfg.d0_over_dc, d_in, base.m1)
        if own_grid:
            lo, hi, step = UNEQUAL_GRID
            t_grid = GridSpec(lo, hi, step).values(d.period)
            t_max = UNEQUAL_SCAN_MAX * (1 + 1e-12)
        else:
            t_grid = _t_grid(r.cfg, d)
            t_max = r.cfg.scan_max_cycles * d.period * (1 + 1e-12)
        opts = optimize_unequal_chain(d, t_grid, 2, r.store, r.cfg.optimizer, r.cfg.sim)
        params = [o.params for o in opts if o.params.t_f <= t_max]
        res = analysis.find_cooling_time(d, params, r.cfg.hot_quanta, r.cfg.n_phases, r.cfg.sim, r.jobs)
        rows.append((ratio, d.m1, d.m2, d.omega0 / (2 * math.pi), res.T_c, res.E_min / d.quantum, int(res.found)))
        print(f"m1/m2 = {ratio:g}: omega0/2pi = {rows[-1][3]:.3f} MHz, T_c = {res.T_c:.2f} us, "
              f"E = {rows[-1][5]:.4g} quanta")
    header = ("mass_ratio", "m1", "m2", "omega0_over_2pi_MHz", "T_c", "E_min_quanta", "found")
    r.write("unequal.csv", csv_text(header, rows, r.meta()))
    return EXIT_OK


def cmd_validate(r: Runner, args) -> int:
    only = None
    if args.only:
        try:
            only = sorted({int(x) for x in args.only.split(",")})
        except ValueError as exc:
            raise ConfigError(f"--only expects comma-separated criterion numbers: {exc}") from exc
        if not set(only) <= set(range(1, 12)):
            raise ConfigError("criteria are numbered 1 to 11")
    ctx = AcceptanceContext(r.cfg, r.store, r.jobs)
    results = run_all(ctx, only, report=lambda res: print(res.line(), flush=True))
    report = {"criteria": [{"number": x.number, "name": x.name, "passed": x.passed, "detail": x.detail,
                            "measured": x.measured} for x in results]}
    r.write("validate.json", json_text(report, r.meta()))
    n_ok = sum(x.passed for x in results)
    print(f"{n_ok}/{len(results)} criteria passed")
    return EXIT_OK if n_ok == len(results) else EXIT_NUMERIC


COMMANDS = {
    "design": (cmd_design, "solve the boundary potentials"),
    "optimize": (cmd_optimize, "optimise the protocol over the run-time grid"),
    "sweep": (cmd_sweep, "ground-state robustness grid over run-time and stray field"),
    "cool": (cmd_cool, "hot-ion cooling time"),
    "resonance": (cmd_resonance, "stray-field resonance cut and Lorentzian fit"),
    "scale": (cmd_scale, "scaling with the quartic confinement strength"),
    "unequal": (cmd_unequal, "cooling with unequal ion masses"),
    "validate": (cmd_validate, "run the reference acceptance checks"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ioncool", description="Exchange cooling of two ions in a dynamic double well.")
    p.add_argument("--version", action="version", version=f"ioncool {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        sp = sub.add_parser(name, help=helptext)
        if name != "validate":
            sp.add_argument("config", nargs="?", help="TOML configuration (default: bundled reference design)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--jobs", type=int, help="worker processes")
        sp.add_argument("--cache", help="cache directory")
        sp.add_argument("--no-cache", action="store_true", help="do not read or write cached results")
        if name != "validate":
            sp.add_argument("--d-in-over-dc", type=float, help="override the inner separation")
            sp.add_argument("--t-start", type=float, help="run-time grid start")
            sp.add_argument("--t-stop", type=float, help="run-time grid stop")
            sp.add_argument("--t-step", type=float, help="run-time grid step")
            sp.add_argument("--t-unit", choices=("us", "cycles"), help="unit of the run-time grid overrides")
        if name == "scale":
            sp.add_argument("--static-only", action="store_true", help="skip the cooling-time optimisations")
        if name == "validate":
            sp.add_argument("--only", help="comma-separated criterion numbers")
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "d_in_over_dc", None) is not None:
        if not args.d_in_over_dc > 0:
            raise ConfigError("--d-in-over-dc must be positive")
        cfg = cfg.with_d_in(args.d_in_over_dc)
    g = cfg.t_grid
    vals = {k: getattr(args, f"t_{k}", None) for k in ("start", "stop", "step", "unit")}
    if any(v is not None for v in vals.values()):
        g = GridSpec(*(vals[k] if vals[k] is not None else getattr(g, k) for k in ("start", "stop", "step", "unit")))
        if not (g.step > 0 and g.stop >= g.start > 0):
            raise ConfigError("run-time grid needs 0 < start <= stop and step > 0")
        cfg = replace(cfg, t_grid=g)
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = replace(cfg, jobs=args.jobs)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        cfg_path = getattr(args, "config", None)
        cfg = load_config(cfg_path) if cfg_path else table1_config()
        cfg = _apply_overrides(cfg, args)
        if args.no_cache:
            store = NullStore()
        else:
            store = ResultStore(args.cache or cfg.cache_dir)
        out = Path(args.out or cfg.output_dir)
        return fn(Runner(cfg, out, store, cfg.jobs, args.command), args)
    except (ConfigError, UnitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DesignError as exc:
        print(f"infeasible design: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except (dynamics.IntegrationError, dynamics.EquilibriumError, UnphysicalTrajectoryError, FloatingPointError,
            ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""TOML experiment configuration with explicit units.

Quantities are strings such as ``"0.85e-3 N/m^3"`` or ``"39.96 amu"``;
separations may instead be given relative to the critical distance through
``d0_over_dc`` / ``d_in_over_dc``. Run-time grids are either explicit
lists or ``{start, stop, step}`` tables, optionally in motional cycles.
"""
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .design import PhysicalConstraints, critical_distance
from .dynamics import SimConfig
from .optimize import CostSpec, NMSettings
from .units import CONST, UnitError, parse_quantity


class ConfigError(ValueError):
    pass


TABLE1_TOML = """\
# Reference design: 40Ca+ ions in a dynamic double well
[constraints]
beta_max = "0.85e-3 N/m^3"
d0_over_dc = 5.0
d_in_over_dc = 1.1
m1 = "39.96 amu"

[cost]
kind = "exact_robust"
eta_design = 0.015

[grids]
t_f = { start = 4.5, stop = 22.5, step = 0.2, unit = "cycles" }
eta = { start = -0.05, stop = 0.05, num = 41 }
d_in_over_dc = [1.0, 1.05, 1.1, 1.15, 1.2, 1.25]
beta_multipliers = [0.1, 1.0, 10.0, 100.0]
mass_ratios = [1.25, 2.0, 5.0, 10.0]

[integrator]
rel_tol = 1e-10
abs_tol = 1e-12

[optimizer]
ftol = 1e-10
xtol = 1e-9
max_eval = 2000

[cooling]
hot_quanta = 10.0
n_phases = 25
scan_max_cycles = 11.0
envelope_max_cycles = 13.5

[output]
directory = "ioncool-out"
jobs = 1
"""


@dataclass(frozen=True)
class GridSpec:
    start: float
    stop: float
    step: float
    unit: str = "us"

    def values(self, period: float) -> np.ndarray:
        n = int(round((self.stop - self.start) / self.step))
        v = self.start + self.step * np.arange(n + 1)
        return v * period if self.unit == "cycles" else v


@dataclass(frozen=True)
class ExperimentConfig:
    constraints: PhysicalConstraints
    d0_over_dc: float
    d_in_over_dc: float
    cost: CostSpec
    t_grid: GridSpec
    eta_grid: tuple
    d_in_grid: tuple
    beta_multipliers: tuple
    mass_ratios: tuple
    sim: SimConfig
    optimizer: NMSettings
    hot_quanta: float = 10.0
    n_phases: int = 25
    scan_max_cycles: float = 11.0
    envelope_max_cycles: float = 13.5
    output_dir: str = "ioncool-out"
    cache_dir: str | None = None
    jobs: int = 1
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def with_d_in(self, d_in_over_dc: float) -> "ExperimentConfig":
        dc = critical_distance(self.constraints.beta_max)
        c = replace(self.constraints, d_in=d_in_over_dc * dc)
        return replace(self, constraints=c, d_in_over_dc=d_in_over_dc)

    def physics_subset(self) -> dict:
        """Everything that influences results; output locations excluded."""
        c = self.constraints
        return {
            "constraints": {"beta_max": c.beta_max, "d0": c.d0, "d_in": c.d_in, "m1": c.m1, "m2": c.m2},
            "cost": asdict(self.cost),
            "t_grid": asdict(self.t_grid),
            "eta_grid": list(self.eta_grid),
            "d_in_grid": list(self.d_in_grid),
            "beta_multipliers": list(self.beta_multipliers),
            "mass_ratios": list(self.mass_ratios),
            "sim": {"rel_tol": self.sim.rel_tol, "abs_tol": self.sim.abs_tol},
            "optimizer": asdict(self.optimizer),
            "cooling": [self.hot_quanta, self.n_phases, self.scan_max_cycles, self.envelope_max_cycles],
        }


def _section(doc, name):
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _quantity(sec, key, expected, required=True, default=None):
    if key not in sec:
        if required:
            raise ConfigError(f"missing field {key!r}")
        return default
    try:
        return parse_quantity(sec[key], expected)
    except UnitError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _number(sec, key, default):
    v = sec.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number, got {v!r}")
    return float(v)


def _monotone(name, values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ConfigError(f"grid {name!r} is empty")
    if not np.all(np.isfinite(v)) or np.any(np.diff(v) <= 0):
        raise ConfigError(f"grid {name!r} must be finite and strictly increasing")
    return tuple(float(x) for x in v)


def _tgrid(spec) -> GridSpec:
    if isinstance(spec, list):
        v = _monotone("t_f", spec)
        if len(v) == 1:
            return GridSpec(v[0], v[0], 1.0)
        steps = np.diff(v)
        if not np.allclose(steps, steps[0]):
            raise ConfigError("explicit t_f lists must be evenly spaced")
        return GridSpec(v[0], v[-1], float(steps[0]))
    if not isinstance(spec, dict):
        raise ConfigError("grids.t_f must be a list or a {start, stop, step} table")
    unit = spec.get("unit", "us")
    if unit not in ("us", "cycles"):
        raise ConfigError("grids.t_f.unit must be 'us' or 'cycles'")
    try:
        g = GridSpec(float(spec["start"]), float(spec["stop"]), float(spec["step"]), unit)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad t_f grid: {exc}") from exc
    if not (g.step > 0 and g.stop >= g.start > 0):
        raise ConfigError("t_f grid needs 0 < start <= stop and step > 0")
    return g


def _etagrid(spec) -> tuple:
    if isinstance(spec, list):
        return _monotone("eta", spec)
    try:
        return _monotone("eta", np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"])))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad eta grid: {exc}") from exc


def parse_config(doc: dict) -> ExperimentConfig:
    c = _section(doc, "constraints")
    beta_max = _quantity(c, "beta_max", "quartic")
    dc = critical_distance(beta_max, CONST)
    if "d0" in c:
        d0 = _quantity(c, "d0", "length")
        d0_r = d0 / dc
    else:
        d0_r = _number(c, "d0_over_dc", None) if "d0_over_dc" in c else None
        if d0_r is None:
            raise ConfigError("missing field 'd0' or 'd0_over_dc'")
    if "d_in" in c:
        din_r = _quantity(c, "d_in", "length") / dc
    elif "d_in_over_dc" in c:
        din_r = _number(c, "d_in_over_dc", None)
    else:
        raise ConfigError("missing field 'd_in' or 'd_in_over_dc'")
    m1 = _quantity(c, "m1", "mass")
    m2 = _quantity(c, "m2", "mass", required=False, default=m1)
    try:
        constraints = PhysicalConstraints(beta_max, d0_r * dc, din_r * dc, m1, m2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    cs = _section(doc, "cost")
    try:
        cost = CostSpec(cs.get("kind", "exact_robust"), _number(cs, "eta_design", 0.015))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    g = _section(doc, "grids")
    t_grid = _tgrid(g.get("t_f", {"start": 4.5, "stop": 22.5, "step": 0.2, "unit": "cycles"}))
    eta = _etagrid(g.get("eta", {"start": -0.05, "stop": 0.05, "num": 41}))
    d_in_grid = _monotone("d_in_over_dc", g.get("d_in_over_dc", [din_r]))
    mults = _monotone("beta_multipliers", g.get("beta_multipliers", [1.0]))
    ratios = _monotone("mass_ratios", g.get("mass_ratios", [2.0]))

    integ = _section(doc, "integrator")
    try:
        sim = SimConfig(rel_tol=_number(integ, "rel_tol", 1e-10), abs_tol=_number(integ, "abs_tol", 1e-12))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    opt = _section(doc, "optimizer")
    nm = NMSettings(_number(opt, "ftol", 1e-10), _number(opt, "xtol", 1e-9), int(_number(opt, "max_eval", 2000)))
    if nm.max_eval < 1:
        raise ConfigError("optimizer.max_eval must be positive")

    cool = _section(doc, "cooling")
    out = _section(doc, "output")
    n_phases = int(_number(cool, "n_phases", 25))
    if n_phases < 1:
        raise ConfigError("cooling.n_phases must be at least 1")
    jobs = int(_number(out, "jobs", 1))
    return ExperimentConfig(
        constraints=constraints,
        d0_over_dc=d0_r,
        d_in_over_dc=din_r,
        cost=cost,
        t_grid=t_grid,
        eta_grid=eta,
        d_in_grid=d_in_grid,
        beta_multipliers=mults,
        mass_ratios=ratios,
        sim=sim,
        optimizer=nm,
        hot_quanta=_number(cool, "hot_quanta", 10.0),
        n_phases=n_phases,
        scan_max_cycles=_number(cool, "scan_max_cycles", 11.0),
        envelope_max_cycles=_number(cool, "envelope_max_cycles", 13.5),
        output_dir=str(out.get("directory", "ioncool-out")),
        cache_dir=out.get("cache"),
        jobs=max(1, jobs),
        source=doc,
    )


def loads(text: str) -> ExperimentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return parse_config(doc)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return loads(text)


def table1_config() -> ExperimentConfig:
    return loads(TABLE1_TOML)


def period_of(constraints: PhysicalConstraints) -> float:
    """Motional period of a design, used to resolve grids given in cycles."""
    from .design import solve_boundaries
    from .unequal import solve_boundaries_unequal

    d = solve_boundaries(constraints) if constraints.equal_mass else solve_boundaries_unequal(constraints)
    return 2 * math.pi / d.omega0

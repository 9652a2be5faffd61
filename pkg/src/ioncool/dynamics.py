"""Classical two-ion dynamics under a time-dependent double well.

The electrode potential at time ``t`` is
``V(x) = gamma x + alpha x^2 + beta x^4`` (gamma includes a constant stray
field), the ions repel through ``C / (x2 - x1)``. The excess energy of an
ion is measured with the Coulomb term linearised about the instantaneous
equilibrium positions.
"""
import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import kernels
from .trajectory import Protocol, stray_gamma

__all__ = [
    "EquilibriumError",
    "IntegrationError",
    "IonState",
    "SimConfig",
    "SimOutcome",
    "exact_equilibria",
    "local_curvatures",
    "prepare_state",
    "integrate",
    "excess_energy",
    "phase_averaged_energy",
    "phase_resolved_energies",
    "write_trajectory_csv",
]

_STATUS_TEXT = {
    kernels.STATUS_STEP_TOO_SMALL: "step size collapsed",
    kernels.STATUS_ORDER_VIOLATION: "ions swapped order",
    kernels.STATUS_BAD_PROTOCOL: "protocol became unphysical",
    kernels.STATUS_MAX_STEPS: "step budget exhausted",
    kernels.STATUS_WELL_ESCAPE: "an ion ended in the other well",
}


class EquilibriumError(RuntimeError):
    pass


class IntegrationError(RuntimeError):
    def __init__(self, status: int):
        self.status = status
        super().__init__(_STATUS_TEXT.get(status, f"integration failed with status {status}"))


@dataclass(frozen=True)
class IonState:
    x1: float
    x2: float
    p1: float
    p2: float
    t: float = 0.0

    def __post_init__(self):
        if not self.x2 > self.x1:
            raise ValueError("ion order violated: need x2 > x1")

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.p1, self.p2])


@dataclass(frozen=True)
class SimConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = math.inf
    max_steps: int = 2_000_000
    eta: float = 0.0
    E_in: tuple = (0.0, 0.0)
    phi: float = 0.0
    n_samples: int = 0

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if len(self.E_in) != 2 or min(self.E_in) < 0:
            raise ValueError("E_in must be two non-negative energies")


@dataclass(frozen=True)
class SimOutcome:
    E_ex_1: float
    E_ex_2: float
    final: IonState
    n_steps: int
    n_fev: int
    samples: np.ndarray | None = field(default=None, repr=False)


class _Potential(NamedTuple):
    alpha: float
    beta: float
    gamma: float


def _potential_at(protocol: Protocol, t: float, eta: float) -> _Potential:
    ev = protocol.evaluate(t)
    if not np.isfinite(ev.d[0]):
        raise EquilibriumError(f"protocol is unphysical at t = {t}")
    gamma = ev.gamma[0] + stray_gamma(protocol.design, eta)
    return _Potential(float(ev.alpha[0]), float(ev.beta[0]), float(gamma))


def _barrier(pot: _Potential) -> float:
    """Position of the central maximum of the electrode potential, NaN for a single well."""
    if not (pot.alpha < 0 and pot.beta > 0):
        return math.nan
    r = np.roots([4 * pot.beta, 0.0, 2 * pot.alpha, pot.gamma])
    r = np.sort(r[np.abs(r.imag) <= 1e-9 * np.abs(r).max()].real)
    return float(r[1]) if r.size == 3 else math.nan


def _check_sides(x1, x2, pot: _Potential):
    # an ion that crossed the barrier has no meaningful excess energy
    xb = _barrier(pot)
    if not (math.isnan(xb) or x1 < xb < x2):
        raise IntegrationError(kernels.STATUS_WELL_ESCAPE)


def _gradient(x1, x2, alpha, beta, gamma, cc):
    r = x2 - x1
    fc = cc / (r * r)
    g1 = gamma + 2 * alpha * x1 + 4 * beta * x1**3 + fc
    g2 = gamma + 2 * alpha * x2 + 4 * beta * x2**3 - fc
    return g1, g2


def _hessian(x1, x2, alpha, beta, cc):
    r = x2 - x1
    k = 2 * cc / r**3
    return (2 * alpha + 12 * beta * x1 * x1 + k, -k, 2 * alpha + 12 * beta * x2 * x2 + k)


def exact_equilibria(alpha, beta, gamma, const_cc, seed=None, tol=1e-12, max_iter=100):
    """Stationary point ``(x1, x2)`` of the two-ion potential, ``x1 < x2``.

    Damped 2-D Newton iteration starting from the symmetric configuration
    shifted by the first-order response to ``gamma`` (or from ``seed``).
    """
    if not beta > 0:
        raise EquilibriumError("quartic coefficient must be positive")
    if seed is None:
        from .design import equilibrium_distance
        from .units import PhysConstants

        d = equilibrium_distance(alpha, beta, PhysConstants(const_cc, 1.0))
        k_com = 2 * alpha + 3 * beta * d * d
        shift = -gamma / k_com if k_com > 0 else 0.0
        x1, x2 = -d / 2 + shift, d / 2 + shift
    else:
        x1, x2 = map(float, seed)

    g1, g2 = _gradient(x1, x2, alpha, beta, gamma, const_cc)
    gnorm = math.hypot(g1, g2)
    for _ in range(max_iter):
        if gnorm < tol:
            return x1, x2
        h11, h12, h22 = _hessian(x1, x2, alpha, beta, const_cc)
        det = h11 * h22 - h12 * h12
        if det == 0 or not math.isfinite(det):
            break
        dx1 = -(h22 * g1 - h12 * g2) / det
        dx2 = -(h11 * g2 - h12 * g1) / det
        lam = 1.0
        while lam > 1e-6:
            n1, n2 = x1 + lam * dx1, x2 + lam * dx2
            if n2 > n1:
                ng1, ng2 = _gradient(n1, n2, alpha, beta, gamma, const_cc)
                nn = math.hypot(ng1, ng2)
                if nn < gnorm or nn < tol:
                    break
            lam *= 0.5
        else:
            # no descent possible: at the rounding floor if already tiny
            if gnorm < 1e3 * tol:
                return x1, x2
            break
        x1, x2, g1, g2, gnorm = n1, n2, ng1, ng2, nn
    if gnorm < tol:
        return x1, x2
    raise EquilibriumError(f"Newton iteration did not converge (|grad| = {gnorm:.3g})")


def _equilibria_at(protocol: Protocol, t: float, eta: float):
    pot = _potential_at(protocol, t, eta)
    ev = protocol.evaluate(t)
    seed = None
    if ev.s[0] != 0.0:
        seed = (ev.s[0] - ev.d[0] / 2, ev.s[0] + ev.d[0] / 2)
    cc = protocol.design.const.coulomb_constant
    return pot, exact_equilibria(pot.alpha, pot.beta, pot.gamma, cc, seed=seed)


def local_curvatures(protocol: Protocol, t: float = 0.0, eta: float = 0.0):
    """Local trap frequencies ``(w1, w2)`` at the exact equilibria."""
    pot, (x1, x2) = _equilibria_at(protocol, t, eta)
    h11, _, h22 = _hessian(x1, x2, pot.alpha, pot.beta, protocol.design.const.coulomb_constant)
    return math.sqrt(h11 / protocol.design.m1), math.sqrt(h22 / protocol.design.m2)


def prepare_state(protocol: Protocol, eta: float = 0.0, E_in=(0.0, 0.0), phi=0.0) -> IonState:
    """Initial state with ion ``i`` carrying energy ``E_in[i]`` at phase ``phi``.

    ``phi = 0`` puts all energy into momentum, ``phi = pi/2`` into a
    displacement sized with the exact local curvature (harmonic mapping).
    ``phi`` may be a scalar or one phase per ion.
    """
    if min(E_in) < 0:
        raise ValueError("initial energies must be non-negative")
    phis = (phi, phi) if np.ndim(phi) == 0 else tuple(phi)
    pot, (x1, x2) = _equilibria_at(protocol, 0.0, eta)
    cc = protocol.design.const.coulomb_constant
    h11, _, h22 = _hessian(x1, x2, pot.alpha, pot.beta, cc)
    xs, ps = [x1, x2], [0.0, 0.0]
    for i, (m, k) in enumerate(((protocol.design.m1, h11), (protocol.design.m2, h22))):
        e = E_in[i]
        if e > 0:
            xs[i] += math.sqrt(2 * e / k) * math.sin(phis[i])
            ps[i] = math.sqrt(2 * m * e) * math.cos(phis[i])
    return IonState(xs[0], xs[1], ps[0], ps[1], 0.0)


def _ion_excess(x, p, m, x0, g0, pot):
    dx = x - x0
    a2 = pot.alpha + 6 * pot.beta * x0 * x0
    return p * p / (2 * m) + dx * (g0 + dx * (a2 + dx * (4 * pot.beta * x0 + dx * pot.beta)))


def excess_energy(state: IonState, protocol: Protocol, eta: float = 0.0, ion_index=None):
    """Excess energy of one ion (``ion_index`` 1 or 2) or of both as a tuple.

    The electrode-potential difference is expanded exactly in powers of the
    displacement from equilibrium, which avoids cancellation for tiny
    excitations; the residual equilibrium gradient is carried along.
    """
    pot, (x10, x20) = _equilibria_at(protocol, state.t, eta)
    cc = protocol.design.const.coulomb_constant
    g1, g2 = _gradient(x10, x20, pot.alpha, pot.beta, pot.gamma, cc)
    e1 = _ion_excess(state.x1, state.p1, protocol.design.m1, x10, g1, pot)
    e2 = _ion_excess(state.x2, state.p2, protocol.design.m2, x20, g2, pot)
    if ion_index is None:
        return e1, e2
    if ion_index not in (1, 2):
        raise ValueError("ion_index must be 1 or 2")
    return e1 if ion_index == 1 else e2


def total_energy(state: IonState, protocol: Protocol, eta: float = 0.0) -> float:
    """Full two-ion Hamiltonian, including the Coulomb repulsion."""
    pot = _potential_at(protocol, state.t, eta)
    cc = protocol.design.const.coulomb_constant

    def v(x):
        return pot.gamma * x + pot.alpha * x * x + pot.beta * x**4

    kin = state.p1**2 / (2 * protocol.design.m1) + state.p2**2 / (2 * protocol.design.m2)
    return kin + v(state.x1) + v(state.x2) + cc / (state.x2 - state.x1)


def integrate(protocol: Protocol, state0: IonState, config: SimConfig = SimConfig(), t_end=None) -> SimOutcome:
    """Propagate the ions from ``state0.t`` to ``t_end`` (default ``t_f``).

    Raises ``IntegrationError`` when the integrator fails or when an ion
    ends on the wrong side of the central barrier.
    """
    t_end = protocol.t_f if t_end is None else float(t_end)
    if not math.isfinite(t_end):
        raise ValueError("a finite end time is required")
    pp = protocol.kernel_params(gamma_stray=stray_gamma(protocol.design, config.eta))
    if config.n_samples > 1:
        t_out = np.linspace(state0.t, t_end, config.n_samples)
    else:
        t_out = np.array([t_end])
    ys, status, n_steps, _, n_fev = kernels.integrate(
        kernels.MODE_IONS, pp, state0.as_array(), state0.t, t_out,
        config.rel_tol, config.abs_tol, config.max_step, config.max_steps,
    )
    if status != kernels.STATUS_OK:
        raise IntegrationError(int(status))
    y = ys[-1]
    final = IonState(float(y[0]), float(y[1]), float(y[2]), float(y[3]), t_end)
    _check_sides(final.x1, final.x2, _potential_at(protocol, t_end, config.eta))
    e1, e2 = excess_energy(final, protocol, config.eta)
    samples = None
    if config.n_samples > 1:
        samples = np.empty((t_out.size, 7))
        samples[:, 0] = t_out
        samples[:, 1:5] = ys
        for k, t in enumerate(t_out):
            st = IonState(*ys[k], t=float(t))
            samples[k, 5:7] = excess_energy(st, protocol, config.eta)
    return SimOutcome(float(e1), float(e2), final, int(n_steps), int(n_fev), samples)


def simulate(protocol: Protocol, config: SimConfig = SimConfig()) -> SimOutcome:
    """Prepare the initial state described by ``config`` and integrate to ``t_f``."""
    state0 = prepare_state(protocol, config.eta, config.E_in, config.phi)
    return integrate(protocol, state0, config)


def phase_resolved_energies(protocol: Protocol, eta=0.0, E_in=(0.0, 0.0), n_phases=25,
                            config: SimConfig = SimConfig()) -> np.ndarray:
    """``E_ex`` of both ions for phases ``2 pi k / n_phases``, shape ``(n, 2)``."""
    if n_phases < 1:
        raise ValueError("n_phases must be at least 1")
    cfg = replace(config, eta=eta, E_in=tuple(E_in), n_samples=0)
    phases = 2 * math.pi * np.arange(n_phases) / n_phases
    if max(E_in) == 0:
        out = simulate(protocol, cfg)
        return np.tile([out.E_ex_1, out.E_ex_2], (n_phases, 1))
    y0s = np.array([prepare_state(protocol, eta, E_in, ph).as_array() for ph in phases])
    pp = protocol.kernel_params(gamma_stray=stray_gamma(protocol.design, eta))
    finals, status = kernels.phase_scan_final(
        pp, y0s, protocol.t_f, cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.max_steps
    )
    bad = status != kernels.STATUS_OK
    if np.any(bad):
        raise IntegrationError(int(status[bad][0]))
    # all runs end on the same potential: one equilibrium solve serves every phase
    pot, (x10, x20) = _equilibria_at(protocol, protocol.t_f, eta)
    cc = protocol.design.const.coulomb_constant
    g1, g2 = _gradient(x10, x20, pot.alpha, pot.beta, pot.gamma, cc)
    e = np.empty((n_phases, 2))
    for k, y in enumerate(finals):
        _check_sides(y[0], y[1], pot)
        e[k, 0] = _ion_excess(y[0], y[2], protocol.design.m1, x10, g1, pot)
        e[k, 1] = _ion_excess(y[1], y[3], protocol.design.m2, x20, g2, pot)
    return e


def phase_averaged_energy(protocol: Protocol, eta=0.0, E_in=(0.0, 0.0), n_phases=25,
                          config: SimConfig = SimConfig()):
    """Mean excess energy per ion over uniformly spaced initial phases."""
    e = phase_resolved_energies(protocol, eta, E_in, n_phases, config)
    return float(e[:, 0].mean()), float(e[:, 1].mean())


def write_trajectory_csv(path, outcome: SimOutcome, metadata: dict | None = None):
    """Dump dense samples as CSV with '#'-prefixed metadata lines."""
    if outcome.samples is None:
        raise ValueError("outcome carries no samples; run with n_samples > 1")
    from .export import metadata_lines

    with open(path, "w", newline="") as fh:
        for line in metadata_lines(metadata or {}):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(["t", "x1", "x2", "p1", "p2", "E_ex_1", "E_ex_2"])
        for row in outcome.samples:
            w.writerow([repr(float(v)) for v in row])

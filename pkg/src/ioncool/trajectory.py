"""Invariant-engineered exchange protocols.

The stretch-mode auxiliary ``rho_+`` is a degree-14 even polynomial in
``t/t_f - 1/2`` with two free parameters ``A`` (its curvature at mid-run)
and ``B`` (the top coefficient); the centre-of-mass auxiliary is fixed to 1.
From ``rho_+`` follow the mode frequencies, the ion distance and the
potential coefficients, all with analytic time derivatives.
"""
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .design import DesignBoundary

_BETA_TOL = 1e-9


class UnphysicalTrajectoryError(ValueError):
    """Stretch frequency fell to the centre-of-mass frequency or below."""


@dataclass(frozen=True)
class AnsatzParams:
    A: float
    B: float
    t_f: float

    def __post_init__(self):
        if not self.t_f > 0:
            raise ValueError(f"run-time must be positive, got {self.t_f!r}")


class ProtocolSamples(NamedTuple):
    t: np.ndarray
    rho: np.ndarray
    omega_plus_sq: np.ndarray
    omega_minus_sq: np.ndarray
    d: np.ndarray
    d_dot: np.ndarray
    d_ddot: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    s: np.ndarray
    s_dot: np.ndarray
    s_ddot: np.ndarray


class ProtocolCheck(NamedTuple):
    valid: bool
    w_min: float
    beta_min: float
    beta_max_ratio: float
    reason: str

    @property
    def violation(self) -> float:
        """Non-negative size of the constraint violation, 0 when valid."""
        v = 0.0
        if not self.w_min > 0:
            v += 1.0 + abs(self.w_min)
        if not self.beta_min > 0:
            v += 1.0 + abs(self.beta_min)
        if self.beta_max_ratio > 1 + _BETA_TOL:
            v += self.beta_max_ratio - 1
        return v


class AuxiliarySolution(NamedTuple):
    q: float
    q_dot: float
    E_q: float


def rho_plus(s, A: float, B: float, rho_in: float) -> np.ndarray:
    """Stretch auxiliary and its first four derivatives in normalised time.

    Returns an array of shape ``(5,) + np.shape(s)``.
    """
    coef = kernels.rho_coefficients(A, B, rho_in)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.empty((5, s_arr.size))
    for i, si in enumerate(s_arr.ravel()):
        out[:, i] = kernels.rho_derivatives(si, coef)
    return out.reshape((5,) + np.shape(s))


def rho_minus(t=None):
    """The centre-of-mass auxiliary is identically 1."""
    return 1.0 if t is None else np.ones_like(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class Protocol:
    """Time-dependent double-well potential for one choice of ``(A, B, t_f)``."""

    design: DesignBoundary
    params: AnsatzParams
    _pp: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = self.design
        pp = np.zeros(kernels.PP_SIZE)
        pp[kernels.PP_TF] = self.params.t_f
        pp[kernels.PP_OM0P2] = d.Omega0_plus**2
        pp[kernels.PP_OMM2] = d.Omega0_minus**2
        pp[kernels.PP_CC] = d.const.coulomb_constant
        pp[kernels.PP_M1] = d.m1
        pp[kernels.PP_M2] = d.m2
        pp[kernels.PP_COEF:kernels.PP_COEF + 8] = kernels.rho_coefficients(
            self.params.A, self.params.B, d.rho_in_plus
        )
        pp.setflags(write=False)
        object.__setattr__(self, "_pp", pp)

    @classmethod
    def build(cls, design: DesignBoundary, A: float, B: float, t_f: float) -> "Protocol":
        return cls(design, AnsatzParams(float(A), float(B), float(t_f)))

    @property
    def t_f(self) -> float:
        return self.params.t_f

    @property
    def equal_mass(self) -> bool:
        return self.design.m1 == self.design.m2

    def kernel_params(self, gamma_stray: float = 0.0, s_tilde: float = 0.0) -> np.ndarray:
        pp = self._pp.copy()
        pp[kernels.PP_GAMMA] = gamma_stray
        pp[kernels.PP_STILDE] = s_tilde
        return pp

    def evaluate(self, t) -> ProtocolSamples:
        """All protocol functions at the times ``t`` (NaN where unphysical)."""
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        tab = kernels.protocol_table(self._pp, ts)
        om_m2 = np.full(ts.shape, self.design.Omega0_minus**2)
        return ProtocolSamples(
            ts, tab[:, 0], tab[:, 11], om_m2, tab[:, 2], tab[:, 3], tab[:, 4],
            tab[:, 5], tab[:, 6], tab[:, 7], tab[:, 8], tab[:, 9], tab[:, 10],
        )

    def omega_plus_sq(self, t):
        ev = self.evaluate(t)
        if np.any(ev.omega_plus_sq <= ev.omega_minus_sq):
            raise UnphysicalTrajectoryError("stretch frequency reaches the centre-of-mass frequency")
        return ev.omega_plus_sq if np.ndim(t) else float(ev.omega_plus_sq[0])

    def distance_and_potential(self, t):
        """``(d, d_dot, d_ddot, alpha, beta)`` at ``t``."""
        ev = self.evaluate(t)
        if np.any(ev.omega_plus_sq <= ev.omega_minus_sq):
            raise UnphysicalTrajectoryError("stretch frequency reaches the centre-of-mass frequency")
        out = (ev.d, ev.d_dot, ev.d_ddot, ev.alpha, ev.beta)
        if np.ndim(t) == 0:
            return tuple(float(v[0]) for v in out)
        return out

    def local_frequency_sq(self, t):
        """Squared local trap frequency of ion 1 (equal to ion 2 by design)."""
        ev = self.evaluate(t)
        cc = self.design.const.coulomb_constant
        x1 = ev.s - ev.d / 2
        return (2 * ev.alpha + 12 * ev.beta * x1**2 + 2 * cc / ev.d**3) / self.design.m1

    def check(self, n: int = 801) -> ProtocolCheck:
        """Sampled physicality check used as the optimiser's penalty trigger."""
        w_min, b_min, b_max, _ = kernels.protocol_extrema(self._pp, n)
        ratio = b_max / self.design.constraints.beta_max
        if not w_min > 0:
            reason = "stretch frequency at or below centre-of-mass frequency"
        elif not b_min > 0:
            reason = "quartic coefficient became negative"
        elif ratio > 1 + _BETA_TOL:
            reason = f"quartic coefficient exceeds beta_max by {ratio - 1:.2e}"
        else:
            reason = ""
        return ProtocolCheck(reason == "", float(w_min), float(b_min), float(ratio), reason)

    def midpoint_mismatch(self) -> float:
        """Relative deviation of ``d(t_f/2)`` from ``d_in``."""
        d_mid = self.evaluate(self.t_f / 2).d[0]
        return d_mid / self.design.d_in - 1.0

    def to_dict(self, n_samples: int = 2001) -> dict:
        ts = np.linspace(0.0, self.t_f, n_samples)
        ev = self.evaluate(ts)
        return {
            "constraints": self.design.summary(),
            "params": {"A": self.params.A, "B": self.params.B, "t_f": self.params.t_f},
            "units": "mass=amu, length=um, time=us",
            "samples": {
                "t": ts.tolist(),
                "alpha": ev.alpha.tolist(),
                "beta": ev.beta.tolist(),
                "gamma": ev.gamma.tolist(),
                "d": ev.d.tolist(),
            },
        }

    def to_json(self, n_samples: int = 2001, **kwargs) -> str:
        return json.dumps(self.to_dict(n_samples), **kwargs)


def _integrate_aux(protocol: Protocol, s_tilde: float, rtol: float, atol: float):
    if not protocol.equal_mass:
        raise ValueError("mode auxiliaries are implemented for equal masses only")
    pp = protocol.kernel_params(s_tilde=s_tilde)
    ys, status, *_ = kernels.integrate(
        kernels.MODE_AUX, pp, np.zeros(4), 0.0, np.array([protocol.t_f]), rtol, atol, np.inf, 10**7
    )
    if status != kernels.STATUS_OK:
        raise FloatingPointError(f"auxiliary integration failed (status {status})")
    return ys[0]


def _mode_energy(q, q_dot, om2, forcing):
    return 0.5 * q_dot**2 + 0.5 * om2 * (q + forcing / om2) ** 2


def solve_q_plus(protocol: Protocol, rtol: float = 1e-10, atol: float = 1e-12) -> AuxiliarySolution:
    """Stretch-mode centre auxiliary at ``t_f`` and its energy share."""
    y = _integrate_aux(protocol, 0.0, rtol, atol)
    ev = protocol.evaluate(protocol.t_f)
    force = math.sqrt(protocol.design.m1 / 2) * ev.d_ddot[0]
    e = _mode_energy(y[0], y[1], ev.omega_plus_sq[0], force)
    return AuxiliarySolution(float(y[0]), float(y[1]), float(e))


def stray_shift(protocol: Protocol, eta: float) -> float:
    """First-order centre-of-mass shift ``-eta * d_in`` of a stray field."""
    return -eta * protocol.design.d_in


def stray_gamma(design: DesignBoundary, eta: float) -> float:
    """Homogeneous-field coefficient producing the perturbation ``eta``."""
    return eta * design.m1 * design.Omega0_minus**2 * design.d_in


def perturbed_aux(protocol: Protocol, eta: float, rtol: float = 1e-10, atol: float = 1e-12) -> AuxiliarySolution:
    """Centre-of-mass auxiliary driven by the stray-field mode mixing."""
    if abs(eta) > 0.2:
        raise ValueError(f"|eta| = {abs(eta)} is outside the first-order regime (<= 0.2)")
    if abs(eta) > 0.1:
        import warnings

        warnings.warn(f"eta = {eta} is large for a first-order treatment", stacklevel=2)
    s_t = stray_shift(protocol, eta)
    y = _integrate_aux(protocol, s_t, rtol, atol)
    ev = protocol.evaluate(protocol.t_f)
    cc = protocol.design.const.coulomb_constant
    delta = 3 * ev.beta[0] * ev.d[0] ** 4 * s_t / cc
    force = math.sqrt(protocol.design.m1 / 2) * ev.d_ddot[0] * delta
    e = _mode_energy(y[2], y[3], ev.omega_minus_sq[0], force)
    return AuxiliarySolution(float(y[2]), float(y[3]), float(e))


def aux_energies(protocol: Protocol, eta: float, rtol: float = 1e-10, atol: float = 1e-12):
    """``(E_q+, E~_q-)`` at ``t_f`` from a single integration pass."""
    s_t = stray_shift(protocol, eta)
    y = _integrate_aux(protocol, s_t, rtol, atol)
    ev = protocol.evaluate(protocol.t_f)
    sq = math.sqrt(protocol.design.m1 / 2)
    cc = protocol.design.const.coulomb_constant
    delta = 3 * ev.beta[0] * ev.d[0] ** 4 * s_t / cc
    e_plus = _mode_energy(y[0], y[1], ev.omega_plus_sq[0], sq * ev.d_ddot[0])
    e_minus = _mode_energy(y[2], y[3], ev.omega_minus_sq[0], sq * ev.d_ddot[0] * delta)
    return float(e_plus), float(e_minus)


def frequency_mismatch(protocol: Protocol, eta: float, t):
    """First-order local-frequency difference ``w2 - w1`` between the ions under a stray field."""
    ev = protocol.evaluate(t)
    m = protocol.design.m1
    cc = protocol.design.const.coulomb_constant
    w_i = np.sqrt((2 * ev.beta * ev.d**2 + 4 * cc / ev.d**3) / m)
    dw = 12 * ev.beta * ev.d * stray_shift(protocol, eta) / (m * w_i)
    return dw if np.ndim(t) else float(dw[0])

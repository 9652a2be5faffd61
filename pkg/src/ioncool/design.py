"""Static design of the double-well exchange protocol.

From the experimental constraints (maximal quartic confinement, outer and
inner ion separation, ion masses) this module derives the potential
coefficients at the start/end and at the midpoint of the protocol, the
normal-mode frequencies there and the initial local trap frequency.

The symmetric electrode potential is ``V(x) = alpha x^2 + beta x^4``; two
ions of equal mass in it sit at ``-d/2`` and ``+d/2`` with ``d`` the unique
positive root of ``beta d^5 + 2 alpha d^3 - 2 C = 0``.
"""
import math
from dataclasses import dataclass, field

from .units import CONST, PhysConstants


class DesignError(ValueError):
    """Physically infeasible design request."""


class InfeasibleDesignError(DesignError):
    pass


class WellCollapseError(DesignError):
    """The centre-of-mass curvature vanished: ions share a single well."""


@dataclass(frozen=True)
class PhysicalConstraints:
    """Experiment definition in internal units (amu, um)."""

    beta_max: float
    d0: float
    d_in: float
    m1: float
    m2: float | None = None

    def __post_init__(self):
        if self.m2 is None:
            object.__setattr__(self, "m2", self.m1)
        if self.beta_max <= 0:
            raise DesignError("beta_max must be positive")
        if self.m1 <= 0 or self.m2 <= 0:
            raise DesignError("masses must be positive")
        if not self.d0 > self.d_in > 0:
            raise DesignError("need d0 > d_in > 0")

    @property
    def equal_mass(self) -> bool:
        return self.m1 == self.m2

    @classmethod
    def from_ratios(cls, beta_max, d0_over_dc, d_in_over_dc, m1, m2=None, const=CONST):
        dc = critical_distance(beta_max, const)
        return cls(beta_max, d0_over_dc * dc, d_in_over_dc * dc, m1, m2)


@dataclass(frozen=True)
class ModeFrequencies:
    omega_minus: float
    omega_plus: float
    curvature_1: float
    curvature_2: float
    d: float


@dataclass(frozen=True)
class DesignBoundary:
    """Boundary (t=0, t_f) and midpoint (t_f/2) values of the protocol."""

    constraints: PhysicalConstraints
    alpha_out: float
    beta_out: float
    alpha_in: float
    beta_in: float
    Omega0_minus: float
    Omega0_plus: float
    Omega_in_plus: float
    omega0: float
    d_c: float
    rho_in_plus: float
    gamma_out: float = 0.0
    gamma_in: float = 0.0
    s_out: float = 0.0
    s_in: float = 0.0
    const: PhysConstants = field(default=CONST, repr=False)

    @property
    def d0(self) -> float:
        return self.constraints.d0

    @property
    def d_in(self) -> float:
        return self.constraints.d_in

    @property
    def m1(self) -> float:
        return self.constraints.m1

    @property
    def m2(self) -> float:
        return self.constraints.m2

    @property
    def quantum(self) -> float:
        """Phonon energy hbar*omega0 in internal energy units."""
        return self.const.hbar * self.omega0

    @property
    def period(self) -> float:
        """Motional period 2 pi / omega0 in us."""
        return 2.0 * math.pi / self.omega0

    def summary(self) -> dict:
        c = self.constraints
        return {
            "beta_max": c.beta_max,
            "d0": c.d0,
            "d_in": c.d_in,
            "m1": c.m1,
            "m2": c.m2,
            "d_c": self.d_c,
            "alpha_out": self.alpha_out,
            "beta_out": self.beta_out,
            "gamma_out": self.gamma_out,
            "alpha_in": self.alpha_in,
            "beta_in": self.beta_in,
            "gamma_in": self.gamma_in,
            "Omega0_minus": self.Omega0_minus,
            "Omega0_plus": self.Omega0_plus,
            "Omega_in_plus": self.Omega_in_plus,
            "omega0": self.omega0,
            "omega0_over_2pi_MHz": self.omega0 / (2 * math.pi),
            "rho_in_plus": self.rho_in_plus,
            "quantum": self.quantum,
            "period_us": self.period,
        }


def critical_distance(beta_max: float, const: PhysConstants = CONST) -> float:
    """Smallest inner separation keeping the ions in separate wells."""
    if not beta_max > 0:
        raise DesignError(f"beta_max must be positive, got {beta_max!r}")
    return (2.0 * const.coulomb_constant / beta_max) ** 0.2


def distance_residual(alpha: float, beta: float, d: float, const: PhysConstants = CONST) -> float:
    """Relative residual of the equilibrium-distance quintic at ``d``."""
    cc = const.coulomb_constant
    return (beta * d**5 + 2 * alpha * d**3 - 2 * cc) / (2 * cc)


def equilibrium_distance(alpha: float, beta: float, const: PhysConstants = CONST) -> float:
    """Positive root of ``beta d^5 + 2 alpha d^3 - 2 C = 0``.

    Newton iteration safeguarded by a shrinking bracket; the quintic has
    exactly one positive root whenever ``beta > 0``.
    """
    if not beta > 0:
        raise InfeasibleDesignError(f"quartic coefficient must be positive, got {beta!r}")
    cc = const.coulomb_constant

    def f(d):
        return beta * d**5 + 2 * alpha * d**3 - 2 * cc

    def df(d):
        return 5 * beta * d**4 + 6 * alpha * d**2

    lo = 0.0
    hi = max((2 * cc / beta) ** 0.2, math.sqrt(max(-2 * alpha / beta, 0.0)), 1e-12)
    while f(hi) < 0:
        lo = hi
        hi *= 2.0
    # Newton from the upper end converges monotonically for this convex tail.
    d = hi
    for _ in range(200):
        fd = f(d)
        if fd == 0.0:
            return d
        if fd < 0:
            lo = d
        else:
            hi = d
        slope = df(d)
        step = fd / slope if slope > 0 else math.inf
        d_new = d - step
        if not lo < d_new < hi:
            d_new = 0.5 * (lo + hi)
        if abs(d_new - d) <= 1e-15 * d:
            return d_new
        d = d_new
    raise InfeasibleDesignError("equilibrium distance did not converge")


def normal_modes(alpha: float, beta: float, m: float, const: PhysConstants = CONST) -> ModeFrequencies:
    """Normal-mode and local frequencies of two equal ions in the symmetric well."""
    cc = const.coulomb_constant
    d = equilibrium_distance(alpha, beta, const)
    om_minus2 = (2 * alpha + 3 * beta * d * d) / m
    if om_minus2 <= 0:
        raise WellCollapseError(f"centre-of-mass frequency squared {om_minus2:.3g} <= 0")
    om_plus2 = om_minus2 + 4 * cc / (m * d**3)
    w2 = (2 * beta * d * d + 4 * cc / d**3) / m
    w = math.sqrt(w2)
    return ModeFrequencies(math.sqrt(om_minus2), math.sqrt(om_plus2), w, w, d)


def solve_boundaries(constraints: PhysicalConstraints, const: PhysConstants = CONST) -> DesignBoundary:
    """Boundary and midpoint potentials for equal masses.

    The midpoint takes ``beta = beta_max`` at ``d_in``; the outer potential
    is fixed by requiring the same centre-of-mass frequency at ``d0``.
    """
    c = constraints
    if not c.equal_mass:
        raise DesignError("unequal masses: use ioncool.unequal.solve_boundaries_unequal")
    cc = const.coulomb_constant
    m = c.m1
    dc = critical_distance(c.beta_max, const)
    if c.d_in < dc * (1 - 1e-12):
        raise InfeasibleDesignError(f"d_in = {c.d_in:.4g} um is below d_c = {dc:.4g} um")

    beta_in = c.beta_max
    alpha_in = cc / c.d_in**3 - beta_in * c.d_in**2 / 2
    m_om_minus2 = 2 * cc / c.d_in**3 + 2 * beta_in * c.d_in**2
    beta_out = (m_om_minus2 - 2 * cc / c.d0**3) / (2 * c.d0**2)
    alpha_out = cc / c.d0**3 - beta_out * c.d0**2 / 2
    if beta_out <= 0 or alpha_out >= 0:
        raise InfeasibleDesignError(
            f"outer potential is not a double well (alpha_out={alpha_out:.3g}, beta_out={beta_out:.3g})"
        )
    om_minus = math.sqrt(m_om_minus2 / m)
    om0_plus = math.sqrt(m_om_minus2 / m + 4 * cc / (m * c.d0**3))
    om_in_plus = math.sqrt(m_om_minus2 / m + 4 * cc / (m * c.d_in**3))
    omega0 = math.sqrt((2 * beta_out * c.d0**2 + 4 * cc / c.d0**3) / m)
    return DesignBoundary(
        constraints=c,
        alpha_out=alpha_out,
        beta_out=beta_out,
        alpha_in=alpha_in,
        beta_in=beta_in,
        Omega0_minus=om_minus,
        Omega0_plus=om0_plus,
        Omega_in_plus=om_in_plus,
        omega0=omega0,
        d_c=dc,
        rho_in_plus=math.sqrt(om0_plus / om_in_plus),
        const=const,
    )


def exchange_estimate(m1, m2, omega1, omega2, d, const: PhysConstants = CONST):
    """Coulomb exchange frequency between two resonant wells and the swap time."""
    for name, v in (("m1", m1), ("m2", m2), ("omega1", omega1), ("omega2", omega2), ("d", d)):
        if not v > 0:
            raise DesignError(f"{name} must be positive, got {v!r}")
    freq = const.coulomb_constant / (math.sqrt(m1 * m2) * math.sqrt(omega1 * omega2) * d**3)
    return freq, math.pi / (2 * freq)

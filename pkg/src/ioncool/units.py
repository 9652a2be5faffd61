"""Internal unit system and parsing of quantities with unit suffixes.

Internally masses are in amu, lengths in micrometres and times in
microseconds. The derived energy unit is amu * um^2 / us^2, about
1.66e-27 J, which keeps all design quantities within a few orders of
magnitude of unity.
"""
import math
import re
from dataclasses import dataclass

from scipy import constants as sc

AMU_KG = sc.atomic_mass
LENGTH_M = 1e-6
TIME_S = 1e-6
ENERGY_J = AMU_KG * LENGTH_M**2 / TIME_S**2

UNIT_SYSTEM = "mass=amu, length=um, time=us, energy=amu*um^2/us^2"


@dataclass(frozen=True)
class PhysConstants:
    """Physical constants expressed in internal units."""

    coulomb_constant: float
    hbar: float
    amu: float = 1.0

    @classmethod
    def codata(cls) -> "PhysConstants":
        cc_si = sc.e**2 / (4.0 * math.pi * sc.epsilon_0)  # J m
        return cls(
            coulomb_constant=cc_si / (ENERGY_J * LENGTH_M),
            hbar=sc.hbar / (ENERGY_J * TIME_S),
        )


CONST = PhysConstants.codata()


class UnitError(ValueError):
    """Unknown unit or malformed quantity string."""


# unit -> (dimension, factor converting one unit into internal units)
_UNITS = {
    # length
    "m": ("length", 1.0 / LENGTH_M),
    "mm": ("length", 1e-3 / LENGTH_M),
    "um": ("length", 1.0),
    "µm": ("length", 1.0),
    "nm": ("length", 1e-9 / LENGTH_M),
    # time
    "s": ("time", 1.0 / TIME_S),
    "ms": ("time", 1e-3 / TIME_S),
    "us": ("time", 1.0),
    "µs": ("time", 1.0),
    "ns": ("time", 1e-9 / TIME_S),
    # mass
    "kg": ("mass", 1.0 / AMU_KG),
    "amu": ("mass", 1.0),
    "u": ("mass", 1.0),
    "da": ("mass", 1.0),
    # frequency (cyclic, converted to angular in internal 1/us)
    "hz": ("angular_frequency", 2.0 * math.pi * TIME_S),
    "khz": ("angular_frequency", 2.0 * math.pi * 1e3 * TIME_S),
    "mhz": ("angular_frequency", 2.0 * math.pi * 1e6 * TIME_S),
    # quartic coefficient
    "n/m^3": ("quartic", LENGTH_M**4 / ENERGY_J),
    "j/m^4": ("quartic", LENGTH_M**4 / ENERGY_J),
    # homogeneous force (linear potential coefficient)
    "n": ("force", LENGTH_M / ENERGY_J),
    "v/m": ("force", sc.e * LENGTH_M / ENERGY_J),
    # energy
    "j": ("energy", 1.0 / ENERGY_J),
    # dimensionless
    "": ("dimensionless", 1.0),
    "1": ("dimensionless", 1.0),
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def _normalize_unit(unit: str) -> str:
    return unit.strip().replace(" ", "").replace("**", "^").replace("μ", "µ").lower()


def parse_quantity(text, expected: str | None = None) -> float:
    """Parse ``"<number> <unit>"`` into internal units.

    >>> parse_quantity("70.1 um")
    70.1
    """
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        if expected not in (None, "dimensionless"):
            raise UnitError(f"bare number {text!r} needs a unit ({expected})")
        return float(text)
    if not isinstance(text, str):
        raise UnitError(f"cannot parse quantity {text!r}")
    match = _QUANTITY.match(text)
    if match is None:
        raise UnitError(f"malformed quantity {text!r}")
    value = float(match.group(1))
    unit = _normalize_unit(match.group(2))
    if unit not in _UNITS:
        raise UnitError(f"unknown unit {match.group(2)!r} in {text!r}")
    dim, factor = _UNITS[unit]
    if expected is not None and dim != expected:
        raise UnitError(f"{text!r} has dimension {dim}, expected {expected}")
    return value * factor


def to_si(value: float, dimension: str) -> float:
    """Convert an internal-unit value back to SI."""
    factors = {
        "length": LENGTH_M,
        "time": TIME_S,
        "mass": AMU_KG,
        "angular_frequency": 1.0 / TIME_S,
        "quartic": ENERGY_J / LENGTH_M**4,
        "force": ENERGY_J / LENGTH_M,
        "energy": ENERGY_J,
        "dimensionless": 1.0,
    }
    try:
        return value * factors[dimension]
    except KeyError:
        raise UnitError(f"unknown dimension {dimension!r}") from None


def from_si(value: float, dimension: str) -> float:
    return value / to_si(1.0, dimension)

"""Shortcut-to-adiabaticity exchange cooling of two ions in a dynamic double well."""
__version__ = "0.1.0"

from .design import PhysicalConstraints, DesignBoundary, solve_boundaries, critical_distance  # noqa: E402
from .trajectory import AnsatzParams, Protocol  # noqa: E402
from .units import CONST  # noqa: E402

__all__ = [
    "__version__",
    "CONST",
    "PhysicalConstraints",
    "DesignBoundary",
    "solve_boundaries",
    "critical_distance",
    "AnsatzParams",
    "Protocol",
]

"""
Numeric settings shared by every module.

All tolerances and caps live here so the command line can expose them
and tests can tighten or loosen them per call.
"""
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class NumericSettings:
    """Tolerances, caps and grid sizes."""

    # sandpile
    stability_slack: float = 1e-9
    topple_cap: int = 10_000_000
    # spectral
    power_tol: float = 1e-13
    power_cap: int = 100_000
    boundary_tol: float = 1e-10
    kkt_tol: float = 1e-8
    kkt_cap: int = 200
    grad_step: float = 1e-5
    hessian_step: float = 1e-4
    exponent_guard: float = 700.0
    # green
    eps_stop: float = 1e-16
    box_margin: int = 10
    radius_scan_step: float = 0.25
    radius_bisect_tol: float = 1e-6
    certify_fraction: float = 0.99
    max_cells: int = 20_000_000
    # asymptotics / geometry
    directions_2d: int = 720
    directions_3d: int = 2000
    directions_high: int = 5000
    cycle_cap: int = 100_000
    lambert_tol: float = 1e-12
    lambert_cap: int = 100

    def with_overrides(self, **changes) -> "NumericSettings":
        """Return a copy with some fields replaced."""
        return replace(self, **changes)


DEFAULT_SETTINGS = NumericSettings()

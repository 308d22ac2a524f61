"""Numerical tolerances and physical constants shared across the package."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-10
    trace: float = 1e-10
    psd_slack: float = 1e-9
    unitary: float = 1e-9


TOL = Tolerances()

# electron gyromagnetic ratio for g = 2, ordinary frequency units (Hz/T)
GAMMA_E = 28.0249e9

# init/readout laser pulse length (s)
LASER_DURATION = 5e-6

"""Pulse-sequence simulation and analysis toolkit for ensembles of spin-1 defects."""

from .constants import GAMMA_E, LASER_DURATION
from .engine import (
    CasrTrace,
    ReadoutModel,
    SimConfig,
    SweepResult,
    run_casr,
    run_dressed_rabi,
    run_experiment,
)
from .noise import EnsembleModel, OuParams, analytic_coherence, calibrate_echo_b, vb_ensemble
from .sequence import RfSignal, Sequence

__version__ = "0.1.0"

__all__ = [
    "CasrTrace", "EnsembleModel", "GAMMA_E", "LASER_DURATION", "OuParams", "ReadoutModel", "RfSignal",
    "Sequence", "SimConfig", "SweepResult", "analytic_coherence", "calibrate_echo_b", "vb_ensemble",
    "run_casr", "run_dressed_rabi", "run_experiment",
]

"""Generator-as-oracle round trips for the fit models.

Each case draws parameters, synthesises data from the model function, fits
it and compares. Used by the analysis tests and the acceptance run.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from spinlab import analysis as an

N_DRAWS = 50
NOISE_REL = 0.01


@dataclass(frozen=True)
class Case:
    name: str
    x: np.ndarray
    draw: Callable  # rng -> dict of true parameters
    func: Callable  # (x, **p) -> y
    fitter: Callable  # (x, y) -> FitResult
    free: tuple
    absolute: dict  # per-parameter absolute tolerance used instead of 1 % relative


def _seven_lines(rng):
    p = {"y0": rng.uniform(0.98, 1.02), "lw": 22e6}
    centres = 3.47e9 + 44e6 * (np.arange(7) - 3) + rng.normal(0, 1e6, 7)
    amps = -0.01 * np.array([1, 3, 6, 7, 6, 3, 1]) / 7 * rng.uniform(0.8, 1.2, 7)
    for k in range(7):
        p[f"a{k + 1}"], p[f"f{k + 1}"] = amps[k], centres[k]
    return p


CASES = {
    "monoexp": Case(
        "monoexp", np.linspace(10e-9, 30e-6, 120),
        lambda r: {"a": r.uniform(0.2, 2.0), "T1": r.uniform(1e-6, 10e-6)},
        an.monoexp_func, lambda x, y: an.fit_monoexp((x, y)), ("a", "T1"), {},
    ),
    "biexp": Case(
        "biexp", np.linspace(0, 40e-6, 300),
        lambda r: (lambda Ta: {"a": r.uniform(0.3, 0.7), "Ta": Ta, "b": r.uniform(0.3, 0.7), "Tb": Ta * r.uniform(4, 8)})(
            r.uniform(0.8e-6, 2e-6)),
        an.biexp_func, lambda x, y: an.fit_biexp((x, y)), ("a", "Ta", "b", "Tb"), {},
    ),
    "stretched_exp_cos": Case(
        "stretched_exp_cos", np.arange(0, 200e-9, 1e-9),
        lambda r: {"a": r.uniform(0.8, 1.2), "T2": r.uniform(70e-9, 110e-9), "c": r.uniform(1.1, 1.7),
                   "b": r.uniform(0.1, 0.25), "d": r.uniform(0.8e7, 2e7), "f": r.uniform(40e6, 50e6)},
        an.stretched_exp_cos_func, lambda x, y: an.fit_stretched_exp_cos((x, y)),
        ("a", "T2", "c", "b", "d", "f"), {},
    ),
    "rabi": Case(
        "rabi", np.arange(0, 200e-9, 0.5e-9),
        lambda r: (lambda a, b: {"c": r.uniform(0.1, 0.3), "nu": r.uniform(40e6, 80e6), "phi": r.uniform(-0.5, 0.5),
                                 "a": a, "b": b, "m": 1 - a, "n": b * r.uniform(5, 15)})(
            r.uniform(0.5, 0.8), r.uniform(5e6, 2e7)),
        an.rabi_func, lambda x, y: an.fit_rabi((x, y)), ("c", "nu", "phi", "a", "b", "m", "n"), {"phi": 0.01},
    ),
    "sinc2": Case(
        "sinc2", np.linspace(15e6, 25e6, 201),
        lambda r: {"a": r.uniform(-2e-3, -0.5e-3), "tau": 13e-9, "N": r.uniform(12, 20), "nu_rf": r.uniform(18e6, 21e6), "y0": 0.0},
        an.sinc2_func, lambda x, y: an.fit_sinc2((x, y)), ("a", "N", "nu_rf"), {},
    ),
    "gaussians7": Case(
        "gaussians7", np.linspace(3.2e9, 3.74e9, 541),
        _seven_lines, an.gaussians_model(7), lambda x, y: an.fit_multi_gaussian((x, y)),
        ("y0",) + tuple(f"a{k}" for k in range(1, 8)) + tuple(f"f{k}" for k in range(1, 8)), {},
    ),
    "lorentzians1": Case(
        "lorentzians1", np.linspace(10e6, 26e6, 161),
        lambda r: {"y0": r.uniform(0.05, 0.1), "lw": 2e6, "a1": -r.uniform(0.01, 0.03), "f1": r.uniform(14e6, 22e6)},
        an.lorentzians_model(1), lambda x, y: an.fit_lorentzian_sum((x, y), lw=2e6), ("y0", "a1", "f1"), {},
    ),
}


def relative_ok(case: Case, true: dict, got: dict, rel: float = 0.01) -> bool:
    for k in case.free:
        tol = case.absolute.get(k, rel * abs(true[k]))
        if not abs(got[k] - true[k]) <= tol:
            return False
    return True


def run_noiseless(case: Case, rng, n: int = N_DRAWS):
    """Number of draws whose free parameters all land within 1 %."""
    good = 0
    for _ in range(n):
        p = case.draw(rng)
        r = case.fitter(case.x, case.func(case.x, **p))
        good += r.converged and relative_ok(case, p, r.params)
    return good


def run_noisy(case: Case, rng, n: int = N_DRAWS):
    """(exceedances of 3 sigma, trials, allowed) with 1 % (of the peak-to-peak) Gaussian noise."""
    bad = trials = 0
    for _ in range(n):
        p = case.draw(rng)
        y = case.func(case.x, **p)
        y = y + rng.normal(0, NOISE_REL * np.ptp(y), y.shape)
        r = case.fitter(case.x, y)
        for k in case.free:
            trials += 1
            bad += not (r.converged and abs(r.params[k] - p[k]) <= 3 * r.errors[k])
    return bad, trials, exceedance_budget(trials)


def exceedance_budget(trials: int, p: float = 2 * stats.norm.sf(3), level: float = 1e-3) -> int:
    """Largest exceedance count compatible with a 3 sigma rate at the ``level`` tail."""
    return int(stats.binom.isf(level, trials, p))

"""End-to-end acceptance checks.

Each test prints and records one ``PASS``/``FAIL`` line; the terminal
summary repeats them (see conftest.py). Run alone with
``pytest -s tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest
from scipy.optimize import curve_fit

from helpers import edited_config
from roundtrip import CASES, run_noiseless, run_noisy
from spinlab import analysis as an
from spinlab.constants import GAMMA_E
from spinlab.engine import NoiseDraw, ReadoutModel, SimConfig, dressed_phase_rate, propagate_shot, run_dressed_rabi, run_experiment
from spinlab.hamiltonian import DriveParams
from spinlab.noise import EnsembleModel, NoisePsd, OuParams, analytic_coherence, vb_ensemble
from spinlab.protocols import execute
from spinlab.sequence import XY8_PHASES, Delay, LaserInit, LaserReadout, MwPulse, RfSignal, Sequence, build_cpmg, build_spinlock, build_xy8
from spinlab.spin import expm_hermitian, random_hermitian

TWO_PI = 2 * np.pi
RESULTS = {}


def report(k: int, ok: bool, title: str, detail: str, started: float) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {title} | {detail} | {time.time() - started:.1f} s"
    RESULTS[k] = line
    print(line)
    assert ok, line


def test_1_cpmg_scaling():
    t0 = time.time()
    cfg = edited_config("fig2a", sim__n_traj=500, sequence__N="1, 4, 16, 64, 300, 1000")
    out = execute(cfg, seed=1)
    s = out.summary
    t2 = ", ".join(f"{c.label}={c.fit['T2'] * 1e9:.0f}ns" for c in out.curves)
    ok = s.converged and 0.55 <= s["s"] <= 0.70 and all(c.fit.converged for c in out.curves)
    ok = ok and time.time() - t0 <= 600
    report(1, ok, "CPMG power-law exponent in [0.55, 0.70]", f"s={s['s']:.3f} ({t2})", t0)


def _w_end(p, N, b, tc):
    guess = (12 * tc / (TWO_PI * b) ** 2) ** (1 / 3) * N ** (2 / 3)
    grid = np.linspace(0.02, 9, 900) * guess
    W = analytic_coherence(p, N, grid)
    return grid[np.argmax(W < 0.05)] if np.any(W < 0.05) else grid[-1]


def test_2_monte_carlo_matches_filter_function():
    t0 = time.time()
    worst = 0.0
    parts = []
    for b, tc in ((20e6, 1e-6), (64.6e6, 10e-6), (10e6, 1e-7)):
        ou = OuParams(b, tc)
        p = NoisePsd(ou)
        for N in (1, 4, 16):
            taus = np.linspace(0.05, 1, 10) * _w_end(p, N, b, tc) / (2 * N)
            seqs = build_cpmg(N, taus, DriveParams(1e9))
            r = run_experiment(seqs, None, ou, None, SimConfig(dt=5e-11, n_traj=8000, seed=3, t1=1e9), ReadoutModel())
            # instantaneous-pulse coherence evaluated at the pulse-centre time
            W = analytic_coherence(p, N, [s.meta["t_eff"] for s in seqs])
            rms = float(np.sqrt(np.mean((r.contrast / ReadoutModel().contrast0 - W) ** 2)))
            worst = max(worst, rms)
            parts.append(f"{b / 1e6:g}MHz/{tc:g}s/N{N}={rms:.3f}")
    ok = worst < 0.03 and time.time() - t0 <= 300
    report(2, ok, "MC vs analytic W(t) within 3% RMS", f"worst={worst:.4f}; " + " ".join(parts), t0)


def test_3_xy8_lineshape():
    t0 = time.time()
    cfg = edited_config("fig3b")
    c = execute(cfg, seed=1).curves[0]
    x, y, _ = an.baseline_subtract((c.data.axis, c.data.contrast), cfg["fit"]["baseline"])
    r2 = an.r_squared(an.SINC2, c.fit, (x, y))
    off = abs(c.fit["nu_rf"] - 1 / (4 * 13e-9))
    ok = c.fit.converged and r2 >= 0.98 and off <= 0.3e6 and time.time() - t0 <= 120
    report(3, ok, "XY8-2 sinc^2 R^2 >= 0.98, centre within 0.3 MHz of 19.23 MHz",
           f"R^2={r2:.4f}, nu_rf={c.fit['nu_rf'] / 1e6:.3f} MHz, N={c.fit['N']:.2f}", t0)


def test_4_spinlock_sensing():
    t0 = time.time()
    out = execute(edited_config("fig3e"), seed=1)
    hits = []
    for c in out.curves:
        nu_r = float(c.data.meta["spinlock_rabi"])
        centre = an.lorentzian_center(c.fit, 1)
        if c.fit.converged and c.fit["a1"] < 0 and abs(centre - nu_r) <= 1e6:
            hits.append((nu_r, centre))
    has_18 = any(abs(nu - 18e6) < 1 for nu, _ in hits)
    ok = len(hits) >= 3 and has_18 and time.time() - t0 <= 300
    detail = ", ".join(f"{nu / 1e6:g}->{c / 1e6:.3f} MHz" for nu, c in hits)
    report(4, ok, "spinlock dips at nu_R = nu_RF for >= 3 amplitudes incl. 18 MHz", detail, t0)


def test_5_dressed_phase_law():
    t0 = time.time()
    b, nu = 6e-5, 18e6
    assert 2 * nu >= 20 * GAMMA_E * b
    t = np.linspace(0, 3e-6, 601)
    seqs = [build_spinlock(v, 0.25, DriveParams(72e6), "dressed_rabi") for v in t]
    z = run_dressed_rabi(seqs, RfSignal(b, nu, 0.0), SimConfig(dt=2.5e-10, n_traj=1, t1=1e9)).contrast

    def model(t, A, fs, psi, c):
        return A * np.sin(TWO_PI * fs * t) * np.cos(TWO_PI * nu * t + psi) + c

    expect = dressed_phase_rate(b)
    best = None
    for psi in np.linspace(0, TWO_PI, 8, endpoint=False):
        try:
            p, _ = curve_fit(model, t, z, p0=[1, 0.9 * expect, psi, 0])
        except RuntimeError:
            continue
        res = np.sum((model(t, *p) - z) ** 2)
        if best is None or res < best[0]:
            best = (res, p)
    rate = best[1][1]
    ok = abs(rate / expect - 1) < 0.02 and np.isclose(expect, GAMMA_E * b / 2)
    report(5, ok, "dressed-frame rate = gamma b_RF / 2 within 2%",
           f"fit {rate / 1e3:.2f} kHz vs {expect / 1e3:.2f} kHz ({rate / expect - 1:+.2%})", t0)


def test_6_casr():
    t0 = time.time()
    out = execute(edited_config("fig3h"), seed=1)
    fit = out.curves[0].fit
    n = len(out.curves[0].data.axis)
    ok = fit.converged and abs(fit["peak"] - 1000) <= 0.5 and fit["fwhm"] <= 1.0 and time.time() - t0 <= 600
    report(6, ok, "CASR peak 1000 +- 0.5 Hz, FWHM <= 1 Hz",
           f"peak={fit['peak']:.3f} Hz, FWHM={fit['fwhm']:.3f} Hz, {n} readouts over 2 s", t0)


def test_7_eseem():
    t0 = time.time()
    out = execute(edited_config("figS1"), seed=1)
    peak = out.curves[0].fit["peak"]
    ok = 42e6 <= peak <= 48e6 and time.time() - t0 <= 120
    report(7, ok, "ESEEM dominant modulation in [42, 48] MHz", f"peak={peak / 1e6:.2f} MHz", t0)


def test_8_fit_round_trips():
    t0 = time.time()
    parts = []
    ok = True
    for i, (name, case) in enumerate(sorted(CASES.items())):
        good = run_noiseless(case, np.random.default_rng(100 + i))
        bad, trials, allowed = run_noisy(case, np.random.default_rng(200 + i))
        ok &= good == 50 and bad <= allowed
        parts.append(f"{name} {good}/50 clean, {bad}/{trials} beyond 3sigma (<= {allowed})")
    # published constants, noiseless
    exact = [
        (an.fit_monoexp, an.monoexp_func, np.linspace(10e-9, 30e-6, 120), {"a": 0.3, "T1": 5.84e-6}),
        (an.fit_stretched_exp_cos, an.stretched_exp_cos_func, np.arange(0, 200e-9, 1e-9),
         {"a": 1.0, "T2": 88.5e-9, "c": 1.37, "b": 0.1, "d": 1.2e7, "f": 44.7e6}),
        (an.fit_biexp, an.biexp_func, np.linspace(0, 30e-6, 61), {"a": 0.504, "Ta": 1.38e-6, "b": 0.554, "Tb": 7.52e-6}),
    ]
    for fitter, func, x, p in exact:
        r = fitter((x, func(x, **p)))
        worst = max(abs(r[k] / v - 1) for k, v in p.items())
        ok &= r.converged and worst < 0.01
        parts.append(f"{r.model} published constants worst {worst:.1e}")
    report(8, ok, "fit round trips (50 draws, 1% clean / 3 sigma noisy)", "; ".join(parts), t0)


def _random_sequence(rng):
    body = []
    for _ in range(rng.integers(1, 8)):
        if rng.random() < 0.5:
            body.append(MwPulse(rng.uniform(0, 2e-8), rng.uniform(1e6, 1e8), rng.uniform(0, TWO_PI), rng.normal(0, 5e6)))
        else:
            body.append(Delay(rng.uniform(0, 5e-8)))
    return Sequence((LaserInit(), *body, LaserReadout()), {}, rng.normal(0, 5e6))


def _threaded_run(threads):
    seqs = build_cpmg(2, [5e-9, 15e-9, 25e-9], DriveParams(1e9))
    ens = EnsembleModel(((-2e6, 0.5, 1e6), (3e6, 0.5, 2e6)), rabi_spread=0.05)
    rf = RfSignal(1e-5, 1e7, randomize_phase=True)
    return run_experiment(seqs, rf, OuParams(2e7, 1e-6), ens, SimConfig(dt=5e-11, n_traj=61, seed=9, threads=threads), ReadoutModel())


def test_9_properties():
    t0 = time.time()
    rng = np.random.default_rng(9)
    # density matrices stay physical under noisy, relaxing propagation
    state_err = 0.0
    for seed in range(20):
        seq = _random_sequence(rng)
        rf = RfSignal(rng.uniform(0, 5e-5), rng.uniform(1e6, 2e7), rng.uniform(0, TWO_PI))
        draw = NoiseDraw(OuParams(rng.uniform(0, 3e7), rng.uniform(1e-8, 1e-5)), vb_ensemble(rabi_spread=0.1), seed, 1)
        for t1 in (1e9, 1e-7):
            rho = propagate_shot(seq, rf, draw, SimConfig(dt=2.5e-10, n_traj=1, t1=t1)).entries
            state_err = max(state_err, abs(np.trace(rho) - 1), np.max(np.abs(rho - rho.conj().T)),
                            -min(0.0, np.min(np.linalg.eigvalsh(rho))))
    # propagators are unitary
    unit_err = 0.0
    for dim in (2, 3, 9, 27, 81):
        for _ in range(20 if dim < 81 else 5):
            U = expm_hermitian(random_hermitian(dim, rng, 1e8), rng.uniform(0, 1e-7)).entries
            unit_err = max(unit_err, np.max(np.abs(U.conj().T @ U - np.eye(dim))))
    # bit-identical at any thread count
    ref = _threaded_run(1).to_csv()
    identical = all(_threaded_run(k).to_csv() == ref for k in (2, 4))
    # XY8 phase pattern
    pattern = all(
        [e.phase for e in build_xy8(M, 20e-9, DriveParams(71.43e6)).elements
         if isinstance(e, MwPulse) and np.isclose(e.angle, np.pi)] == list(XY8_PHASES) * M
        for M in range(1, 9)
    )
    ok = state_err <= 1e-9 and unit_err <= 1e-10 and identical and pattern
    report(9, ok, "property suites", f"state err {state_err:.1e}, unitarity err {unit_err:.1e}, "
           f"threads identical={identical}, XY8 pattern exact={pattern}", t0)


if __name__ == "__main__":
    raise SystemExit(pytest.main(["-q", "-s", __file__]))

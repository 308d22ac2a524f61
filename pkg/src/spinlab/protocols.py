"""Protocol registry: turns an ExperimentConfig into runnable sweeps and fits.

Planning (building sequences, checking the time step) is separate from
running, so ``validate`` is a full dry run without any propagation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import analysis as an
from .config import ConfigError, ExperimentConfig
from .engine import (
    ReadoutModel,
    SimConfig,
    SweepResult,
    _partner,
    check_dt,
    config_hash,
    run_casr,
    run_dressed_rabi,
    run_experiment,
)
from .eseem import EseemConfig, eseem_spectrum, simulate_two_pulse_eseem
from .hamiltonian import DriveParams, ZfsParams
from .noise import EnsembleModel, OuParams, calibrate_echo_b, vb_ensemble
from .sequence import (
    RfSignal,
    SequenceError,
    TimingError,
    build_casr,
    build_cpmg,
    build_odmr,
    build_rabi,
    build_spinlock,
    build_t1,
    build_xy8,
    casr_grid,
)

SPECTRUM_SPAN = 4.0  # CASR spectrum written up to this multiple of |delta_nu|


@dataclass
class Job:
    label: str
    run: Callable[[], SweepResult]
    fit_fixed: dict = field(default_factory=dict)  # protocol-implied fit parameters
    x_scale: float = 1.0  # the fit sees axis * x_scale
    fixed_for: tuple = ()  # model-name prefixes fit_fixed applies to (empty: all)

    def implied_fixed(self, model: str) -> dict:
        if self.fixed_for and not model.startswith(self.fixed_for):
            return {}
        return dict(self.fit_fixed)


@dataclass
class Curve:
    label: str
    data: SweepResult
    fit: Optional[an.FitResult] = None


@dataclass
class RunOutput:
    name: str
    curves: list
    summary: Optional[an.FitResult] = None
    extra: dict = field(default_factory=dict)  # label -> SweepResult written alongside

    def failed_fits(self) -> list:
        out = [c.label for c in self.curves if c.fit is not None and not c.fit.converged]
        if self.summary is not None and not self.summary.converged:
            out.append("summary")
        return out


@dataclass(frozen=True)
class Protocol:
    name: str
    description: str
    plan: Callable  # (cfg, sim, readout) -> list[Job]
    default_readout: str = "pi2_3pi2"


# -- shared plumbing ------------------------------------------------------------------------


def sim_config(cfg: ExperimentConfig, seed: Optional[int] = None, threads: Optional[int] = None) -> SimConfig:
    s = cfg["sim"]
    dressed = cfg["relaxation"]["dressed"] or None
    if dressed is not None and len(dressed) != 4:
        raise cfg.error("relaxation", "dressed", "needs four numbers amp_a, T_a, amp_b, T_b")
    try:
        return SimConfig(
            dt=s["dt"],
            n_traj=s["n_traj"],
            seed=s["seed"] if seed is None else int(seed),
            t1=cfg["relaxation"]["t1"],
            dressed_relaxation=dressed,
            threads=s["threads"] if threads is None else int(threads),
            gamma=cfg["spin"]["gamma"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc), None, "sim", cfg.path) from None


def readout_model(cfg: ExperimentConfig, proto: Protocol) -> ReadoutModel:
    mode = cfg["sim"]["readout"] if cfg.given("sim", "readout") else proto.default_readout
    try:
        return ReadoutModel(cfg["sim"]["contrast0"], mode)
    except ValueError as exc:
        raise cfg.error("sim", "contrast0", str(exc)) from None


def drive_params(cfg: ExperimentConfig, rabi: Optional[float] = None) -> DriveParams:
    d = cfg["drive"]
    try:
        return DriveParams(d["rabi"] if rabi is None else rabi, d["phase"], d["detuning"])
    except ValueError as exc:
        raise cfg.error("drive", "rabi", str(exc)) from None


def ou_params(cfg: ExperimentConfig) -> Optional[OuParams]:
    n = cfg["noise"]
    if n["model"] == "none":
        return None
    if (n["b"] is None) == (n["t2_echo"] is None):
        raise ConfigError("ou noise needs exactly one of b or t2_echo", cfg.lines.get(("noise", "model")), "noise", cfg.path)
    try:
        b = n["b"] if n["b"] is not None else calibrate_echo_b(n["t2_echo"], n["tc"])
        return OuParams(b, n["tc"])
    except (ValueError, ZeroDivisionError) as exc:
        raise cfg.error("noise", "tc", str(exc)) from None


def ensemble_model(cfg: ExperimentConfig) -> Optional[EnsembleModel]:
    n = cfg["noise"]
    try:
        if n["ensemble"] == "lines":
            return vb_ensemble(n["line_spacing"], n["line_hwhm"], n["rabi_spread"])
        if n["rabi_spread"] > 0:
            return EnsembleModel(rabi_spread=n["rabi_spread"])
    except ValueError as exc:
        raise cfg.error("noise", "ensemble", str(exc)) from None
    return None


def rf_signal(cfg: ExperimentConfig, nu_rf: Optional[float] = None, phase: Optional[float] = None) -> Optional[RfSignal]:
    r = cfg["rf"]
    if not r["enabled"]:
        return None
    nu = r["nu_rf"] if nu_rf is None else nu_rf
    try:
        return RfSignal(r["b_rf"], nu, r["phase"][0] if phase is None else phase, r["randomize_phase"])
    except ValueError as exc:
        raise cfg.error("rf", "nu_rf", str(exc)) from None


def odmr_transition(cfg: ExperimentConfig) -> float:
    """|0> -> |-1> frequency for B0 along the defect axis: D - sqrt(E^2 + (gamma B0)^2)."""
    s = cfg["spin"]
    try:
        ZfsParams(s["D"], s["E"])
    except ValueError as exc:
        raise cfg.error("spin", "D", str(exc)) from None
    return float(s["D"] - np.hypot(s["E"], s["gamma"] * s["B0"]))


def _sweep(cfg: ExperimentConfig) -> np.ndarray:
    return cfg.sweep_values()


def _guard(cfg: ExperimentConfig, fn):
    """Turn builder errors into config errors pointing at the sequence section."""
    try:
        return fn()
    except TimingError as exc:
        raise ConfigError(str(exc), cfg.lines.get(("sim", "dt")), "sim.dt", cfg.path) from None
    except (SequenceError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), None, "sequence", cfg.path) from None


def _checked(cfg, seqs, rf, sim, readout):
    _guard(cfg, lambda: check_dt(list(seqs) + [_partner(s, readout.mode) for s in seqs], rf, sim.dt))
    return seqs


def _experiment_job(label, seqs, rf, cfg, sim, readout, axis, axis_name, axis_unit, **kw) -> Job:
    noise, ens = ou_params(cfg), ensemble_model(cfg)
    _checked(cfg, seqs, rf, sim, readout)

    def run():
        return run_experiment(seqs, rf, noise, ens, sim, readout, axis, axis_name, axis_unit)

    return Job(label, run, **kw)


def _rf_sweep_job(label, seq, nus, cfg, sim, readout, **kw) -> Job:
    """One sequence, RF frequency swept point by point."""
    noise, ens = ou_params(cfg), ensemble_model(cfg)
    rfs = [rf_signal(cfg, nu) for nu in nus]
    # the time-step requirement grows with nu_rf
    _checked(cfg, [seq], rf_signal(cfg, float(np.max(nus))), sim, readout)

    def run():
        parts = [run_experiment([seq], rf, noise, ens, sim, readout, [nu]) for nu, rf in zip(nus, rfs)]
        meta = dict(parts[0].meta)
        meta["config_hash"] = config_hash([p.meta["config_hash"] for p in parts])
        meta.update({k: v for k, v in seq.meta.items() if k in ("M", "N", "tau", "t_sl", "spinlock_rabi", "variant")})
        return SweepResult(
            np.asarray(nus, dtype=float),
            np.concatenate([p.contrast for p in parts]),
            np.concatenate([p.stderr for p in parts]),
            "nu_rf", "Hz", meta,
        )

    return Job(label, run, **kw)


# -- protocol planners ----------------------------------------------------------------------


def _plan_odmr(cfg, sim, readout):
    f = _sweep(cfg)
    f0 = odmr_transition(cfg)
    seqs = _guard(cfg, lambda: build_odmr(f, cfg["sequence"]["mw_duration"], drive_params(cfg), f0))
    return [_experiment_job("odmr", seqs, None, cfg, sim, readout, f, "frequency", "Hz")]


def _rabi_values(cfg):
    vals = cfg["sequence"]["rabi_values"]
    return vals if vals else (cfg["drive"]["rabi"],)


def _plan_rabi(cfg, sim, readout):
    tp = _sweep(cfg)
    jobs = []
    values = _rabi_values(cfg)
    for nu in values:
        seqs = _guard(cfg, lambda: build_rabi(tp, drive_params(cfg, nu)))
        label = "rabi" if len(values) == 1 else f"rabi_{nu / 1e6:g}MHz"
        jobs.append(_experiment_job(label, seqs, rf_signal(cfg), cfg, sim, readout, tp, "tp", "s"))
    return jobs


def _plan_t1(cfg, sim, readout):
    tau = _sweep(cfg)
    seqs = _guard(cfg, lambda: build_t1(tau, drive_params(cfg), cfg["sequence"]["pi_reference"]))
    return [_experiment_job("t1", seqs, None, cfg, sim, readout, tau, "tau", "s")]


def _plan_echo(cfg, sim, readout):
    tau = _sweep(cfg)
    seqs = _guard(cfg, lambda: build_cpmg(1, tau, drive_params(cfg), cfg["drive"]["readout_phase"]))
    return [_experiment_job("echo", seqs, rf_signal(cfg), cfg, sim, readout, tau, "tau", "s")]


def _plan_cpmg(cfg, sim, readout):
    """Sweep values are the total free evolution t_s = 2 N tau, shared by every N."""
    ts = _sweep(cfg)
    if np.any(ts < 0):
        raise cfg.error("sweep", "start", "t_s must be non-negative")
    jobs = []
    for N in cfg["sequence"]["N"]:
        seqs = _guard(cfg, lambda: build_cpmg(N, ts / (2 * N), drive_params(cfg), cfg["drive"]["readout_phase"]))
        # a exp(-(2 x / T2)^c) evaluated at x = t_s / 2 gives exp(-(t_s / T2)^c)
        jobs.append(_experiment_job(f"N{N}", seqs, rf_signal(cfg), cfg, sim, readout, ts, "t_s", "s", x_scale=0.5))
    return jobs


def _plan_xy8(cfg, sim, readout):
    nus = _sweep(cfg)
    tau = cfg["sequence"]["tau"]
    jobs = []
    Ms = cfg["sequence"]["M"]
    for M in Ms:
        seq = _guard(cfg, lambda: build_xy8(M, tau, drive_params(cfg), cfg["drive"]["readout_phase"]))
        label = "xy8" if len(Ms) == 1 else f"xy8_M{M}"
        jobs.append(_rf_sweep_job(label, seq, nus, cfg, sim, readout, fit_fixed={"tau": tau}))
    return jobs


def _spinlock_fractions(cfg):
    sl = cfg["sequence"]
    if cfg.given("sequence", "spinlock_rabi"):
        return tuple(v / cfg["drive"]["rabi"] for v in sl["spinlock_rabi"])
    return sl["amp_fraction"]


def _plan_spinlock(cfg, sim, readout):
    sl = cfg["sequence"]
    variant = sl["variant"]
    drive = drive_params(cfg)
    phase = cfg["drive"]["readout_phase"]
    x = _sweep(cfg)
    jobs = []
    if variant == "t1rho":
        for a in _spinlock_fractions(cfg):
            seqs = _guard(cfg, lambda: [build_spinlock(t, a, drive, "t1rho", phase) for t in x])
            jobs.append(_experiment_job(f"amp{a:g}", seqs, rf_signal(cfg), cfg, sim, readout, x, "t_sl", "s"))
    elif variant == "amp_sweep":
        # sweep values are spinlock Rabi frequencies (Hz)
        for t_sl in sl["t_sl"]:
            seqs = _guard(cfg, lambda: [build_spinlock(t_sl, v / drive.rabi, drive, "amp_sweep", phase) for v in x])
            jobs.append(_experiment_job(
                f"tsl{t_sl * 1e6:g}us", seqs, rf_signal(cfg), cfg, sim, readout, x, "spinlock_rabi", "Hz",
                fit_fixed={"lw": 1.0 / t_sl}, fixed_for=("lorentzians",),
            ))
    else:
        for t_sl in sl["t_sl"]:
            for a in _spinlock_fractions(cfg):
                seq = _guard(cfg, lambda: build_spinlock(t_sl, a, drive, "sensing", phase))
                label = f"nuR{a * drive.rabi / 1e6:.3g}MHz_tsl{t_sl * 1e6:g}us"
                jobs.append(_rf_sweep_job(label, seq, x, cfg, sim, readout, fit_fixed={"lw": 1.0 / t_sl},
                                          fixed_for=("lorentzians",)))
    return jobs


def _plan_dressed(cfg, sim, readout):
    t = _sweep(cfg)
    drive = drive_params(cfg)
    if not cfg["rf"]["enabled"]:
        raise cfg.error("rf", "enabled", "dressed-rabi needs the RF field")
    jobs = []
    noise, ens = ou_params(cfg), ensemble_model(cfg)
    for a in _spinlock_fractions(cfg):
        seqs = _guard(cfg, lambda: [build_spinlock(v, a, drive, "dressed_rabi") for v in t])
        for ph in cfg["rf"]["phase"]:
            rf = rf_signal(cfg, phase=ph).replace(randomize_phase=False)
            _guard(cfg, lambda: check_dt(seqs, rf, sim.dt))

            def run(seqs=seqs, rf=rf):
                return run_dressed_rabi(seqs, rf, sim, noise, ens)

            jobs.append(Job(f"nuR{a * drive.rabi / 1e6:.3g}MHz_phi{np.degrees(ph):g}deg", run))
    return jobs


def _plan_casr(cfg, sim, readout):
    sl = cfg["sequence"]
    if not cfg["rf"]["enabled"]:
        raise cfg.error("rf", "enabled", "casr needs the RF field")
    nu_dd, dnu = sl["nu_dd"], sl["delta_nu"]
    # snap dt onto the DD clock grid
    dt, _ = casr_grid(nu_dd, sim.dt)
    sim = replace(sim, dt=dt)
    M = sl["M"][0]
    sched = _guard(cfg, lambda: build_casr(nu_dd, dnu, sl["t_m"], drive_params(cfg), M, dt, sl["laser"]))
    rf = rf_signal(cfg, nu_dd - dnu).replace(randomize_phase=False)
    _checked(cfg, [sched.block], rf, sim, readout)
    noise, ens = ou_params(cfg), ensemble_model(cfg)
    s = cfg["sim"]

    def run():
        trace = run_casr(sched, rf, noise, sim, readout, ens, s["n_phase"], s["photons"])
        out = trace.to_sweep()
        out.meta["dt"] = dt
        return out

    return [Job("casr", run)]


def _plan_eseem(cfg, sim, readout):
    e = cfg["eseem"]
    tau = _sweep(cfg)
    s = cfg["spin"]

    def make():
        return EseemConfig(
            zfs=ZfsParams(s["D"], s["E"]), field=e["field"], field_angle=e["field_angle"],
            mw_freq=e["mw_freq"], excitation_bandwidth=e["bandwidth"], tau_grid=tau,
            relaxation=(e["t1"], e["t2"]),
        )

    ec = _guard(cfg, make)

    def run():
        tr = simulate_two_pulse_eseem(ec)
        meta = {"protocol": "eseem", "field": e["field"], "field_angle": e["field_angle"], "mw_freq": e["mw_freq"]}
        return SweepResult(tr.tau, tr.echo, np.zeros_like(tr.echo), "tau", "s", meta)

    return [Job("eseem", run)]


PROTOCOLS = {
    p.name: p
    for p in (
        Protocol("odmr", "pulsed ODMR: one MW pulse per carrier frequency (sweep: Hz)", _plan_odmr, "mw_on_off"),
        Protocol("rabi", "Rabi nutation versus pulse length (sweep: s)", _plan_rabi, "mw_on_off"),
        Protocol("t1", "population recovery after a pi pulse (sweep: s)", _plan_t1, "pi_ref"),
        Protocol("echo", "Hahn echo versus tau (sweep: s)", _plan_echo),
        Protocol("cpmg", "CPMG-N decays, one curve per N (sweep: t_s = 2 N tau, s)", _plan_cpmg),
        Protocol("xy8", "XY8-M dip versus RF frequency (sweep: Hz)", _plan_xy8),
        Protocol("spinlock", "spinlock T1rho / RF sensing / amplitude sweep", _plan_spinlock),
        Protocol("dressed-rabi", "<sigma_z> after a matched spinlock, no closing pulse (sweep: s)", _plan_dressed),
        Protocol("casr", "synchronized XY8 train, one point per block", _plan_casr),
        Protocol("eseem", "two-pulse ESEEM of the electron-nuclear system (sweep: tau, s)", _plan_eseem),
    )
}


def get_protocol(cfg: ExperimentConfig) -> Protocol:
    p = PROTOCOLS.get(cfg.protocol)
    if p is None:
        raise cfg.error("experiment", "protocol", f"unknown protocol {cfg.protocol!r}")
    return p


def plan(cfg: ExperimentConfig, seed: Optional[int] = None, threads: Optional[int] = None) -> list:
    """Build every sequence and check it; raises ConfigError on any problem."""
    proto = get_protocol(cfg)
    sim = sim_config(cfg, seed, threads)
    readout = readout_model(cfg, proto)
    _check_fit(cfg)
    jobs = proto.plan(cfg, sim, readout)
    if not jobs:
        raise ConfigError("nothing to run", None, "sequence", cfg.path)
    return jobs


# -- fitting --------------------------------------------------------------------------------


SPECIAL_FITS = ("none", "fft")


def _check_fit(cfg: ExperimentConfig) -> None:
    name = cfg["fit"]["model"]
    if name in SPECIAL_FITS:
        return
    try:
        m = an.model_function(name)
    except KeyError:
        raise cfg.error("fit", "model", f"unknown model {name!r}") from None
    bad = (set(cfg["fit"]["fixed"]) | set(cfg["fit"]["initial"])) - set(m.params)
    if bad:
        raise cfg.error("fit", "fixed", f"{name} has no parameters {sorted(bad)}")
    if name.startswith("lorentzians") and "lw" not in cfg["fit"]["fixed"] and cfg.protocol != "spinlock":
        raise cfg.error("fit", "fixed", "lorentzian fits need a fixed lw")


def fft_fit(data: SweepResult, eseem: bool = False) -> an.FitResult:
    """Dominant frequency (and FWHM of the power peak) packaged as a fit result."""
    if eseem:
        spec = eseem_spectrum(data.axis, data.contrast)
        ok = bool(np.isfinite(spec.peak))
        return an.FitResult("fft", {"peak": spec.peak}, {"peak": float(spec.frequency[1])}, float("nan"), ok,
                            np.zeros((1, 1)), ("peak",), {}, "" if ok else "no spectral peak", len(data.axis))
    peak, width, lor = an.fft_peak((data.axis, data.contrast))
    ok = bool(np.isfinite(peak) and np.isfinite(width))
    params = {"peak": peak, "fwhm": width}
    errors = {"peak": float("nan"), "fwhm": float("nan")}
    if lor.converged:
        params["lorentz_center"] = lor.params["f1"]
        params["lorentz_fwhm"] = 2 * abs(lor.params["lw"])
        errors["lorentz_center"] = lor.errors.get("f1", float("nan"))
        errors["lorentz_fwhm"] = 2 * lor.errors.get("lw", float("nan"))
    return an.FitResult("fft", params, errors, lor.residual_norm, ok, lor.covariance, tuple(errors), {},
                        "" if ok else "no spectral peak", len(data.axis))


def fit_curve(name: str, data: SweepResult, fixed=None, initial=None, baseline=(), x_scale: float = 1.0,
              protocol: str = "") -> an.FitResult:
    """Apply model ``name`` to a sweep, after optional baseline subtraction."""
    if name == "fft":
        return fft_fit(data, eseem=protocol == "eseem")
    x, y = data.axis, data.contrast
    if baseline:
        x, y, _ = an.baseline_subtract((x, y), baseline)
    x = x * x_scale
    fixed = dict(fixed or {})
    initial = dict(initial or {})
    if name == "power_law":
        return an.fit_power_law((x, y))
    model = an.model_function(name)
    fixed = {k: v for k, v in fixed.items() if k in model.params}
    spec = an.ModelSpec(model.name, fixed, initial)
    try:
        if name == "rabi":
            return an.fit_rabi((x, y), spec)
        if name == "stretched_exp_cos":
            return an.fit_stretched_exp_cos((x, y), spec)
        if name == "sinc2":
            tau = fixed.pop("tau", 13e-9)
            return an.fit_sinc2((x, y), tau, an.ModelSpec(model.name, fixed, initial))
        if name.startswith("gaussians"):
            return an.fit_gaussians((x, y), len(model.params) // 2 - 1, None, spec)
        return an.fit(model, (x, y), spec)
    except ValueError as exc:
        nan = {p: float("nan") for p in model.params}
        return an.FitResult(model.name, nan, {}, float("nan"), False, np.zeros((0, 0)), (), fixed, str(exc), len(x))


def _summary(cfg: ExperimentConfig, curves: list) -> Optional[an.FitResult]:
    if cfg["fit"]["summary"] != "power_law":
        return None
    pts = [(c.data.meta.get("N"), c.fit.params.get("T2")) for c in curves if c.fit is not None and c.fit.converged]
    pts = [(float(n), float(t)) for n, t in pts if n is not None and t is not None]
    if len(pts) < 2:
        return an.FitResult("power_law", {"a": np.nan, "s": np.nan}, {}, np.nan, False, np.zeros((0, 0)), (), {},
                            "need at least two converged T2 values", len(pts))
    n, t2 = np.array(pts).T
    return an.fit_power_law((n, t2))


def execute(cfg: ExperimentConfig, seed: Optional[int] = None, threads: Optional[int] = None) -> RunOutput:
    jobs = plan(cfg, seed, threads)
    f = cfg["fit"]
    curves = []
    extra = {}
    for job in jobs:
        data = job.run()
        data.meta.setdefault("label", job.label)
        if "N" not in data.meta and cfg.protocol == "cpmg":
            data.meta["N"] = int(job.label[1:])
        fit = None
        if f["model"] != "none":
            fixed = job.implied_fixed(f["model"])
            fixed.update(f["fixed"])
            fit = fit_curve(f["model"], data, fixed, f["initial"], f["baseline"], job.x_scale, cfg.protocol)
        curves.append(Curve(job.label, data, fit))
        if cfg.protocol == "casr":
            extra[f"{job.label}_spectrum"] = casr_spectrum(data)
    return RunOutput(cfg.name, curves, _summary(cfg, curves), extra)


def casr_spectrum(trace: SweepResult) -> SweepResult:
    spec = an.power_spectrum(trace.axis, trace.contrast)
    dnu = abs(float(trace.meta.get("delta_nu", 0.0))) or spec.frequency[-1] / SPECTRUM_SPAN
    keep = spec.frequency <= SPECTRUM_SPAN * dnu
    p = spec.power[keep]
    return SweepResult(spec.frequency[keep], p / p.max() if p.max() > 0 else p, np.zeros(keep.sum()),
                       "frequency", "Hz", {"protocol": "casr-spectrum", "n_fft": spec.n_fft})


def env_threads() -> Optional[int]:
    v = os.environ.get("SPINLAB_THREADS")
    if v is None or not v.strip():
        return None
    try:
        n = int(v)
    except ValueError:
        raise ValueError(f"SPINLAB_THREADS={v!r} is not an integer") from None
    if n < 1:
        raise ValueError("SPINLAB_THREADS must be >= 1")
    return n

"""Monte-Carlo propagation of two-level shots and the readout model.

Every trajectory carries a pure spinor on {|0>, |-1>} plus its own noise
history; the ensemble average is taken over trajectories. Each trajectory
owns a counter-based random stream keyed by (seed, trajectory index) and
consumes it in a fixed order:

    uniform (hyperfine line), uniform (RF phase), normal (detuning),
    normal (Rabi scale), normal (initial OU value), then per pulse slice one
    normal and per delay two normals.

so results do not depend on chunking or thread count.

MW pulses are cut into slices of at most ``dt`` with the generator frozen
in each slice and exponentiated in closed form. Delays only carry sigma_z
terms, so their phase is exact: the RF contribution is integrated
analytically and the OU contribution is drawn jointly with the end value of
the process (equivalent in law to slicing the delay on the same grid).

T1 and the dressed-state envelope act as isotropic shrinking of the Bloch
vector; both commute with every unitary, so they are applied once at readout.
"""

from __future__ import annotations

import hashlib
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .constants import GAMMA_E
from .noise import EnsembleModel, OuParams, ou_slice_weights, trajectory_rng
from .sequence import (
    CasrSchedule,
    Delay,
    LaserInit,
    LaserReadout,
    MwPulse,
    RfSignal,
    Sequence,
    validate_sequence,
)
from .spin import DensityMatrix, Operator

TWO_PI = 2 * np.pi
READOUT_MODES = ("mw_on_off", "pi2_3pi2", "pi_ref")
_HEAD = 5  # per-trajectory draws before the noise stream
_CHUNK_ELEMENTS = 1 << 21  # slices x trajectories held at once


class DtTooCoarseError(ValueError):
    def __init__(self, dt: float, required: float):
        super().__init__(f"dt={dt:.3g} s is too coarse; need dt <= {required:.3g} s")
        self.dt = dt
        self.required = required


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-10
    n_traj: int = 200
    seed: int = 0
    t1: float = 5.84e-6
    dressed_relaxation: Optional[tuple] = None  # (amp_a, T_a, amp_b, T_b)
    threads: int = 1
    gamma: float = GAMMA_E

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.n_traj) != self.n_traj or self.n_traj < 1:
            raise ValueError("n_traj must be a positive integer")
        if not self.t1 > 0:
            raise ValueError("t1 must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.dressed_relaxation is not None:
            r = tuple(float(x) for x in self.dressed_relaxation)
            if len(r) != 4 or r[0] < 0 or r[2] < 0 or r[0] + r[2] <= 0 or r[1] <= 0 or r[3] <= 0:
                raise ValueError("dressed_relaxation must be (amp_a>=0, T_a>0, amp_b>=0, T_b>0)")
            object.__setattr__(self, "dressed_relaxation", r)

    def dressed_envelope(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.dressed_relaxation is None:
            return np.ones_like(t)
        a, ta, b, tb = self.dressed_relaxation
        return (a * np.exp(-t / ta) + b * np.exp(-t / tb)) / (a + b)


@dataclass(frozen=True)
class ReadoutModel:
    """Fluorescence F = 1 - contrast0 * P(|-1>) combined per ``mode``.

    mw_on_off: F(signal) / F(MW pulses replaced by waits)
    pi2_3pi2:  F(last pulse 3 pi/2) - F(last pulse pi/2)
    pi_ref:    F(MW pulses replaced by waits) - F(signal)
    """

    contrast0: float = 0.07
    mode: str = "pi2_3pi2"

    def __post_init__(self):
        if not 0 < self.contrast0 <= 1:
            raise ValueError("contrast0 must lie in (0, 1]")
        if self.mode not in READOUT_MODES:
            raise ValueError(f"unknown readout mode {self.mode!r}")


@dataclass(frozen=True)
class NoiseDraw:
    """What a single shot needs to reproduce one trajectory."""

    ou: Optional[OuParams] = None
    ensemble: Optional[EnsembleModel] = None
    seed: int = 0
    index: int = 0


@dataclass
class SweepResult:
    axis: np.ndarray
    contrast: np.ndarray
    stderr: np.ndarray
    axis_name: str = "x"
    axis_unit: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        self.contrast = np.asarray(self.contrast, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.axis.shape == self.contrast.shape == self.stderr.shape) or self.axis.ndim != 1:
            raise ValueError("axis, contrast and stderr must be equal-length 1-D arrays")
        if np.any(self.stderr < 0):
            raise ValueError("stderr must be non-negative")

    def to_csv(self, fit_block: str = "") -> str:
        buf = io.StringIO()
        buf.write(f"# axis_name={self.axis_name}\n# axis_unit={self.axis_unit}\n")
        for k, v in self.meta.items():
            buf.write(f"# {k}={_fmt_meta(v)}\n")
        for line in fit_block.splitlines():
            if line.strip():
                buf.write(f"# {line.strip()}\n")
        buf.write("axis,contrast,stderr\n")
        for a, c, s in zip(self.axis, self.contrast, self.stderr):
            buf.write(f"{float(a)!r},{float(c)!r},{float(s)!r}\n")
        return buf.getvalue()

    def write_csv(self, path, fit_block: str = "") -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv(fit_block))

    @classmethod
    def from_csv(cls, text: str) -> "SweepResult":
        meta, rows = {}, []
        header_seen = False
        for n, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            if not header_seen:
                if line.strip().replace(" ", "") != "axis,contrast,stderr":
                    raise ValueError(f"line {n}: expected header 'axis,contrast,stderr'")
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"line {n}: expected 3 columns")
            rows.append([float(p) for p in parts])
        if not header_seen:
            raise ValueError("missing CSV header")
        data = np.array(rows, dtype=float).reshape(-1, 3)
        name = meta.pop("axis_name", "x")
        unit = meta.pop("axis_unit", "")
        return cls(data[:, 0], data[:, 1], data[:, 2], name, unit, meta)

    @classmethod
    def read_csv(cls, path) -> "SweepResult":
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())


def _fmt_meta(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v).replace("\n", " ")


# -- compilation ------------------------------------------------------------------------------


@dataclass(frozen=True)
class _Segment:
    pulse: bool
    n: int
    h: float
    t0: float
    rabi: float = 0.0
    phase: float = 0.0
    detuning: float = 0.0


def required_dt(seqs, rf: Optional[RfSignal]) -> float:
    fastest = 0.0
    for seq in seqs:
        for e in seq.body:
            if isinstance(e, MwPulse) and e.duration > 0:
                fastest = max(fastest, e.rabi)
    if rf is not None and rf.b_rf > 0:
        fastest = max(fastest, rf.nu_rf)
    return np.inf if fastest == 0 else 1.0 / (20.0 * fastest)


def check_dt(seqs, rf: Optional[RfSignal], dt: float, rabi_scale_max: float = 1.0) -> None:
    need = required_dt(seqs, rf)
    if dt > need * (1 + 1e-9):
        raise DtTooCoarseError(dt, need)


def _compile(seq: Sequence, dt: float) -> list:
    segs = []
    t = 0.0
    for e in seq.body:
        d = float(e.duration)
        if d > 0:
            n = max(1, int(np.ceil(d / dt - 1e-9)))
            if isinstance(e, MwPulse):
                segs.append(_Segment(True, n, d / n, t, e.rabi, e.phase, e.detuning))
            else:
                segs.append(_Segment(False, n, d / n, t, detuning=seq.detuning))
        t += d
    return segs


def _noise_count(segs) -> int:
    return sum(s.n if s.pulse else 2 for s in segs)


# -- SU(2) kernels ----------------------------------------------------------------------------


def _slice_unitaries(rabi, phase, delta, h):
    """Closed-form exp(-i h [(Omega/2)(cos phi sx + sin phi sy) + pi delta sz]) as (alpha, beta)."""
    half = np.pi * rabi  # Omega / 2 in rad/s
    pz = np.pi * delta
    w = np.sqrt(half * half + pz * pz)
    wh = w * h
    c = np.cos(wh)
    # sin(w h) / w with the w -> 0 limit
    sn = np.where(wh > 1e-8, np.sin(wh) / np.where(w > 0, w, 1.0), h * (1 - wh * wh / 6))
    alpha = c - 1j * sn * pz
    beta = -1j * sn * half * np.exp(-1j * phase)
    return alpha, beta


def _chain(alpha: np.ndarray, beta: np.ndarray):
    """Ordered product U_{n-1} ... U_0 along axis 0 by pairwise reduction."""
    while alpha.shape[0] > 1:
        n = alpha.shape[0]
        m = n - n % 2
        a1, b1 = alpha[0:m:2], beta[0:m:2]
        a2, b2 = alpha[1:m:2], beta[1:m:2]
        na = a2 * a1 - b2 * np.conj(b1)
        nb = a2 * b1 + b2 * np.conj(a1)
        if n % 2:
            na = np.concatenate([na, alpha[-1:]])
            nb = np.concatenate([nb, beta[-1:]])
        alpha, beta = na, nb
    return alpha[0], beta[0]


def _apply(alpha, beta, psi0, psi1):
    return alpha * psi0 + beta * psi1, -np.conj(beta) * psi0 + np.conj(alpha) * psi1


def _rf_integral(rf: RfSignal, phase, t0: float, d: float):
    w = TWO_PI * rf.nu_rf
    return (np.sin(w * (t0 + d) + phase) - np.sin(w * t0 + phase)) / w


# -- trajectory batch -------------------------------------------------------------------------


@dataclass(frozen=True)
class _Batch:
    static: np.ndarray  # Hz
    scale: np.ndarray
    rf_phase: np.ndarray  # rad
    x0: np.ndarray  # OU value at t = 0, Hz
    z: np.ndarray  # (n_traj, K) standard normals for the OU stream


def _draw_batch(indices, seed: int, K: int, ou: Optional[OuParams], ens: Optional[EnsembleModel], rf) -> _Batch:
    n = len(indices)
    head = np.empty((n, _HEAD))
    z = np.empty((n, K))
    for row, idx in enumerate(indices):
        rng = trajectory_rng(seed, idx)
        head[row, :2] = rng.random(2)
        head[row, 2:] = rng.standard_normal(_HEAD - 2)
        if K:
            z[row] = rng.standard_normal(K)
    if ens is None:
        static = np.zeros(n)
        scale = np.ones(n)
    else:
        lines = np.array(ens.detuning_lines)
        cdf = np.cumsum(lines[:, 1])
        k = np.minimum(np.searchsorted(cdf, head[:, 0] * cdf[-1], side="right"), len(lines) - 1)
        static = lines[k, 0] + lines[k, 2] * head[:, 2]
        scale = np.maximum(1.0 + ens.rabi_spread * head[:, 3], 0.0)
    if rf is not None and rf.randomize_phase:
        rf_phase = TWO_PI * head[:, 1]
    else:
        rf_phase = np.full(n, 0.0 if rf is None else rf.phase)
    b = 0.0 if ou is None else ou.b
    return _Batch(static, scale, rf_phase, b * head[:, 4], z)


def _propagate(segs, batch: _Batch, ou: Optional[OuParams], rf: Optional[RfSignal], gamma: float, t_offset: float = 0.0):
    """Final spinors for a batch of trajectories starting in |0>."""
    n = len(batch.static)
    psi0 = np.ones(n, dtype=complex)
    psi1 = np.zeros(n, dtype=complex)
    noisy = ou is not None and ou.b > 0
    has_rf = rf is not None and rf.b_rf > 0
    x = batch.x0.copy()
    col = 0
    for s in segs:
        t0 = s.t0 + t_offset
        if s.pulse:
            k = np.arange(s.n)
            delta = np.broadcast_to(s.detuning + batch.static, (s.n, n)).copy()
            if noisy:
                a = np.exp(-s.h / ou.tc)
                sd = ou.b * np.sqrt(-np.expm1(-2 * s.h / ou.tc))
                zz = batch.z[:, col : col + s.n].T  # (n_slices, n_traj)
                col += s.n
                # x_k = a^k x_0 + sd sum_{j<k} a^{k-1-j} z_j; the last normal carries x to the next segment
                drive = lfilter([sd], [1.0, -a], zz, axis=0)
                xs = (a ** k)[:, None] * x[None, :]
                xs[1:] += drive[:-1]
                delta += xs
                x = a ** s.n * x + drive[-1]
            if has_rf:
                tm = t0 + (k + 0.5) * s.h
                delta += gamma * rf.b_rf * np.cos(TWO_PI * rf.nu_rf * tm[:, None] + batch.rf_phase[None, :])
            alpha, beta = _slice_unitaries(s.rabi * batch.scale[None, :], s.phase, delta, s.h)
            alpha, beta = _chain(alpha, beta)
            psi0, psi1 = _apply(alpha, beta, psi0, psi1)
        else:
            d = s.n * s.h
            phi = TWO_PI * (s.detuning + batch.static) * d
            if noisy:
                mean_i, mean_x, var_i, cov, var_x = ou_slice_weights(s.n, s.h, ou.tc)
                z1, z2 = batch.z[:, col], batch.z[:, col + 1]
                col += 2
                sx = np.sqrt(var_x)
                resid = np.sqrt(max(var_i - cov * cov / var_x, 0.0))
                integral = mean_i * x + ou.b * (cov / sx * z1 + resid * z2)
                x = mean_x * x + ou.b * sx * z1
                phi = phi + TWO_PI * integral
            if has_rf:
                phi = phi + TWO_PI * gamma * rf.b_rf * _rf_integral(rf, batch.rf_phase, t0, d)
            half = np.exp(-0.5j * phi)
            psi0 = psi0 * half
            psi1 = psi1 * np.conj(half)
    return psi0, psi1


def _damping(seq: Sequence, cfg: SimConfig) -> float:
    t_sl = seq.spinlock_time
    return float(np.exp(-(seq.duration - t_sl) / cfg.t1) * cfg.dressed_envelope(t_sl))


def _bloch(psi0, psi1):
    rho01 = psi0 * np.conj(psi1)
    return 2 * rho01.real, -2 * rho01.imag, np.abs(psi0) ** 2 - np.abs(psi1) ** 2


def _chunks(n_traj: int, per_traj: int):
    size = int(max(1, min(n_traj, _CHUNK_ELEMENTS // max(per_traj, 1))))
    return [np.arange(a, min(a + size, n_traj)) for a in range(0, n_traj, size)]


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _rz_per_trajectory(seqs, rf, ou, ens, cfg: SimConfig, t_offset: float = 0.0) -> list:
    """<sigma_z> per trajectory (after damping) for each sequence; shared trajectory streams."""
    compiled = [_compile(s, cfg.dt) for s in seqs]
    K = max(_noise_count(c) for c in compiled) if ou is not None and ou.b > 0 else 0
    width = max(sum(s.n for s in c if s.pulse) for c in compiled) + K + 1

    def work(idx):
        batch = _draw_batch(idx, cfg.seed, K, ou, ens, rf)
        out = []
        for seq, segs in zip(seqs, compiled):
            p0, p1 = _propagate(segs, batch, ou, rf, cfg.gamma, t_offset)
            out.append(_bloch(p0, p1)[2] * _damping(seq, cfg))
        return out

    parts = _map(work, _chunks(cfg.n_traj, width), cfg.threads)
    return [np.concatenate([p[k] for p in parts]) for k in range(len(seqs))]


# -- variants and readout ---------------------------------------------------------------------


def mw_off(seq: Sequence) -> Sequence:
    """Same timing with every MW pulse replaced by a wait."""
    el = tuple(Delay(e.duration) if isinstance(e, MwPulse) else e for e in seq.elements)
    return replace(seq, elements=el)


def alternate_readout(seq: Sequence) -> Sequence:
    """Swap the final pulse between pi/2 and 3 pi/2 rotations (same Rabi frequency)."""
    el = list(seq.elements)
    idx = max((k for k, e in enumerate(el) if isinstance(e, MwPulse)), default=None)
    if idx is None:
        raise ValueError("sequence has no MW pulse to alternate")
    p = el[idx]
    ratio = p.angle / (np.pi / 2)
    if np.isclose(ratio, 1.0):
        el[idx] = replace(p, duration=3 * p.duration)
    elif np.isclose(ratio, 3.0):
        el[idx] = replace(p, duration=p.duration / 3)
    else:
        raise ValueError("final pulse is neither pi/2 nor 3 pi/2")
    return replace(seq, elements=tuple(el))


def _is_three_halves(seq: Sequence) -> bool:
    last = [e for e in seq.elements if isinstance(e, MwPulse)][-1]
    return bool(np.isclose(last.angle, 3 * np.pi / 2))


def _fluorescence(rz, readout: ReadoutModel):
    return 1.0 - readout.contrast0 * (1.0 - rz) / 2.0


def _combine(primary, partner, seq: Sequence, readout: ReadoutModel):
    f1 = _fluorescence(primary, readout)
    f2 = _fluorescence(partner, readout)
    if readout.mode == "mw_on_off":
        return f1 / f2
    if readout.mode == "pi_ref":
        return f2 - f1
    return f1 - f2 if _is_three_halves(seq) else f2 - f1


def _partner(seq: Sequence, mode: str) -> Sequence:
    return alternate_readout(seq) if mode == "pi2_3pi2" else mw_off(seq)


def config_hash(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x00")
    return h.hexdigest()[:16]


def _hashable(config: SimConfig) -> SimConfig:
    # thread count never changes results, so it stays out of the hash
    return replace(config, threads=1)


def _stats(values: np.ndarray):
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return mean, se


def run_experiment(
    sequences,
    rf: Optional[RfSignal],
    noise: Optional[OuParams],
    ensemble: Optional[EnsembleModel],
    config: SimConfig,
    readout: ReadoutModel,
    axis=None,
    axis_name: str = "value",
    axis_unit: str = "",
) -> SweepResult:
    """Average the readout over ``config.n_traj`` trajectories for each sequence.

    Trajectory i uses the same random stream at every sweep point, and the
    two shots combined by the readout mode share it as well.
    """
    seqs = [validate_sequence(s) for s in sequences]
    if not seqs:
        raise ValueError("no sequences to run")
    partners = [_partner(s, readout.mode) for s in seqs]
    check_dt(seqs + partners, rf, config.dt)
    if axis is None:
        axis = [s.meta.get(axis_name, s.meta.get("value", k)) for k, s in enumerate(seqs)]
    contrast, stderr = [], []
    for seq, other in zip(seqs, partners):
        rz_a, rz_b = _rz_per_trajectory([seq, other], rf, noise, ensemble, config)
        m, se = _stats(_combine(rz_a, rz_b, seq, readout))
        contrast.append(m)
        stderr.append(se)
    meta = {
        "protocol": seqs[0].meta.get("protocol", "custom"),
        "readout": readout.mode,
        "contrast0": readout.contrast0,
        "n_traj": config.n_traj,
        "seed": config.seed,
        "dt": config.dt,
        "config_hash": config_hash(_hashable(config), readout, noise, ensemble, rf, [s.elements for s in seqs]),
    }
    return SweepResult(np.asarray(axis, dtype=float), np.array(contrast), np.array(stderr), axis_name, axis_unit, meta)


def propagate_shot(seq: Sequence, rf: Optional[RfSignal], noise_draw: NoiseDraw, config: SimConfig) -> DensityMatrix:
    """Final two-level state of one trajectory, including T1 / dressed damping."""
    validate_sequence(seq)
    check_dt([seq], rf, config.dt)
    segs = _compile(seq, config.dt)
    ou = noise_draw.ou
    K = _noise_count(segs) if ou is not None and ou.b > 0 else 0
    batch = _draw_batch([noise_draw.index], noise_draw.seed, K, ou, noise_draw.ensemble, rf)
    p0, p1 = _propagate(segs, batch, ou, rf, config.gamma)
    rx, ry, rz = (float(v[0]) for v in _bloch(p0, p1))
    d = _damping(seq, config)
    rho = 0.5 * np.array([[1 + d * rz, d * (rx - 1j * ry)], [d * (rx + 1j * ry), 1 - d * rz]])
    return DensityMatrix(Operator(rho))


def run_dressed_rabi(
    sequences,
    rf: RfSignal,
    config: SimConfig,
    noise: Optional[OuParams] = None,
    ensemble: Optional[EnsembleModel] = None,
) -> SweepResult:
    """<sigma_z> after pi/2 - spinlock (no closing pulse) versus spinlock duration."""
    seqs = [validate_sequence(s) for s in sequences]
    for s in seqs:
        if s.meta.get("variant") != "dressed_rabi":
            raise ValueError("run_dressed_rabi needs dressed_rabi spinlock sequences")
    check_dt(seqs, rf, config.dt)
    t = np.array([s.meta["t_sl"] for s in seqs], dtype=float)
    vals, errs = [], []
    rz_all = _rz_per_trajectory(seqs, rf, noise, ensemble, config)
    for rz in rz_all:
        m, se = _stats(rz)
        vals.append(m)
        errs.append(se)
    meta = {
        "protocol": "dressed-rabi",
        "nu_rf": rf.nu_rf,
        "b_rf": rf.b_rf,
        "rf_phase": rf.phase,
        "n_traj": config.n_traj,
        "seed": config.seed,
        "config_hash": config_hash(_hashable(config), noise, ensemble, rf, [s.elements for s in seqs]),
    }
    return SweepResult(t, np.array(vals), np.array(errs), "t_sl", "s", meta)


def dressed_phase_rate(b_rf: float, gamma: float = GAMMA_E) -> float:
    """Rotation frequency (Hz) of the locked state in the second rotating frame."""
    return 0.5 * gamma * b_rf


def analytic_xy8_lineshape(a: float, tau: float, N: float, nu_grid, nu_rf: float) -> np.ndarray:
    """a/2 [sin(x)/x]^2 with x = 2 pi tau N (nu - nu_rf); x = 0 gives a/2."""
    if N < 1 or not tau > 0:
        raise ValueError("need N >= 1 and tau > 0")
    x = TWO_PI * tau * N * (np.asarray(nu_grid, dtype=float) - nu_rf)
    return 0.5 * a * np.sinc(x / np.pi) ** 2


# -- CASR ---------------------------------------------------------------------------------------


@dataclass(frozen=True)
class CasrTrace:
    index: np.ndarray
    time: np.ndarray
    contrast: np.ndarray
    response_phase: np.ndarray
    response: np.ndarray
    meta: dict

    def to_sweep(self) -> SweepResult:
        return SweepResult(self.time, self.contrast, np.zeros_like(self.contrast), "time", "s", dict(self.meta))


def _fourier_eval(values: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """Trigonometric interpolation of samples on a uniform [0, 2 pi) grid."""
    n = len(values)
    c = np.fft.rfft(values) / n
    m = np.arange(len(c))
    weight = np.where((m == 0) | ((n % 2 == 0) & (m == n // 2)), 1.0, 2.0)
    out = np.zeros(len(phases))
    for k in range(len(c)):
        out += weight[k] * (c[k].real * np.cos(k * phases) - c[k].imag * np.sin(k * phases))
    return out


def run_casr(
    schedule: CasrSchedule,
    rf: RfSignal,
    noise: Optional[OuParams],
    config: SimConfig,
    readout: ReadoutModel,
    ensemble: Optional[EnsembleModel] = None,
    n_phase: int = 64,
    photons: Optional[float] = None,
) -> CasrTrace:
    """One contrast value per block of the synchronized train.

    The block response R(phi) to the RF phase phi at the start of the DD body
    is computed by full propagation on ``n_phase`` phases and interpolated;
    block k sees phi_k = 2 pi nu_rf (k T_block + lead) + phase, so the RF
    keeps running in wall-clock time across blocks. ``photons`` adds Poisson
    counting noise with that mean per readout.
    """
    if abs(rf.nu_rf - schedule.nu_rf) > 1e-9 * rf.nu_rf:
        raise ValueError(f"rf.nu_rf={rf.nu_rf} does not match the schedule ({schedule.nu_rf})")
    if abs(config.dt - schedule.dt) > 1e-12 * schedule.dt:
        raise ValueError("config.dt must equal the schedule's grid step")
    grid = TWO_PI * np.arange(n_phase) / n_phase
    seq = schedule.block
    other = _partner(seq, readout.mode)
    check_dt([seq, other], rf, config.dt)
    resp = np.empty(n_phase)
    for j, ph in enumerate(grid):
        r = rf.replace(phase=float(ph), randomize_phase=False)
        rz_a, rz_b = _rz_per_trajectory([seq, other], r, noise, ensemble, config)
        resp[j] = float(np.mean(_combine(rz_a, rz_b, seq, readout)))
    k = np.arange(schedule.n_blocks)
    # cycles per block relative to the DD clock: T_b nu_rf = n_dd (1 - delta_nu / nu_dd)
    n_dd = int(round(schedule.block_period * schedule.nu_dd))
    frac = np.mod(-k * (n_dd * schedule.delta_nu / schedule.nu_dd), 1.0)
    lead = np.mod(schedule.lead * rf.nu_rf, 1.0)
    phases = np.mod(TWO_PI * (frac + lead) + rf.phase, TWO_PI)
    contrast = _fourier_eval(resp, phases)
    if photons is not None:
        rng = trajectory_rng(config.seed, 1 << 40)
        # contrast enters the photon number as a fractional change of the signal window
        counts = rng.poisson(photons * (1.0 + contrast))
        contrast = counts / photons - 1.0
    meta = {
        "protocol": "casr",
        "nu_dd": schedule.nu_dd,
        "nu_rf": rf.nu_rf,
        "delta_nu": schedule.delta_nu,
        "block_period": schedule.block_period,
        "n_blocks": schedule.n_blocks,
        "readout": readout.mode,
        "n_traj": config.n_traj,
        "seed": config.seed,
    }
    return CasrTrace(k, k * schedule.block_period, contrast, grid, resp, meta)

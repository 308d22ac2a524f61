"""Pulse-sequence data model and protocol builders.

A shot is ``LaserInit, <MW pulses and delays>, LaserReadout``. Time zero of a
shot is the end of the init laser pulse. Pulses are rectangular; a pulse's
rotation angle is 2 pi * rabi * duration.

CPMG and spin-echo delays are edge to edge (``tau`` excludes the pulses) so the
free-evolution time is t_s = 2 N tau. XY8 and CASR place pi-pulse centres on a
2 tau grid, which puts the filter passband exactly at 1/(4 tau).
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping, Sequence as Seq, Union

import numpy as np

from .constants import LASER_DURATION
from .hamiltonian import DriveParams


class SequenceError(ValueError):
    pass


class TimingError(ValueError):
    """Requested timing is not representable on the simulation grid."""

    def __init__(self, message: str, nearest: dict):
        super().__init__(message)
        self.nearest = nearest


@dataclass(frozen=True)
class MwPulse:
    duration: float
    rabi: float
    phase: float = 0.0
    detuning: float = 0.0
    spinlock: bool = False  # relaxes with the dressed-state envelope instead of T1

    @property
    def angle(self) -> float:
        return 2 * np.pi * self.rabi * self.duration


@dataclass(frozen=True)
class Delay:
    duration: float


@dataclass(frozen=True)
class LaserInit:
    duration: float = LASER_DURATION


@dataclass(frozen=True)
class LaserReadout:
    reference: bool = False
    duration: float = LASER_DURATION


PulseElement = Union[MwPulse, Delay, LaserInit, LaserReadout]


def _freeze_meta(meta) -> Mapping:
    return MappingProxyType(dict(meta or {}))


@dataclass(frozen=True)
class Sequence:
    """One shot. ``detuning`` (carrier minus transition, Hz) acts during delays."""

    elements: tuple
    meta: Mapping = field(default_factory=dict)
    detuning: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "meta", _freeze_meta(self.meta))

    @property
    def body(self) -> tuple:
        """Elements strictly between init and readout."""
        return tuple(e for e in self.elements if isinstance(e, (MwPulse, Delay)))

    @property
    def mw_time(self) -> float:
        return float(sum(e.duration for e in self.elements if isinstance(e, MwPulse)))

    @property
    def spinlock_time(self) -> float:
        return float(sum(e.duration for e in self.elements if isinstance(e, MwPulse) and e.spinlock))

    @property
    def duration(self) -> float:
        """Wall-clock length between init and readout."""
        return float(sum(e.duration for e in self.body))

    def start_times(self) -> np.ndarray:
        """Start of each body element relative to the end of the init pulse."""
        d = np.array([e.duration for e in self.body])
        return np.concatenate([[0.0], np.cumsum(d)[:-1]]) if len(d) else np.zeros(0)

    def with_meta(self, **kw) -> "Sequence":
        m = dict(self.meta)
        m.update(kw)
        return replace(self, meta=m)


class RfSignal:
    """B_RF(t) = b_rf cos(2 pi nu_rf t + phase) along the defect axis."""

    __slots__ = ("b_rf", "nu_rf", "phase", "randomize_phase")

    def __init__(self, b_rf: float, nu_rf: float, phase: float = 0.0, randomize_phase: bool = False):
        if b_rf < 0:
            raise ValueError("b_rf must be non-negative")
        if not nu_rf > 0:
            raise ValueError("nu_rf must be positive")
        object.__setattr__(self, "b_rf", float(b_rf))
        object.__setattr__(self, "nu_rf", float(nu_rf))
        object.__setattr__(self, "phase", float(phase))
        object.__setattr__(self, "randomize_phase", bool(randomize_phase))

    def __setattr__(self, name, value):
        raise AttributeError("RfSignal is immutable")

    def __repr__(self):
        return f"RfSignal(b_rf={self.b_rf!r}, nu_rf={self.nu_rf!r}, phase={self.phase!r})"

    def replace(self, **kw) -> "RfSignal":
        args = {k: getattr(self, k) for k in self.__slots__}
        args.update(kw)
        return RfSignal(**args)


def validate_sequence(seq: Sequence) -> Sequence:
    """Check shot structure: init first, one readout last, nothing negative."""
    el = seq.elements
    if len(el) < 2 or not isinstance(el[0], LaserInit):
        raise SequenceError("a shot must start with LaserInit")
    if not isinstance(el[-1], LaserReadout):
        raise SequenceError("a shot must end with LaserReadout")
    if sum(isinstance(e, LaserReadout) for e in el) != 1:
        raise SequenceError("exactly one LaserReadout per shot")
    if sum(isinstance(e, LaserInit) for e in el) != 1:
        raise SequenceError("exactly one LaserInit per shot")
    for k, e in enumerate(el):
        if not isinstance(e, (MwPulse, Delay, LaserInit, LaserReadout)):
            raise SequenceError(f"element {k} has unknown type {type(e).__name__}")
        if not np.isfinite(e.duration) or e.duration < 0:
            raise SequenceError(f"element {k} has invalid duration {e.duration}")
        if isinstance(e, MwPulse) and (e.rabi < 0 or not np.isfinite(e.rabi)):
            raise SequenceError(f"element {k} has invalid rabi frequency {e.rabi}")
    return seq


def _shot(body, meta, detuning=0.0, reference=False) -> Sequence:
    seq = Sequence((LaserInit(), *body, LaserReadout(reference)), meta, detuning)
    return validate_sequence(seq)


def _grid(values, name: str) -> np.ndarray:
    g = np.atleast_1d(np.asarray(values, dtype=float))
    if g.size == 0:
        raise SequenceError(f"{name} grid is empty")
    if np.any(g < 0):
        raise SequenceError(f"{name} grid has negative entries")
    return g


def _pulse(drive: DriveParams, angle: float, phase: float, **kw) -> MwPulse:
    if not drive.rabi > 0:
        raise SequenceError("drive rabi frequency must be positive")
    return MwPulse(angle / (2 * np.pi * drive.rabi), drive.rabi, phase, drive.detuning, **kw)


X, Y = 0.0, np.pi / 2


def readout_angle(readout_phase: float) -> float:
    if np.isclose(readout_phase, np.pi / 2):
        return np.pi / 2
    if np.isclose(readout_phase, 3 * np.pi / 2):
        return 3 * np.pi / 2
    raise SequenceError("readout_phase must be pi/2 or 3 pi/2")


def build_rabi(tp_grid, drive: DriveParams) -> list:
    grid = _grid(tp_grid, "tp")
    if np.any(np.diff(grid) <= 0):
        raise SequenceError("tp grid must be ascending")
    out = []
    for tp in grid:
        body = [MwPulse(tp, drive.rabi, drive.phase, drive.detuning)] if tp > 0 else []
        out.append(_shot(body, {"protocol": "rabi", "sweep": "tp", "value": tp}, drive.detuning))
    return out


def build_cpmg(N: int, tau_grid, drive: DriveParams, readout_phase: float = np.pi / 2) -> list:
    """(pi/2)_x [ - tau - (pi)_y - tau ]_N - (pi/2 or 3pi/2)_x."""
    if int(N) != N or N < 1:
        raise SequenceError("N must be a positive integer")
    N = int(N)
    last = readout_angle(readout_phase)
    grid = _grid(tau_grid, "tau")
    out = []
    for tau in grid:
        p90 = _pulse(drive, np.pi / 2, X)
        p180 = _pulse(drive, np.pi, Y)
        body = [p90]
        for _ in range(N):
            body += [Delay(tau), p180, Delay(tau)]
        body.append(_pulse(drive, last, X))
        meta = {
            "protocol": "cpmg" if N > 1 else "echo",
            "sweep": "tau",
            "value": tau,
            "N": N,
            "t_s": 2 * N * tau,
            # instantaneous-pulse equivalent: pi centres spaced 2 (tau + t_pi / 2)
            "t_eff": 2 * N * (tau + p180.duration / 2),
            "readout_phase": readout_phase,
        }
        seq = _shot(body, meta, drive.detuning)
        out.append(seq.with_meta(wall=seq.duration))
    return out


def build_spin_echo(tau_grid, drive: DriveParams, readout_phase: float = np.pi / 2) -> list:
    return build_cpmg(1, tau_grid, drive, readout_phase)


XY8_PHASES = (X, Y, X, Y, Y, X, Y, X)


def xy8_phases(M: int) -> list:
    return list(XY8_PHASES) * int(M)


def _xy8_body(M: int, tau: float, drive: DriveParams, last: float, last_phase: float = X) -> list:
    p180 = _pulse(drive, np.pi, X)
    tp = p180.duration
    if tau < tp / 2:
        raise SequenceError(f"tau={tau:.3g} s shorter than half a pi pulse ({tp / 2:.3g} s)")
    edge, inner = tau - tp / 2, 2 * tau - tp
    body = [_pulse(drive, np.pi / 2, X), Delay(edge)]
    phases = xy8_phases(M)
    for k, ph in enumerate(phases):
        body.append(_pulse(drive, np.pi, ph))
        body.append(Delay(inner if k < len(phases) - 1 else edge))
    body.append(_pulse(drive, last, last_phase))
    return body


def build_xy8(M: int, tau: float, drive: DriveParams, readout_phase: float = np.pi / 2) -> Sequence:
    """(pi/2)_x [[ - tau - (pi)_phi - tau ]_8]_M - (pi/2)_x with centre-to-centre spacing 2 tau."""
    if int(M) != M or M < 1:
        raise SequenceError("M must be a positive integer")
    if not tau > 0:
        raise SequenceError("tau must be positive")
    body = _xy8_body(int(M), tau, drive, readout_angle(readout_phase))
    n_pi = 8 * int(M)
    meta = {"protocol": "xy8", "M": int(M), "N": n_pi, "tau": tau, "t_s": 2 * n_pi * tau, "readout_phase": readout_phase}
    seq = _shot(body, meta, drive.detuning)
    return seq.with_meta(wall=seq.duration)


SPINLOCK_VARIANTS = ("t1rho", "sensing", "dressed_rabi", "amp_sweep")
SPINLOCK_GAP = 2e-9


def build_spinlock(
    t_sl: float,
    amp_fraction: float,
    drive: DriveParams,
    variant: str = "t1rho",
    readout_phase: float = np.pi / 2,
) -> Sequence:
    """(pi/2)_x - d - (spinlock)_y - d - (pi/2)_x; ``dressed_rabi`` drops the last pulse.

    The spinlock Rabi frequency is ``amp_fraction * drive.rabi``.
    """
    if variant not in SPINLOCK_VARIANTS:
        raise SequenceError(f"unknown spinlock variant {variant!r}")
    if t_sl < 0:
        raise SequenceError("t_sl must be non-negative")
    if not 0 < amp_fraction <= 1:
        raise SequenceError("amp_fraction must lie in (0, 1]")
    body = [_pulse(drive, np.pi / 2, X), Delay(SPINLOCK_GAP)]
    if t_sl > 0:
        body.append(MwPulse(t_sl, amp_fraction * drive.rabi, drive.phase + Y, drive.detuning, spinlock=True))
    if variant != "dressed_rabi":
        body += [Delay(SPINLOCK_GAP), _pulse(drive, readout_angle(readout_phase), X)]
    meta = {
        "protocol": "dressed-rabi" if variant == "dressed_rabi" else "spinlock",
        "variant": variant,
        "t_sl": t_sl,
        "amp_fraction": amp_fraction,
        "spinlock_rabi": amp_fraction * drive.rabi,
        "readout_phase": readout_phase,
    }
    return _shot(body, meta, drive.detuning)


def build_odmr(f_grid, mw_duration: float, drive: DriveParams, transition: float) -> list:
    """Single long MW pulse per carrier frequency; detuning = f - transition."""
    grid = _grid(f_grid, "frequency")
    if not mw_duration > 0:
        raise SequenceError("mw_duration must be positive")
    out = []
    for f in grid:
        det = f - transition
        body = [MwPulse(mw_duration, drive.rabi, drive.phase, det)]
        out.append(_shot(body, {"protocol": "odmr", "sweep": "f", "value": f}, det))
    return out


def build_t1(tau_grid, drive: DriveParams, with_pi_reference: bool = True) -> list:
    """Init - (pi) - tau - readout. The engine derives the unprepared reference by dropping MW."""
    grid = _grid(tau_grid, "tau")
    out = []
    for tau in grid:
        body = ([_pulse(drive, np.pi, X)] if with_pi_reference else []) + [Delay(tau)]
        out.append(_shot(body, {"protocol": "t1", "sweep": "tau", "value": tau}, drive.detuning))
    return out


@dataclass(frozen=True)
class CasrSchedule:
    """Train of identical DD blocks clocked on the DD period.

    Block k starts at k * block_period (wall clock, s); ``block`` is the shot
    whose body starts ``lead`` seconds after the block start (after the laser).
    """

    block: Sequence
    block_period: float
    n_blocks: int
    nu_dd: float
    delta_nu: float
    dt: float
    ticks_per_period: int
    lead: float

    def block_starts(self) -> np.ndarray:
        return np.arange(self.n_blocks) * self.block_period

    @property
    def nu_rf(self) -> float:
        return self.nu_dd - self.delta_nu


def casr_grid(nu_dd: float, dt: float) -> tuple:
    """Nearest dt that divides 1/nu_dd into a multiple of 4 ticks, and the tick count."""
    period = 1.0 / nu_dd
    ticks = max(4, int(round(period / dt / 4)) * 4)
    return period / ticks, ticks


def build_casr(
    nu_dd: float,
    delta_nu: float,
    t_m: float,
    drive: DriveParams,
    M: int = 2,
    dt: float = 1e-10,
    laser: float = LASER_DURATION,
) -> CasrSchedule:
    """XY8-M blocks at tau = 1/(4 nu_dd), each preceded by the init/readout laser.

    ``dt`` must divide the DD period into a multiple of 4 steps (so tau and
    every block start sit on the grid); otherwise TimingError reports the
    nearest admissible dt.
    """
    if not t_m > 0 or not nu_dd > 0:
        raise SequenceError("t_m and nu_dd must be positive")
    period = 1.0 / nu_dd
    good_dt, ticks = casr_grid(nu_dd, dt)
    if abs(good_dt - dt) > 1e-9 * dt:
        raise TimingError(
            f"dt={dt:.6g} s does not divide the DD period {period:.6g} s into 4k steps; nearest dt={good_dt:.9g} s",
            {"dt": good_dt, "ticks_per_period": ticks},
        )
    tau = period / 4
    if abs(delta_nu) * 16 * M * tau > 0.01:
        raise SequenceError("delta_nu must be small compared with 1 / sub-sequence duration")
    # closing pulse about y: the population is then linear (not quadratic) in the
    # accumulated phase, so the block response follows the RF phase at first harmonic
    body = _xy8_body(M, tau, drive, np.pi / 2, Y)
    n_pi = 8 * M
    meta = {"protocol": "casr", "M": M, "N": n_pi, "tau": tau, "t_s": 2 * n_pi * tau, "nu_dd": nu_dd}
    block = _shot(body, meta, drive.detuning)
    # block = laser + body, rounded up to whole DD periods
    n_periods = int(np.ceil((laser + block.duration) / period - 1e-9))
    block_period = n_periods * period
    n_blocks = int(np.floor(t_m / block_period))
    if n_blocks < 2:
        raise SequenceError("t_m shorter than two blocks")
    return CasrSchedule(block, block_period, n_blocks, nu_dd, delta_nu, dt, ticks, laser)


# -- text form -------------------------------------------------------------------------------

def _plain(v):
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def to_text(seq: Sequence) -> str:
    """One element per line: kind, duration, rabi, phase (plus detuning / flags)."""
    lines = [f"# {k}={_plain(v)!r}" for k, v in seq.meta.items()]
    lines.append(f"detuning {float(seq.detuning)!r}")
    for e in seq.elements:
        d = float(e.duration)
        if isinstance(e, MwPulse):
            lines.append(f"mw {d!r} {float(e.rabi)!r} {float(e.phase)!r} {float(e.detuning)!r}{' spinlock' if e.spinlock else ''}")
        elif isinstance(e, Delay):
            lines.append(f"delay {d!r}")
        elif isinstance(e, LaserInit):
            lines.append(f"init {d!r}")
        else:
            lines.append(f"readout {d!r}{' reference' if e.reference else ''}")
    return "\n".join(lines) + "\n"


def _meta_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def from_text(text: str) -> Sequence:
    meta, elements, detuning = {}, [], 0.0
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = _meta_value(value.strip())
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        try:
            if kind == "detuning":
                detuning = float(args[0])
            elif kind == "mw":
                flag = len(args) == 5 and args[4] == "spinlock"
                elements.append(MwPulse(*map(float, args[:4]), spinlock=flag))
            elif kind == "delay":
                elements.append(Delay(float(args[0])))
            elif kind == "init":
                elements.append(LaserInit(float(args[0])))
            elif kind == "readout":
                elements.append(LaserReadout(len(args) > 1 and args[1] == "reference", float(args[0])))
            else:
                raise SequenceError(f"line {n}: unknown element {kind!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, SequenceError):
                raise
            raise SequenceError(f"line {n}: malformed element {line!r}") from exc
    return validate_sequence(Sequence(tuple(elements), meta, detuning))


def elements_equal(a: Sequence, b: Sequence) -> bool:
    return a.elements == b.elements and a.detuning == b.detuning

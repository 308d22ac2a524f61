"""Experiment configuration files.

Flat sectioned ``key = value`` text::

    # comment
    [experiment]
    protocol = cpmg
    [sweep]
    start = 2e-9
    stop = 200e-9
    n = 24

Values are SI (Hz, s, T, rad). Lists are comma separated. Every key must be
declared in ``SCHEMA``; unknown sections or keys, bad values and missing
required keys raise ``ConfigError`` carrying the line number and key.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None, path: str = ""):
        where = path or "<config>"
        if line is not None:
            where += f":{line}"
        if key:
            where += f" [{key}]"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.key = key


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    out = []
    for v in text.split(","):
        if v.strip():
            f = float(v)
            if f != int(f):
                raise ValueError(f"{v.strip()} is not an integer")
            out.append(int(f))
    return tuple(out)


def _int(text: str) -> int:
    (v,) = _ints(text) or (None,)
    if v is None:
        raise ValueError("empty value")
    return v


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _pairs(text: str) -> dict:
    """``k=v, k=v`` into a dict of floats."""
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        k, sep, v = item.partition("=")
        if not sep or not k.strip():
            raise ValueError(f"expected key=value, got {item.strip()!r}")
        out[k.strip()] = float(v)
    return out


def _ranges(text: str) -> tuple:
    """``lo:hi, lo:hi`` into ((lo, hi), ...)."""
    out = []
    for item in text.split(","):
        if not item.strip():
            continue
        lo, sep, hi = item.partition(":")
        if not sep:
            raise ValueError(f"expected lo:hi, got {item.strip()!r}")
        out.append((float(lo), float(hi)))
    return tuple(out)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any = None
    doc: str = ""
    required: bool = False
    choices: tuple = ()


READOUT_MODES = ("mw_on_off", "pi2_3pi2", "pi_ref")

SCHEMA = {
    "experiment": {
        "protocol": Key(str, None, "protocol id (see list-protocols)", required=True),
        "name": Key(str, "", "run name, default: file stem"),
        "description": Key(str, "", "free text"),
    },
    "spin": {
        "D": Key(float, 3.47e9, "zero-field splitting (Hz)"),
        "E": Key(float, 60e6, "transverse zero-field splitting (Hz)"),
        "B0": Key(float, 0.0, "static field along the defect axis (T)"),
        "gamma": Key(float, 28.0249e9, "gyromagnetic ratio (Hz/T)"),
    },
    "drive": {
        "rabi": Key(float, 1 / 14e-9, "Rabi frequency of the hard pulses (Hz)"),
        "phase": Key(float, 0.0, "MW phase offset (rad)"),
        "detuning": Key(float, 0.0, "carrier minus transition frequency (Hz)"),
        "readout_phase": Key(float, np.pi / 2, "angle of the closing pulse, pi/2 or 3pi/2 (rad)"),
    },
    "noise": {
        "model": Key(str, "none", "bath model", choices=("none", "ou")),
        "b": Key(float, None, "OU amplitude (Hz); alternative to t2_echo"),
        "tc": Key(float, 10e-6, "OU correlation time (s)"),
        "t2_echo": Key(float, None, "calibrate b so the single-echo decay has this T2 (s)"),
        "ensemble": Key(str, "none", "static inhomogeneity", choices=("none", "lines")),
        "line_spacing": Key(float, 44e6, "hyperfine line spacing (Hz)"),
        "line_hwhm": Key(float, 22e6, "half width of each line (Hz)"),
        "rabi_spread": Key(float, 0.0, "relative rms spread of the drive amplitude"),
    },
    "relaxation": {
        "t1": Key(float, 5.84e-6, "longitudinal relaxation (s)"),
        "dressed": Key(_floats, (), "dressed-state envelope amp_a, T_a, amp_b, T_b"),
    },
    "sweep": {
        "start": Key(float, None, "first sweep value"),
        "stop": Key(float, None, "last sweep value"),
        "n": Key(_int, None, "number of points"),
        "scale": Key(str, "lin", "spacing", choices=("lin", "log")),
        "values": Key(_floats, (), "explicit sweep values (instead of start/stop/n)"),
    },
    "sequence": {
        "N": Key(_ints, (1,), "pi-pulse counts, one curve each (cpmg)"),
        "M": Key(_ints, (2,), "XY8 repetitions, one curve each (xy8, casr)"),
        "tau": Key(float, 13e-9, "XY8 half spacing (s)"),
        "t_sl": Key(_floats, (0.5e-6,), "spinlock durations, one curve each (s)"),
        "amp_fraction": Key(_floats, (0.1,), "spinlock amplitude fractions, one curve each"),
        "spinlock_rabi": Key(_floats, (), "spinlock Rabi frequencies (Hz), instead of amp_fraction"),
        "variant": Key(str, "t1rho", "spinlock variant", choices=("t1rho", "sensing", "amp_sweep")),
        "mw_duration": Key(float, 1e-6, "ODMR pulse length (s)"),
        "pi_reference": Key(_bool, True, "T1: prepare |-1> with a pi pulse"),
        "rabi_values": Key(_floats, (), "drive Rabi frequencies, one curve each (rabi)"),
        "nu_dd": Key(float, 18e6, "CASR clock 1/(4 tau) (Hz)"),
        "delta_nu": Key(float, 1000.0, "CASR offset nu_dd - nu_rf (Hz)"),
        "t_m": Key(float, 2.0, "CASR total measurement time (s)"),
        "laser": Key(float, 5e-6, "laser init/readout length (s)"),
    },
    "rf": {
        "enabled": Key(_bool, False, "apply the RF field"),
        "b_rf": Key(float, 0.0, "amplitude (T)"),
        "nu_rf": Key(float, 0.0, "frequency (Hz); swept protocols override it"),
        "phase": Key(_floats, (0.0,), "phase(s) (rad), one curve each for dressed-rabi"),
        "randomize_phase": Key(_bool, False, "uniform random phase per trajectory (default: phase-locked)"),
    },
    "sim": {
        "dt": Key(float, 1e-10, "pulse slice length (s)"),
        "n_traj": Key(_int, 200, "Monte-Carlo trajectories"),
        "seed": Key(_int, 0, "master seed"),
        "threads": Key(_int, 1, "worker threads"),
        "readout": Key(str, "pi2_3pi2", "readout referencing", choices=READOUT_MODES),
        "contrast0": Key(float, 0.07, "optical contrast of |-1>"),
        "photons": Key(float, None, "CASR: mean photons per readout (Poisson noise)"),
        "n_phase": Key(_int, 64, "CASR: RF phases sampled for the block response"),
    },
    "eseem": {
        "field": Key(float, 8e-3, "static field (T)"),
        "field_angle": Key(float, float(np.radians(15.0)), "tilt of B0 from the defect axis (rad)"),
        "mw_freq": Key(float, 3.2e9, "MW frequency (Hz)"),
        "bandwidth": Key(float, 250e6, "excitation bandwidth (Hz)"),
        "t1": Key(float, 6e-6, "relaxation T1 (s)"),
        "t2": Key(float, 80e-9, "relaxation T2 (s)"),
    },
    "fit": {
        "model": Key(str, "none", "model id, 'fft' or 'none'"),
        "fixed": Key(_pairs, {}, "fixed parameters k=v"),
        "initial": Key(_pairs, {}, "initial values k=v"),
        "baseline": Key(_ranges, (), "signal-free regions lo:hi for baseline subtraction"),
        "summary": Key(str, "none", "cross-curve fit (power_law of T2 versus N)", choices=("none", "power_law")),
    },
    "output": {
        "dir": Key(str, "out", "output directory, relative to the working directory"),
        "prefix": Key(str, "", "file prefix, default: run name"),
        "svg": Key(_bool, False, "also write an SVG plot"),
    },
}


@dataclass
class ExperimentConfig:
    values: dict  # section -> key -> parsed value (defaults filled in)
    lines: dict = field(default_factory=dict)  # (section, key) -> line number
    path: str = ""

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def protocol(self) -> str:
        return self.values["experiment"]["protocol"]

    @property
    def name(self) -> str:
        return self.values["experiment"]["name"] or (Path(self.path).stem if self.path else "run")

    def given(self, section: str, key: str) -> bool:
        return (section, key) in self.lines

    def error(self, section: str, key: str, message: str) -> ConfigError:
        return ConfigError(message, self.lines.get((section, key)), f"{section}.{key}", self.path)

    def sweep_values(self) -> np.ndarray:
        s = self.values["sweep"]
        if s["values"]:
            if any(self.given("sweep", k) for k in ("start", "stop", "n")):
                raise self.error("sweep", "values", "give either values or start/stop/n")
            return np.array(s["values"], dtype=float)
        missing = [k for k in ("start", "stop", "n") if s[k] is None]
        if missing:
            raise ConfigError(f"sweep needs {', '.join(missing)}", None, "sweep", self.path)
        if s["n"] < 1:
            raise self.error("sweep", "n", "empty sweep (n must be >= 1)")
        if s["scale"] == "log":
            if s["start"] <= 0 or s["stop"] <= 0:
                raise self.error("sweep", "scale", "log sweep needs positive start and stop")
            return np.geomspace(s["start"], s["stop"], s["n"])
        return np.linspace(s["start"], s["stop"], s["n"])


def parse_config(text: str, path: str = "") -> ExperimentConfig:
    values = {sec: {} for sec in SCHEMA}
    lines = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno, None, path)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, section, path)
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected key = value, got {line!r}", lineno, None, path)
        if section is None:
            raise ConfigError("key outside any section", lineno, key, path)
        spec = SCHEMA[section].get(key)
        if spec is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, f"{section}.{key}", path)
        if (section, key) in lines:
            raise ConfigError(f"duplicate key (first on line {lines[section, key]})", lineno, f"{section}.{key}", path)
        try:
            parsed = spec.parse(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value {value!r}: {exc}", lineno, f"{section}.{key}", path) from None
        if spec.choices and parsed not in spec.choices:
            raise ConfigError(f"{parsed!r} not one of {', '.join(spec.choices)}", lineno, f"{section}.{key}", path)
        values[section][key] = parsed
        lines[section, key] = lineno
    for sec, keys in SCHEMA.items():
        for key, spec in keys.items():
            if key not in values[sec]:
                if spec.required:
                    raise ConfigError("required key missing", None, f"{sec}.{key}", path)
                values[sec][key] = spec.default
    return ExperimentConfig(values, lines, path)


def load_config(path) -> ExperimentConfig:
    p = os.fspath(path)
    try:
        text = Path(p).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, None, p) from None
    return parse_config(text, p)


def bundled_configs() -> dict:
    """Name -> path of the configuration files shipped with the package."""
    root = Path(__file__).with_name("configs")
    return {p.stem: p for p in sorted(root.glob("*.cfg"))}


def bundled_config(path_or_name) -> str:
    """``path_or_name`` itself if it exists, else the bundled config of that name."""
    p = os.fspath(path_or_name)
    if not Path(p).exists():
        found = bundled_configs().get(Path(p).stem if p.endswith(".cfg") else p)
        if found is not None:
            return str(found)
    return p


def schema_text() -> str:
    """Human-readable listing of every section and key."""
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        for key, spec in keys.items():
            extra = f" ({'|'.join(spec.choices)})" if spec.choices else ""
            req = " required" if spec.required else f" default={spec.default!r}"
            out.append(f"  {key}:{req}{extra}  {spec.doc}")
    return "\n".join(out)

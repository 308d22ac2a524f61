"""Baseline removal and FFT peak analysis."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fitting import FitResult, ModelSpec, as_xy, fit
from .models import lorentzians_model


class BaselineWarning(UserWarning):
    pass


def _region_mask(x: np.ndarray, region) -> np.ndarray:
    if region is None:
        raise ValueError("a signal-free region is required")
    r = np.asarray(region)
    if r.dtype == bool:
        if r.shape != x.shape:
            raise ValueError("boolean region must match the data length")
        return r
    r = np.atleast_2d(np.asarray(region, dtype=float))
    if r.shape[1] != 2:
        raise ValueError("region must be (lo, hi) pairs or a boolean mask")
    mask = np.zeros_like(x, dtype=bool)
    for lo, hi in r:
        mask |= (x >= min(lo, hi)) & (x <= max(lo, hi))
    return mask


def baseline_subtract(data, signal_free_region):
    """Subtract a straight line fitted to the points in ``signal_free_region``.

    Returns (x, y - line, (slope, intercept)). A ``BaselineWarning`` is raised
    when the region itself contains an outlying feature (largest residual
    above five robust standard deviations), which usually means the region
    overlaps the signal.
    """
    x, y = as_xy(data)
    mask = _region_mask(x, signal_free_region)
    if mask.sum() < 2 or np.ptp(x[mask]) == 0:
        raise ValueError("signal-free region needs at least two distinct points")
    slope, intercept = np.polyfit(x[mask], y[mask], 1)
    out = y - (slope * x + intercept)
    r = out[mask]
    mad = 1.4826 * np.median(np.abs(r - np.median(r)))
    peak = np.max(np.abs(r))
    floor = 1e-9 * max(np.max(np.abs(y)), 1e-300)
    if peak > floor and peak > 5 * mad:
        warnings.warn(
            f"baseline region contains a feature ({peak:.3g} vs robust sigma {mad:.3g}); it may overlap the signal",
            BaselineWarning,
            stacklevel=2,
        )
    return x, out, (float(slope), float(intercept))


@dataclass(frozen=True)
class Spectrum:
    frequency: np.ndarray
    power: np.ndarray
    n_fft: int


def power_spectrum(t, y, window: Optional[str] = None, pad: int = 4) -> Spectrum:
    """|FFT|^2 of the mean-removed trace on a uniform grid, zero-padded to a power of two."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 4:
        raise ValueError("need at least four samples")
    step = np.diff(t)
    if np.max(np.abs(step - step[0])) > 1e-6 * abs(step[0]):
        raise ValueError("trace must be uniformly sampled")
    v = y - y.mean()
    if window == "hann":
        v = v * np.hanning(len(v))
    elif window not in (None, "none"):
        raise ValueError(f"unknown window {window!r}")
    n = 1 << int(np.ceil(np.log2(len(v) * pad)))
    p = np.abs(np.fft.rfft(v, n)) ** 2
    return Spectrum(np.fft.rfftfreq(n, step[0]), p, n)


def local_maxima(power: np.ndarray, rel: float = 0.1) -> np.ndarray:
    """Indices of local maxima above ``rel`` of the global maximum, DC excluded."""
    inner = power[1:-1]
    idx = np.flatnonzero((inner > power[:-2]) & (inner >= power[2:])) + 1
    top = power[1:].max() if len(power) > 1 else 0.0
    if top <= 0:
        return np.zeros(0, dtype=int)
    return idx[power[idx] >= rel * top]


def _fwhm(freq, power, k):
    half = power[k] / 2
    lo = k
    while lo > 0 and power[lo] > half:
        lo -= 1
    hi = k
    while hi < len(power) - 1 and power[hi] > half:
        hi += 1
    if power[lo] > half or power[hi] > half:
        return float("nan")
    # linear interpolation of both half-power crossings
    f_lo = np.interp(half, [power[lo], power[lo + 1]], [freq[lo], freq[lo + 1]])
    f_hi = np.interp(half, [power[hi], power[hi - 1]], [freq[hi], freq[hi - 1]])
    return float(f_hi - f_lo)


def fft_peak(trace, window: Optional[str] = None, pad: int = 4):
    """(peak frequency Hz, FWHM Hz of the power peak, Lorentzian FitResult).

    A trace with no spectral content away from DC gives (nan, nan, FitResult
    with converged=False).
    """
    t, y = as_xy(trace)
    spec = power_spectrum(t, y, window, pad)
    f, p = spec.frequency, spec.power
    scale = max(float(np.max(np.abs(y))), 1e-300)
    idx = local_maxima(p)
    if len(idx) == 0 or p[idx].max() <= (1e-12 * scale) ** 2 * len(y) ** 2:
        empty = FitResult("lorentzians1", {}, {}, float("nan"), False, np.zeros((0, 0)), (), {}, "no spectral peak", len(f))
        return float("nan"), float("nan"), empty
    k = int(idx[np.argmax(p[idx])])
    width = _fwhm(f, p, k)
    df = f[1] - f[0]
    span = 4 * (width if np.isfinite(width) else 4 * df)
    sel = np.abs(f - f[k]) <= span
    if sel.sum() < 8:
        sel = np.abs(np.arange(len(f)) - k) <= 8
    model = lorentzians_model(1)
    hw = width / 2 if np.isfinite(width) else df
    res = fit(
        model,
        (f[sel], p[sel] / p[k]),
        ModelSpec(model.name, {}, {"y0": 0.0, "lw": hw, "a1": 1.0, "f1": float(f[k])}, {"lw": (0.0, np.inf)}),
    )
    return float(f[k]), width, res

"""Model zoo: Gaussian and Lorentzian line sums, Rabi nutation, exponential
decays, the stretched-exponential echo with ESEEM term, the XY8 sinc^2 line
and the CPMG power law.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .fitting import FitResult, Model, ModelSpec, as_xy, fit

LN2 = np.log(2.0)
TWO_PI = 2 * np.pi


# -- helpers ----------------------------------------------------------------------------------

def _baseline_guess(y: np.ndarray) -> float:
    n = max(1, len(y) // 10)
    return float(np.median(np.concatenate([y[:n], y[-n:]])))


def _loglin_decay(x, y):
    """(amplitude, time constant) from a line through log|y|."""
    pos = y > 0.05 * np.max(np.abs(y)) if np.any(y > 0) else np.zeros_like(y, bool)
    if pos.sum() >= 2 and np.ptp(x[pos]) > 0:
        k, c = np.polyfit(x[pos], np.log(y[pos]), 1)
        if k < 0:
            return float(np.exp(c)), float(-1 / k)
    span = np.ptp(x) if np.ptp(x) > 0 else 1.0
    return float(y[0]) if len(y) else 1.0, span / 3


def _greedy_centres(x, resid, n, shape, width):
    """Repeatedly take the largest |residual| as a line centre and remove it."""
    r = resid.copy()
    centres, amps = [], []
    for _ in range(n):
        k = int(np.argmax(np.abs(r)))
        centres.append(float(x[k]))
        amps.append(float(r[k]))
        r = r - r[k] * shape(x, x[k], width)
    return centres, amps


def _sort_lines(params, errors, n, amp="a", pos="f"):
    order = sorted(range(1, n + 1), key=lambda k: params[f"{pos}{k}"])
    p, e = dict(params), dict(errors)
    for new, old in enumerate(order, start=1):
        for stem in (amp, pos):
            p[f"{stem}{new}"] = params[f"{stem}{old}"]
            if f"{stem}{old}" in errors:
                e[f"{stem}{new}"] = errors[f"{stem}{old}"]
    return p, e


# -- Gaussian lines ---------------------------------------------------------------------------

def gauss_line(f, f0, lw):
    return np.exp(-LN2 * (f - f0) ** 2 / lw**2)


def gaussians_model(n_lines: int) -> Model:
    names = ("y0", "lw") + tuple(f"a{k}" for k in range(1, n_lines + 1)) + tuple(f"f{k}" for k in range(1, n_lines + 1))

    def func(f, y0, lw, **p):
        out = np.full_like(f, y0)
        for k in range(1, n_lines + 1):
            out = out + p[f"a{k}"] * gauss_line(f, p[f"f{k}"], lw)
        return out

    def guess(f, y, fixed):
        y0 = fixed.get("y0", _baseline_guess(y))
        lw = fixed.get("lw", max(np.ptp(f) / (4 * n_lines), 3 * np.median(np.diff(np.sort(f)))))
        c, a = _greedy_centres(f, y - y0, n_lines, gauss_line, lw)
        g = {"y0": y0, "lw": lw}
        for k in range(n_lines):
            g[f"a{k + 1}"], g[f"f{k + 1}"] = a[k], c[k]
        return g

    return Model(
        f"gaussians{n_lines}", names, func, guess,
        bounds={"lw": (0.0, np.inf)},
        post=lambda p, e: _sort_lines(p, e, n_lines),
    )


def fit_gaussians(data, n_lines: int, lw: Optional[float] = None, spec: Optional[ModelSpec] = None) -> FitResult:
    """y0 + sum_k a_k exp(-ln2 (f - f_k)^2 / lw^2); ``lw`` (HWHM) shared and optionally fixed."""
    m = gaussians_model(n_lines)
    fixed = dict(spec.fixed) if spec else {}
    if lw is not None:
        fixed["lw"] = lw
    return _fit_lines(m, data, n_lines, fixed, spec)


def _fit_lines(m: Model, data, n_lines: int, fixed: dict, spec: Optional[ModelSpec]) -> FitResult:
    initial = dict(spec.initial) if spec else {}
    bounds = dict(spec.bounds) if spec else {}
    best = fit(m, data, ModelSpec(m.name, fixed, initial, bounds))
    if n_lines > 1:
        # overlapping lines defeat the greedy start; also try an even comb over the feature
        x, y = as_xy(data)
        comb = _comb_start(x, y, n_lines, fixed)
        comb.update(initial)
        comb = {k: v for k, v in comb.items() if k not in fixed}
        r = fit(m, (x, y), ModelSpec(m.name, fixed, comb, bounds))
        if _line_score(r, n_lines) > _line_score(best, n_lines):
            best = r
    return best


def _line_score(r: FitResult, n: int) -> tuple:
    """Prefer converged, then physically plausible (same-sign, resolved lines), then lower residual."""
    a = np.array([r.params[f"a{k}"] for k in range(1, n + 1)])
    f = np.sort([r.params[f"f{k}"] for k in range(1, n + 1)])
    plausible = (np.all(a <= 0) or np.all(a >= 0)) and np.min(np.diff(f)) > 0.5 * abs(r.params["lw"])
    return (r.converged, bool(plausible), -r.residual_norm)


def _comb_start(x, y, n, fixed) -> dict:
    y0 = fixed.get("y0", _baseline_guess(y))
    r = y - y0
    k = int(np.argmax(np.abs(r)))
    inside = np.flatnonzero(np.abs(r) > 0.1 * abs(r[k]))
    lo, hi = x[inside.min()], x[inside.max()]
    step = (hi - lo) / n
    centres = lo + step * (np.arange(n) + 0.5)
    lw = fixed.get("lw", max(step / 2, 1e-300))
    g = {"y0": y0, "lw": lw}
    for j, c in enumerate(centres, start=1):
        g[f"a{j}"] = float(np.interp(c, x, r))
        g[f"f{j}"] = float(c)
    return g


def fit_multi_gaussian(data, n_lines: int = 7, lw: float = 22e6, spec: Optional[ModelSpec] = None) -> FitResult:
    return fit_gaussians(data, n_lines, lw, spec)


def line_spacing(result: FitResult, n_lines: int) -> np.ndarray:
    f = np.sort([result.params[f"f{k}"] for k in range(1, n_lines + 1)])
    return np.diff(f)


# -- Lorentzian lines -------------------------------------------------------------------------

def lorentz_line(f, f0, lw):
    return lw**2 / ((f - f0) ** 2 + lw**2)


def lorentzians_model(n_lines: int) -> Model:
    names = ("y0", "lw") + tuple(f"a{k}" for k in range(1, n_lines + 1)) + tuple(f"f{k}" for k in range(1, n_lines + 1))

    def func(f, y0, lw, **p):
        out = np.full_like(f, y0)
        for k in range(1, n_lines + 1):
            out = out + p[f"a{k}"] * lorentz_line(f, p[f"f{k}"], lw)
        return out

    def guess(f, y, fixed):
        y0 = fixed.get("y0", _baseline_guess(y))
        lw = fixed.get("lw", max(np.ptp(f) / (8 * n_lines), 3 * np.median(np.diff(np.sort(f)))))
        c, a = _greedy_centres(f, y - y0, n_lines, lorentz_line, lw)
        g = {"y0": y0, "lw": lw}
        for k in range(n_lines):
            # spread repeated picks so the lines are distinguishable
            g[f"a{k + 1}"], g[f"f{k + 1}"] = a[k], c[k] + (k - (n_lines - 1) / 2) * 1e-3 * lw
        return g

    return Model(
        f"lorentzians{n_lines}", names, func, guess,
        bounds={"lw": (0.0, np.inf)},
        post=lambda p, e: _sort_lines(p, e, n_lines),
    )


def fit_lorentzian_sum(data, lw: float, n_lines: int = 1, spec: Optional[ModelSpec] = None) -> FitResult:
    """y0 + sum_k a_k lw^2 / ((f - f_k)^2 + lw^2) with ``lw`` (HWHM) fixed, e.g. 1/t_SL."""
    m = lorentzians_model(n_lines)
    fixed = dict(spec.fixed) if spec else {}
    fixed["lw"] = lw
    return _fit_lines(m, data, n_lines, fixed, spec)


def lorentzian_center(result: FitResult, n_lines: int) -> float:
    """Amplitude-weighted mean of the component centres."""
    a = np.array([result.params[f"a{k}"] for k in range(1, n_lines + 1)])
    f = np.array([result.params[f"f{k}"] for k in range(1, n_lines + 1)])
    w = np.abs(a)
    return float(np.sum(w * f) / np.sum(w)) if w.sum() > 0 else float(np.mean(f))


# -- Rabi -------------------------------------------------------------------------------------

def rabi_func(t, c, nu, phi, a, b, m, n):
    env = a * np.exp(-b * t) + m * np.exp(-n * t)
    return 1 - c / 2 + c / 2 * np.cos(TWO_PI * nu * t + phi) * env


def _spectral_peaks(t, y, k: int = 1):
    """Frequencies of the ``k`` strongest local maxima of a Hann-windowed spectrum."""
    t = np.asarray(t)
    if len(t) < 4:
        return [1.0 / max(np.ptp(t), 1e-30)]
    grid = np.linspace(t.min(), t.max(), len(t) * 2)
    yi = np.interp(grid, t, y - np.mean(y))
    nfft = 1 << int(np.ceil(np.log2(len(grid) * 16)))
    spec = np.abs(np.fft.rfft(yi * np.hanning(len(yi)), nfft))
    freq = np.fft.rfftfreq(nfft, grid[1] - grid[0])
    inner = spec[1:-1]
    idx = np.flatnonzero((inner > spec[:-2]) & (inner >= spec[2:])) + 1
    if len(idx) == 0:
        idx = np.array([1 + int(np.argmax(spec[1:]))])
    idx = idx[np.argsort(spec[idx])[::-1][:k]]
    return [float(freq[i]) for i in idx]


def _dominant_frequency(t, y):
    return _spectral_peaks(t, y, 1)[0]


def _rabi_guess(t, y, fixed):
    c = fixed.get("c", float(2 * (1 - np.mean(y[len(y) // 2 :]))))
    if abs(c) < 1e-12:
        c = float(np.ptp(y)) or 1e-3
    nu = fixed.get("nu", _dominant_frequency(t, y))
    span = np.ptp(t)
    # phase from the first point: y(0) = 1 - c/2 + c/2 cos(phi)
    cosphi = np.clip((y[0] - 1 + c / 2) / (c / 2), -1, 1) if c else 1.0
    return {"c": c, "nu": nu, "phi": float(np.arccos(cosphi)), "a": 0.5, "b": 2 / span, "m": 0.5, "n": 8 / span}


def _rabi_post(p, e):
    p, e = dict(p), dict(e)
    if p["b"] > p["n"]:
        for x, yk in (("a", "m"), ("b", "n")):
            p[x], p[yk] = p[yk], p[x]
            if x in e and yk in e:
                e[x], e[yk] = e[yk], e[x]
    p["phi"] = float(np.angle(np.exp(1j * p["phi"])))
    return p, e


RABI = Model(
    "rabi", ("c", "nu", "phi", "a", "b", "m", "n"), rabi_func, _rabi_guess,
    bounds={"nu": (0.0, np.inf), "b": (0.0, np.inf), "n": (0.0, np.inf)},
    post=_rabi_post,
)


def fit_rabi(data, spec: Optional[ModelSpec] = None) -> FitResult:
    """1 - c/2 + c/2 cos(2 pi nu t + phi) [a exp(-b t) + m exp(-n t)] (envelope on the cosine only)."""
    x, y = as_xy(data)
    best = None
    # the decay split is multimodal; try a few envelope starts
    for ratio in (4.0, 10.0, 30.0):
        g = _rabi_guess(x, y, dict(spec.fixed) if spec else {})
        init = {"b": g["b"], "n": g["b"] * ratio}
        if spec:
            init.update(spec.initial)
            init = {k: v for k, v in init.items() if k not in spec.fixed}
        s = ModelSpec("rabi", dict(spec.fixed) if spec else {}, init, dict(spec.bounds) if spec else {})
        r = fit(RABI, (x, y), s)
        if best is None or (r.converged, -r.residual_norm) > (best.converged, -best.residual_norm):
            best = r
    return best


# -- exponentials -----------------------------------------------------------------------------

def monoexp_func(t, a, T1):
    return a * np.exp(-t / T1)


def _monoexp_guess(t, y, fixed):
    a, T = _loglin_decay(t, y)
    return {"a": fixed.get("a", a), "T1": fixed.get("T1", T)}


MONOEXP = Model("monoexp", ("a", "T1"), monoexp_func, _monoexp_guess, bounds={"T1": (0.0, np.inf)})


def fit_monoexp(data, spec: Optional[ModelSpec] = None) -> FitResult:
    return fit(MONOEXP, data, spec)


def biexp_func(t, a, Ta, b, Tb):
    return a * np.exp(-t / Ta) + b * np.exp(-t / Tb)


def _biexp_guess(t, y, fixed):
    # slow component from the tail, fast one from what is left at early times
    tail = t >= np.percentile(t, 50)
    b, Tb = _loglin_decay(t[tail], y[tail])
    rest = y - b * np.exp(-t / Tb)
    head = t <= np.percentile(t, 40)
    a, Ta = _loglin_decay(t[head], rest[head])
    if not Ta < Tb:
        Ta = Tb / 5
    return {"a": a, "Ta": Ta, "b": b, "Tb": Tb}


def _biexp_post(p, e):
    p, e = dict(p), dict(e)
    if p["Ta"] > p["Tb"]:
        for x, yk in (("a", "b"), ("Ta", "Tb")):
            p[x], p[yk] = p[yk], p[x]
            if x in e and yk in e:
                e[x], e[yk] = e[yk], e[x]
    return p, e


BIEXP = Model(
    "biexp", ("a", "Ta", "b", "Tb"), biexp_func, _biexp_guess,
    bounds={"Ta": (0.0, np.inf), "Tb": (0.0, np.inf)}, post=_biexp_post,
)


def fit_biexp(data, spec: Optional[ModelSpec] = None) -> FitResult:
    return fit(BIEXP, data, spec)


# -- echo with ESEEM --------------------------------------------------------------------------

def stretched_exp_cos_func(tau, a, T2, c, b, d, f):
    return a * np.exp(-((2 * tau / T2) ** c)) + b * np.exp(-d * tau) * np.cos(TWO_PI * f * tau)


def _stretched_guess(tau, y, fixed):
    a = float(y[0]) if y[0] != 0 else 1.0
    # 1/e crossing of the smoothed decay
    below = np.flatnonzero(y < a / np.e)
    T2 = 2 * tau[below[0]] if len(below) else 2 * np.ptp(tau)
    decay = a * np.exp(-((2 * tau / T2) ** 1.5))
    f = _dominant_frequency(tau, y - decay)
    b = float(np.ptp(y - decay) / 2)
    return {"a": a, "T2": T2, "c": 1.5, "b": b, "d": 1 / max(np.ptp(tau) / 3, 1e-30), "f": f}


STRETCHED_EXP_COS = Model(
    "stretched_exp_cos", ("a", "T2", "c", "b", "d", "f"), stretched_exp_cos_func, _stretched_guess,
    bounds={"T2": (0.0, np.inf), "c": (0.1, 10.0), "d": (0.0, np.inf), "f": (0.0, np.inf)},
)


def fit_stretched_exp_cos(data, spec: Optional[ModelSpec] = None) -> FitResult:
    """a exp(-(2 tau / T2)^c) + b exp(-d tau) cos(2 pi f tau), tau = half the echo time."""
    x, y = as_xy(data)
    fixed = dict(spec.fixed) if spec else {}
    base = _stretched_guess(x, y, fixed)
    best = None
    # the oscillation frequency guess is the fragile part: try the strongest few peaks
    starts = []
    for f in _spectral_peaks(x, y - base["a"] * np.exp(-((2 * x / base["T2"]) ** 1.5)), 3):
        g = dict(base, f=f)
        starts += [g, dict(g, c=1.0), dict(g, c=2.5), dict(g, b=-g["b"])]
    for start in starts:
        init = {k: v for k, v in start.items() if k not in fixed}
        if spec:
            init.update(spec.initial)
        r = fit(STRETCHED_EXP_COS, (x, y), ModelSpec("stretched_exp_cos", fixed, init, dict(spec.bounds) if spec else {}))
        if best is None or (r.converged, -r.residual_norm) > (best.converged, -best.residual_norm):
            best = r
    return best


# -- XY8 sinc^2 -------------------------------------------------------------------------------

def sinc2_func(nu, a, tau, N, nu_rf, y0):
    x = TWO_PI * tau * N * (nu - nu_rf)
    return y0 + 0.5 * a * np.sinc(x / np.pi) ** 2


def _sinc2_guess(nu, y, fixed):
    y0 = fixed.get("y0", _baseline_guess(y))
    k = int(np.argmax(np.abs(y - y0)))
    a = 2 * float(y[k] - y0)
    tau = fixed.get("tau", 13e-9)
    # half width at half maximum of sinc^2 is 1.39156 / (2 pi tau N)
    half = np.abs(y - y0) >= 0.5 * abs(y[k] - y0)
    idx = np.flatnonzero(half)
    width = max(nu[idx].max() - nu[idx].min(), np.median(np.diff(np.sort(nu)))) / 2
    N = fixed.get("N", 1.39156 / (TWO_PI * tau * width))
    return {"a": a, "tau": tau, "N": N, "nu_rf": float(nu[k]), "y0": y0}


SINC2 = Model(
    "sinc2", ("a", "tau", "N", "nu_rf", "y0"), sinc2_func, _sinc2_guess,
    bounds={"N": (0.0, np.inf), "tau": (0.0, np.inf)},
    fixed_defaults={"tau": 13e-9, "y0": 0.0},
)


def fit_sinc2(data, tau: float = 13e-9, spec: Optional[ModelSpec] = None) -> FitResult:
    """a/2 [sin(x)/x]^2, x = 2 pi tau N (nu - nu_rf). Only tau*N is identifiable, so tau is fixed."""
    fixed = {"tau": tau}
    if spec:
        fixed.update(spec.fixed)
    init = dict(spec.initial) if spec else {}
    if "y0" in init:
        fixed.pop("y0", None)
    return fit(SINC2, data, ModelSpec("sinc2", fixed, init, dict(spec.bounds) if spec else {}))


# -- power law --------------------------------------------------------------------------------

def power_func(N, a, s):
    return a * np.asarray(N, dtype=float) ** s


def fit_power_law(data, space: str = "log") -> FitResult:
    """T2 = a N^s.

    ``space="log"`` is the closed-form regression of log T2 on log N.
    ``space="linear"`` minimises the residuals of T2 itself, started from the
    log-log solution; it weights the long-T2 points more heavily.
    """
    x, y = as_xy(data)
    if space not in ("log", "linear"):
        raise ValueError(f"unknown space {space!r}")
    if len(x) < 2:
        raise ValueError("power-law fit needs at least two points")
    if np.any(x <= 0) or np.any(y <= 0):
        return FitResult("power_law", {"a": np.nan, "s": np.nan}, {"a": np.nan, "s": np.nan}, np.nan, False,
                         np.full((2, 2), np.nan), ("a", "s"), {}, "non-positive data", len(x))
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([np.ones_like(lx), lx])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    a = float(np.exp(coef[0]))
    if space == "linear":
        return fit(POWER_LAW, (x, y), ModelSpec("power_law", {}, {"a": a, "s": float(coef[1])}))
    r = ly - A @ coef
    dof = max(len(x) - 2, 1)
    cov = np.linalg.inv(A.T @ A) * (r @ r) / dof if len(x) > 2 else np.zeros((2, 2))
    errs = {"a": float(a * np.sqrt(cov[0, 0])), "s": float(np.sqrt(cov[1, 1]))}
    return FitResult("power_law", {"a": a, "s": float(coef[1])}, errs, float(np.linalg.norm(r)), True,
                     cov, ("a", "s"), {}, "", len(x))


POWER_LAW = Model("power_law", ("a", "s"), power_func, lambda x, y, f: {"a": 1.0, "s": 0.5})


# -- registry ---------------------------------------------------------------------------------

FITTERS = {
    "gaussians7": lambda d: fit_multi_gaussian(d),
    "rabi": fit_rabi,
    "monoexp": fit_monoexp,
    "biexp": fit_biexp,
    "stretched_exp_cos": fit_stretched_exp_cos,
    "power_law": fit_power_law,
    "sinc2": fit_sinc2,
}


def model_function(name: str) -> Model:
    fixed = {"rabi": RABI, "monoexp": MONOEXP, "biexp": BIEXP, "stretched_exp_cos": STRETCHED_EXP_COS,
             "sinc2": SINC2, "power_law": POWER_LAW}
    if name in fixed:
        return fixed[name]
    for stem, builder in (("gaussians", gaussians_model), ("lorentzians", lorentzians_model)):
        if name.startswith(stem) and name[len(stem):].isdigit():
            return builder(int(name[len(stem):]))
    raise KeyError(f"unknown model {name!r}")

"""Classical dephasing noise: Ornstein-Uhlenbeck detuning trajectories,
static ensemble inhomogeneity and the filter-function coherence oracle.

Conventions
-----------
Noise amplitudes are ordinary frequencies (Hz). The power spectral density is
two-sided in angular frequency and normalised so that

    integral_{-inf}^{inf} S(omega) d omega = (2 pi b)^2,

i.e. S(omega) = (2 pi b)^2 * 2 tc / (1 + (omega tc)^2) / (2 pi). With the
CPMG filter F (value 8 sin^4(z/4) for a spin echo, z = omega t) the decay
exponent is chi(t) = integral_{-inf}^{inf} S(omega) F(omega t) / omega^2 d omega,
which equals half the variance of the accumulated phase.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.integrate import quad

TWO_PI = 2 * np.pi


class CoherenceQuadratureError(RuntimeError):
    def __init__(self, message: str, estimate: np.ndarray, error: float):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class OuParams:
    b: float = 0.0  # stationary RMS detuning, Hz
    tc: float = 10e-6  # correlation time, s

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("b must be non-negative")
        if not self.tc > 0:
            raise ValueError("tc must be positive")


@dataclass(frozen=True)
class NoisePsd:
    params: OuParams
    kind: str = "lorentzian"

    def __post_init__(self):
        if self.kind != "lorentzian":
            raise ValueError(f"unsupported PSD kind {self.kind!r}")


@dataclass(frozen=True)
class EnsembleModel:
    """Static inhomogeneity: Gaussian detuning lines plus a Rabi-amplitude spread.

    ``detuning_lines`` holds (center Hz, weight, width Hz) with width the
    Gaussian standard deviation.
    """

    detuning_lines: tuple = ((0.0, 1.0, 1e-300),)
    rabi_spread: float = 0.0

    def __post_init__(self):
        lines = tuple(tuple(float(x) for x in line) for line in self.detuning_lines)
        if not lines:
            raise ValueError("at least one detuning line is required")
        w = np.array([line[1] for line in lines])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("line weights must be non-negative and sum to 1")
        if any(line[2] <= 0 for line in lines):
            raise ValueError("line widths must be positive")
        if self.rabi_spread < 0:
            raise ValueError("rabi_spread must be non-negative")
        object.__setattr__(self, "detuning_lines", lines)

    def density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c, w, s in self.detuning_lines:
            out += w * np.exp(-0.5 * ((x - c) / s) ** 2) / (s * np.sqrt(TWO_PI))
        return out


# nitrogen-14 triplet: multiplicity of total m_I = -3..3 for three spin-1 nuclei
_N14_MULTIPLICITY = (1, 3, 6, 7, 6, 3, 1)


def vb_ensemble(spacing: float = 44e6, hwhm: float = 22e6, rabi_spread: float = 0.0) -> EnsembleModel:
    """Seven hyperfine lines with binomial-like weights and a fixed Gaussian HWHM."""
    sigma = hwhm / np.sqrt(2 * np.log(2))
    total = sum(_N14_MULTIPLICITY)
    lines = tuple(((k - 3) * spacing, m / total, sigma) for k, m in enumerate(_N14_MULTIPLICITY))
    return EnsembleModel(lines, rabi_spread)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for trajectory ``index``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def sample_ou_trajectory(p: OuParams, dt: float, n: int, seed: int) -> np.ndarray:
    """Exact discrete OU samples x_0..x_{n-1} (Hz) on a uniform grid."""
    if not dt > 0 or n < 1:
        raise ValueError("need dt > 0 and n >= 1")
    rng = trajectory_rng(seed, 0)
    xi = rng.standard_normal(n)
    a = np.exp(-dt / p.tc)
    s = p.b * np.sqrt(-np.expm1(-2 * dt / p.tc))
    x = np.empty(n)
    x[0] = p.b * xi[0]
    for k in range(1, n):
        x[k] = a * x[k - 1] + s * xi[k]
    return x


def sample_static_offsets(m: EnsembleModel, seed, size: int | None = None):
    """Draw (detuning Hz, rabi_scale) from the ensemble model.

    ``seed`` is an integer or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else trajectory_rng(seed, 0)
    lines = np.array(m.detuning_lines)
    k = rng.choice(len(lines), p=lines[:, 1], size=size)
    detuning = lines[k, 0] + lines[k, 2] * rng.standard_normal(size)
    scale = 1.0 + m.rabi_spread * rng.standard_normal(size)
    scale = np.maximum(scale, 0.0)
    if size is None:
        return float(detuning), float(scale)
    return detuning, scale


def psd(p: NoisePsd, omega) -> np.ndarray:
    """Two-sided Lorentzian PSD in (rad/s)^2 per rad/s."""
    o = p.params
    var = (TWO_PI * o.b) ** 2
    w = np.asarray(omega, dtype=float)
    return var * 2 * o.tc / (1 + (w * o.tc) ** 2) / TWO_PI


def cpmg_filter_function(N: int, tau: float, omega) -> np.ndarray:
    """CPMG filter for N instantaneous pi pulses separated by 2 tau.

    Pulses sit at tau, 3 tau, ..., (2N - 1) tau; total time t = 2 N tau and
    z = omega t. F(z) = 8 sin^4(z/4N) [sin or cos](z/2)^2 / cos^2(z/2N),
    sin for even N and cos for odd N; removable singularities take the limit.
    """
    if N < 1 or not tau > 0:
        raise ValueError("need N >= 1 and tau > 0")
    z = np.abs(np.asarray(omega, dtype=float)) * 2 * N * tau
    return _cpmg_filter_z(N, z)


def _cpmg_filter_z(N: int, z: np.ndarray) -> np.ndarray:
    x = z / (2 * N)
    c = np.cos(x)
    num = np.sin(z / 2) if N % 2 == 0 else np.cos(z / 2)
    small = np.abs(c) < 1e-7
    ratio2 = np.where(small, float(N * N), (num / np.where(small, 1.0, c)) ** 2)
    return 8 * np.sin(z / (4 * N)) ** 4 * ratio2


def filter_from_pulse_times(pulse_times: Sequence[float], total: float, omega) -> np.ndarray:
    """Filter |omega Y(omega)|^2 / 2 for instantaneous pi pulses at arbitrary times."""
    t = np.concatenate([[0.0], np.asarray(pulse_times, dtype=float), [total]])
    signs = (-1.0) ** np.arange(len(t) - 1)
    # omega Y = i sum_j s_j (e^{-i w t_{j+1}} - e^{-i w t_j})
    coef = np.zeros(len(t))
    coef[1:] += signs
    coef[:-1] -= signs
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    wy = np.exp(-1j * np.outer(w, t)) @ coef
    return np.abs(wy) ** 2 / 2


# below Z_CORE the Lorentzian corner z = T / tc may be narrower than any shared grid step
Z_CORE = 2 * np.pi


def _z_grid(N: int, z_max: float, dz: float):
    n = int(np.ceil((z_max - Z_CORE) / dz))
    n += (-n) % 4
    z = np.linspace(Z_CORE, z_max, n + 1)
    return z, _cpmg_filter_z(N, z) / z**2


def _simpson(h: float, y: np.ndarray) -> float:
    return h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())


def _chi_on_grid(p: NoisePsd, N: int, T: float, z: np.ndarray, weight: np.ndarray):
    o = p.params
    corner = T / o.tc
    core, core_err = quad(
        lambda u: float(psd(p, u / T) * _cpmg_filter_z(N, np.array(u)) / u**2) if u > 0 else 0.0,
        0.0,
        Z_CORE,
        points=[corner] if corner < Z_CORE else None,
        epsabs=0.0,
        epsrel=1e-10,
        limit=200,
    )
    integrand = psd(p, z / T) * weight
    h = z[1] - z[0]
    fine = _simpson(h, integrand)
    coarse = _simpson(2 * h, integrand[::2])
    # tail beyond z_max: S(z/T) <= var T^2 / (pi tc z^2); F is 4 N pi periodic, so use its
    # period mean, padded by the relative change of z^-4 across one period
    z_max = z[-1]
    var = (TWO_PI * o.b) ** 2
    period = 4 * N * np.pi
    fmean = float(np.mean(_cpmg_filter_z(N, np.linspace(0, period, 64 * N, endpoint=False))))
    pad = 1 + 4 * period / z_max
    tail = fmean * pad * var * T**2 / (np.pi * o.tc) / (3 * z_max**3)
    return 2 * T * (core + fine), 2 * T * (core_err + abs(fine - coarse) + tail)


def analytic_coherence(
    p: NoisePsd,
    N: int,
    times,
    dz: float = 0.05,
    harmonics: int = 30,
    rtol: float = 1e-4,
) -> np.ndarray:
    """W(t) = exp(-chi(t)) for CPMG-N at total free-evolution times ``times``.

    chi(t) = 2 t * integral_0^inf S(z/t) F(z) / z^2 dz in z = omega t, with
    adaptive quadrature up to z = 2 pi and composite Simpson beyond. Raises
    CoherenceQuadratureError (carrying the estimate) when the step-halving
    plus tail error exceeds ``rtol`` of chi and 1e-6 absolute.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if N < 1 or np.any(times < 0):
        raise ValueError("need N >= 1 and non-negative times")
    if p.params.b == 0:
        return np.ones_like(times)
    chi = np.zeros_like(times)
    worst = 0.0
    # one grid for all times: the filter harmonics plus the Lorentzian corner z = T / tc
    z_max = max((2 * harmonics + 1) * N * np.pi, 50.0 * times.max() / p.params.tc)
    z, weight = _z_grid(N, z_max, dz)
    for k, T in enumerate(times):
        if T == 0:
            continue
        c, e = _chi_on_grid(p, N, T, z, weight)
        chi[k] = c
        if e > max(rtol * c, 1e-6):
            worst = max(worst, e)
    W = np.exp(-chi)
    if worst > 0:
        raise CoherenceQuadratureError(f"coherence quadrature did not converge (error {worst:.3g})", W, worst)
    return W


def ou_slice_weights(n: int, h: float, tc: float) -> tuple:
    """Moments of a delay built from ``n`` frozen OU slices of length ``h``.

    For x_{k+1} = a x_k + s xi_k with a = exp(-h/tc), the accumulated
    integral I = h * sum_{k<n} x_k and the end value x_n are jointly Gaussian
    given x_0. Returns (mean_I, mean_x, var_I, cov, var_x) per unit b^2 with
    the means as coefficients of x_0.
    """
    return _slice_weights(int(n), float(h), float(tc))


@lru_cache(maxsize=4096)
def _slice_weights(n: int, h: float, tc: float) -> tuple:
    r = h / tc
    m = np.arange(n, dtype=float)
    one_minus_am = -np.expm1(-m * r)  # 1 - a^m
    a_m = np.exp(-m * r)
    one_minus_a = -np.expm1(-r)
    s2 = -np.expm1(-2 * r)  # s^2 / b^2
    mean_I = h * np.exp(-m * r).sum()
    mean_x = float(np.exp(-n * r))
    var_x = float(-np.expm1(-2 * n * r))
    # I - mean = h s sum_j xi_j (1 - a^{n-1-j}) / (1 - a); x_n - mean = s sum_j xi_j a^{n-1-j}
    if n > 1:
        g = one_minus_am[1:] / one_minus_a
        var_I = float(h * h * s2 * np.sum(g * g))
        cov = float(h * s2 * np.sum(a_m[1:] * g))
    else:
        var_I = 0.0
        cov = 0.0
    return float(mean_I), mean_x, var_I, cov, var_x


def calibrate_echo_b(t2: float, tc: float) -> float:
    """RMS detuning b (Hz) giving single-echo decay exp(-(t/t2)^3) in the slow-bath limit.

    chi(t) = (2 pi b)^2 t^3 / (12 tc) for t << tc.
    """
    return float(np.sqrt(12 * tc / t2**3) / TWO_PI)

"""Hamiltonians for the boron-vacancy ground-state triplet.

All parameter records hold ordinary frequencies (Hz, or MHz for hyperfine
tensors); builders convert to angular units (rad/s) exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .constants import GAMMA_E
from .spin import (
    NotHermitianError,
    Operator,
    SpinSystem,
    embed,
    pauli,
    spin_operators,
)

TWO_PI = 2 * np.pi

# principal values from the three-nitrogen hyperfine model, MHz
VB_HYPERFINE = (
    (80.0, 57.0, 47.0),
    (46.0, 91.0, 48.0),
    (80.0, 57.0, 47.0),
)

VB_SYSTEM = SpinSystem(1.0, (1.0, 1.0, 1.0))


@dataclass(frozen=True)
class ZfsParams:
    D: float = 3.47e9
    E: float = 0.0

    def __post_init__(self):
        if not self.D > 0 and not (self.D == 0 and self.E == 0):
            raise ValueError(f"D must be positive, got {self.D}")
        if self.D > 0 and abs(self.E) >= self.D:
            raise ValueError(f"|E| must be below D, got E={self.E}, D={self.D}")


@dataclass(frozen=True)
class ZeemanParams:
    B0: tuple = (0.0, 0.0, 8e-3)
    gamma: float = GAMMA_E

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        b = tuple(float(x) for x in self.B0)
        if len(b) != 3:
            raise ValueError("B0 must be a 3-vector")
        object.__setattr__(self, "B0", b)


@dataclass(frozen=True)
class HyperfineTensor:
    """3x3 hyperfine tensor in MHz (principal values accepted as a 3-vector)."""

    A: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        if a.shape == (3,):
            a = np.diag(a)
        if a.shape != (3, 3) or not np.all(np.isfinite(a)):
            raise ValueError("hyperfine tensor must be a finite 3x3 matrix or 3 principal values")
        pv = np.abs(np.linalg.eigvalsh((a + a.T) / 2))
        if np.any(pv > 200.0):
            raise ValueError(f"hyperfine principal values {pv} outside the 0-200 MHz band")
        a.setflags(write=False)
        object.__setattr__(self, "A", a)


@dataclass(frozen=True)
class DriveParams:
    rabi: float = 0.0
    phase: float = 0.0
    detuning: float = 0.0

    def __post_init__(self):
        if self.rabi < 0:
            raise ValueError("rabi frequency must be non-negative")


@dataclass(frozen=True)
class RfTerm:
    """Oscillating field along the defect axis, B(t) = b_rf cos(2 pi nu_rf t + phase)."""

    b_rf: float
    nu_rf: float
    phase: float = 0.0
    gamma: float = GAMMA_E


def _check_hermitian(H: Operator) -> Operator:
    if not H.is_hermitian(1e-9):
        raise NotHermitianError("builder produced a non-Hermitian operator")
    return H


def zfs_hamiltonian(p: ZfsParams) -> Operator:
    """D (Sz^2 - S(S+1)/3) + E (Sx^2 - Sy^2) for S = 1, in rad/s."""
    s = spin_operators(1)
    sx, sy, sz = (s[k].entries for k in ("Sx", "Sy", "Sz"))
    h = p.D * (sz @ sz - 2.0 / 3.0 * np.eye(3)) + p.E * (sx @ sx - sy @ sy)
    return _check_hermitian(Operator(TWO_PI * h))


def zeeman_hamiltonian(p: ZeemanParams, s: float = 1.0) -> Operator:
    ops = spin_operators(s)
    bx, by, bz = p.B0
    h = bx * ops["Sx"].entries + by * ops["Sy"].entries + bz * ops["Sz"].entries
    return _check_hermitian(Operator(TWO_PI * p.gamma * h))


def hyperfine_hamiltonian(tensors: Sequence[HyperfineTensor], system: SpinSystem = VB_SYSTEM) -> Operator:
    """Sum over nuclei of S . A_k . I_k embedded in the full space, rad/s."""
    if len(tensors) != len(system.nuclei):
        raise ValueError(f"{len(tensors)} tensors for {len(system.nuclei)} nuclei")
    s_ops = spin_operators(system.electron_spin)
    s_full = [embed(s_ops[k], 0, system).entries for k in ("Sx", "Sy", "Sz")]
    h = np.zeros((system.dim, system.dim), dtype=complex)
    for k, (tensor, spin) in enumerate(zip(tensors, system.nuclei), start=1):
        i_ops = spin_operators(spin)
        i_full = [embed(i_ops[c], k, system).entries for c in ("Sx", "Sy", "Sz")]
        A = tensor.A * 1e6
        for a in range(3):
            for b in range(3):
                if A[a, b] != 0.0:
                    h += A[a, b] * (s_full[a] @ i_full[b])
    return _check_hermitian(Operator(TWO_PI * h))


def electron_hamiltonian(zfs: ZfsParams, zeeman: ZeemanParams) -> Operator:
    return zfs_hamiltonian(zfs) + zeeman_hamiltonian(zeeman)


def full_hamiltonian(
    zfs: ZfsParams,
    zeeman: ZeemanParams,
    tensors: Sequence[HyperfineTensor],
    system: SpinSystem = VB_SYSTEM,
) -> Operator:
    """ZFS + electron Zeeman + hyperfine on the electron-nuclear product space."""
    he = electron_hamiltonian(zfs, zeeman)
    return embed(he, 0, system) + hyperfine_hamiltonian(tensors, system)


def rotating_frame_two_level(
    drive: DriveParams,
    rf: Optional[RfTerm] = None,
    noise_offset: float = 0.0,
) -> Callable[[float], Operator]:
    """Time-dependent 2x2 generator on {|0>, |-1>} in the carrier frame, rad/s.

    H(t) = (Omega/2)(cos(phi) sx + sin(phi) sy)
           + pi (detuning + noise_offset + gamma b_rf cos(2 pi nu_rf t + phi_rf)) sz
    """
    p = pauli()
    om = TWO_PI * drive.rabi
    static = 0.5 * om * (np.cos(drive.phase) * p["x"].entries + np.sin(drive.phase) * p["y"].entries)
    static = static + np.pi * (drive.detuning + noise_offset) * p["z"].entries
    sz = p["z"].entries

    def generator(t: float) -> Operator:
        if rf is None or rf.b_rf == 0.0:
            return Operator(static)
        f = rf.gamma * rf.b_rf * np.cos(TWO_PI * rf.nu_rf * t + rf.phase)
        return Operator(static + np.pi * f * sz)

    return generator


def second_rotating_frame_generator(rf: RfTerm) -> Operator:
    """Effective generator when the spin-lock Rabi frequency equals nu_rf.

    (gamma b_rf / 4)(cos(phi) sz + sin(phi) sx), gamma in rad/s/T.
    """
    p = pauli()
    g = TWO_PI * rf.gamma * rf.b_rf / 4.0
    return Operator(g * (np.cos(rf.phase) * p["z"].entries + np.sin(rf.phase) * p["x"].entries))


def transition_frequencies(H: Operator) -> np.ndarray:
    """All pairwise eigenvalue differences of ``H`` in Hz, ascending."""
    if not H.is_hermitian():
        raise NotHermitianError("transition_frequencies requires a Hermitian operator")
    w = np.linalg.eigvalsh(H.entries) / TWO_PI
    i, j = np.triu_indices(len(w), k=1)
    return np.sort(np.abs(w[j] - w[i]))


def electron_character(H: Operator, system: SpinSystem = VB_SYSTEM):
    """Eigen-decompose ``H`` and label each eigenvector by its dominant m_S."""
    w, v = np.linalg.eigh(H.entries)
    sz = np.real(np.diag(embed(spin_operators(system.electron_spin)["Sz"], 0, system).entries))
    weights = np.abs(v) ** 2
    ms_values = np.unique(sz)[::-1]
    frac = np.stack([weights[sz == m].sum(axis=0) for m in ms_values])
    labels = ms_values[np.argmax(frac, axis=0)]
    return w, v, labels


def allowed_transitions(
    H: Operator,
    system: SpinSystem = VB_SYSTEM,
    ms_from: float = 0.0,
    ms_to: float = -1.0,
    min_intensity: float = 1e-3,
):
    """Frequencies (Hz) and relative intensities of Sx-allowed lines between two m_S manifolds."""
    w, v, labels = electron_character(H, system)
    sx = embed(spin_operators(system.electron_spin)["Sx"], 0, system).entries
    sx_eig = v.conj().T @ sx @ v
    a = np.flatnonzero(labels == ms_from)
    b = np.flatnonzero(labels == ms_to)
    inten = np.abs(sx_eig[np.ix_(a, b)]) ** 2
    freq = np.abs(w[b][None, :] - w[a][:, None]) / TWO_PI
    keep = inten > min_intensity * inten.max()
    order = np.argsort(freq[keep])
    return freq[keep][order], inten[keep][order]


def group_lines(freqs: np.ndarray, weights: np.ndarray, gap: float = 10e6):
    """Merge transitions closer than ``gap`` into weighted line centres."""
    centers, totals = [], []
    start = 0
    for k in range(1, len(freqs) + 1):
        if k == len(freqs) or freqs[k] - freqs[k - 1] > gap:
            f, wt = freqs[start:k], weights[start:k]
            centers.append(float(np.sum(f * wt) / np.sum(wt)))
            totals.append(float(np.sum(wt)))
            start = k
    return np.array(centers), np.array(totals)

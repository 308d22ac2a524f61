"""Small-Hilbert-space linear algebra: spin operators, tensor embedding,
Hermitian exponentials and density matrices.

Basis convention: every spin slot is ordered |s, m> with m descending, so the
electron triplet reads |+1>, |0>, |-1>. Composite spaces are Kronecker
products in slot order (electron first, then nuclei as declared).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Sequence

import numpy as np

from .constants import TOL


class DimensionError(ValueError):
    pass


class NotHermitianError(ValueError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Operator:
    """Square complex matrix tagged with its dimension."""

    entries: np.ndarray
    dim: int = field(default=0)

    def __post_init__(self):
        m = _freeze(self.entries)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator must be square, got shape {m.shape}")
        if self.dim and self.dim != m.shape[0]:
            raise DimensionError(f"dim tag {self.dim} does not match {m.shape[0]}")
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "dim", m.shape[0])

    @classmethod
    def identity(cls, dim: int) -> "Operator":
        return cls(np.eye(dim))

    @classmethod
    def zeros(cls, dim: int) -> "Operator":
        return cls(np.zeros((dim, dim)))

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __add__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.entries + other.entries)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.entries - other.entries)

    def __mul__(self, c) -> "Operator":
        return Operator(self.entries * c)

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(-self.entries)

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.entries @ other.entries)

    def _check(self, other: "Operator"):
        if other.dim != self.dim:
            raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")

    @property
    def dag(self) -> "Operator":
        return Operator(self.entries.conj().T)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def commutator(self, other: "Operator") -> "Operator":
        return self @ other - other @ self

    def is_hermitian(self, tol: float = TOL.hermitian) -> bool:
        m = self.entries
        scale = max(1.0, float(np.max(np.abs(m))))
        return bool(np.max(np.abs(m - m.conj().T)) <= tol * scale)

    def is_unitary(self, tol: float = TOL.unitary) -> bool:
        m = self.entries
        return bool(np.max(np.abs(m @ m.conj().T - np.eye(self.dim))) <= tol)

    def allclose(self, other: "Operator", atol: float = 1e-12) -> bool:
        return self.dim == other.dim and np.allclose(self.entries, other.entries, rtol=0, atol=atol)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite operator."""

    op: Operator

    def __post_init__(self):
        op = self.op if isinstance(self.op, Operator) else Operator(self.op)
        object.__setattr__(self, "op", op)
        if abs(op.trace() - 1.0) > TOL.trace:
            raise ValueError(f"density matrix trace {op.trace():.3g} != 1")
        if not op.is_hermitian():
            raise NotHermitianError("density matrix is not Hermitian")
        lo = float(np.min(np.linalg.eigvalsh(op.entries)))
        if lo < -TOL.psd_slack:
            raise ValueError(f"density matrix has negative eigenvalue {lo:.3g}")

    @classmethod
    def pure(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(Operator(np.outer(psi, psi.conj())))

    @classmethod
    def basis(cls, dim: int, index: int) -> "DensityMatrix":
        psi = np.zeros(dim)
        psi[index] = 1.0
        return cls.pure(psi)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(Operator(np.eye(dim) / dim))

    @property
    def dim(self) -> int:
        return self.op.dim

    @property
    def entries(self) -> np.ndarray:
        return self.op.entries

    def expect(self, observable: Operator) -> float:
        return float(np.real(np.trace(self.op.entries @ observable.entries)))

    def population(self, index: int) -> float:
        return float(np.real(self.op.entries[index, index]))


def _as_spin(s) -> Fraction:
    f = Fraction(s).limit_denominator(1000)
    if abs(float(f) - float(s)) > 1e-12 or (2 * f).denominator != 1 or f < 0:
        raise ValueError(f"spin quantum number must be a non-negative half-integer, got {s}")
    return f


@dataclass(frozen=True)
class SpinSystem:
    """Electron spin plus a list of nuclear spins; slot 0 is the electron."""

    electron_spin: float = 1.0
    nuclei: tuple = ()

    def __post_init__(self):
        _as_spin(self.electron_spin)
        for i in self.nuclei:
            _as_spin(i)
        object.__setattr__(self, "nuclei", tuple(self.nuclei))

    @property
    def spins(self) -> tuple:
        return (self.electron_spin, *self.nuclei)

    @property
    def slot_dims(self) -> tuple:
        return tuple(int(2 * _as_spin(s) + 1) for s in self.spins)

    @property
    def dim(self) -> int:
        return int(np.prod(self.slot_dims))


def spin_operators(s) -> dict:
    """Return ``{"Sx", "Sy", "Sz"}`` for spin ``s`` in the |s, m> basis, m descending."""
    f = _as_spin(s)
    sv = float(f)
    d = int(2 * f + 1)
    m = sv - np.arange(d)
    # <m+1|S+|m> = sqrt(s(s+1) - m(m+1)) sits on the superdiagonal
    splus = np.diag(np.sqrt(sv * (sv + 1) - m[1:] * (m[1:] + 1)), k=1)
    sx = (splus + splus.T) / 2
    sy = (splus - splus.T) / 2j
    return {"Sx": Operator(sx), "Sy": Operator(sy), "Sz": Operator(np.diag(m))}


def pauli() -> dict:
    sx = np.array([[0, 1], [1, 0]])
    sy = np.array([[0, -1j], [1j, 0]])
    sz = np.array([[1, 0], [0, -1]])
    return {"x": Operator(sx), "y": Operator(sy), "z": Operator(sz)}


def embed(op: Operator, slot: int, system: SpinSystem) -> Operator:
    """Tensor ``op`` into ``slot`` of ``system`` with identities on all other slots."""
    dims = system.slot_dims
    if not 0 <= slot < len(dims):
        raise IndexError(f"slot {slot} out of range for {len(dims)} slots")
    if op.dim != dims[slot]:
        raise DimensionError(f"operator dim {op.dim} does not match slot {slot} dim {dims[slot]}")
    factors = [np.eye(d) for d in dims]
    factors[slot] = op.entries
    return Operator(reduce(np.kron, factors))


def kron(*ops: Operator) -> Operator:
    return Operator(reduce(np.kron, [o.entries for o in ops]))


def expm_hermitian(H: Operator, t: float) -> Operator:
    """U = exp(-i H t) for Hermitian ``H`` (rad/s) and time ``t`` (s)."""
    if not H.is_hermitian():
        raise NotHermitianError("expm_hermitian requires a Hermitian generator")
    h = H.entries
    w, v = np.linalg.eigh((h + h.conj().T) / 2)
    return Operator((v * np.exp(-1j * w * t)) @ v.conj().T)


def evolve(rho: DensityMatrix, U: Operator) -> DensityMatrix:
    """Return U rho U^dagger."""
    if U.dim != rho.dim:
        raise DimensionError(f"propagator dim {U.dim} does not match state dim {rho.dim}")
    if not U.is_unitary():
        raise ValueError("propagator is not unitary")
    u = U.entries
    out = u @ rho.entries @ u.conj().T
    return DensityMatrix(Operator((out + out.conj().T) / 2))


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> Operator:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return Operator(scale * (a + a.conj().T) / 2)


def random_density(dim: int, rng: np.random.Generator) -> DensityMatrix:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    r = a @ a.conj().T
    return DensityMatrix(Operator(r / np.trace(r).real))


def spin_dims(spins: Sequence[float]) -> tuple:
    return tuple(int(2 * _as_spin(s) + 1) for s in spins)

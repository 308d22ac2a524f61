import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import expm_series
from spinlab.spin import (
    DensityMatrix,
    DimensionError,
    NotHermitianError,
    Operator,
    SpinSystem,
    embed,
    evolve,
    expm_hermitian,
    pauli,
    random_density,
    random_hermitian,
    spin_operators,
)

VB = SpinSystem(1.0, (1.0, 1.0, 1.0))


def test_spin1_sz_is_diagonal_descending():
    assert np.array_equal(spin_operators(1)["Sz"].entries, np.diag([1, 0, -1]).astype(complex))


def test_spin_half_sx_is_half_pauli():
    assert np.allclose(spin_operators(0.5)["Sx"].entries, [[0, 0.5], [0.5, 0]], atol=0)


def test_spin1_commutator():
    s = spin_operators(1)
    assert s["Sx"].commutator(s["Sy"]).allclose(s["Sz"] * 1j, atol=1e-12)


@pytest.mark.parametrize("s", [0.5, 1, 1.5, 2])
def test_casimir(s):
    ops = spin_operators(s)
    total = sum((ops[k] @ ops[k] for k in ("Sx", "Sy", "Sz")), Operator.zeros(int(2 * s + 1)))
    assert total.allclose(Operator.identity(int(2 * s + 1)) * (s * (s + 1)), atol=1e-12)


@pytest.mark.parametrize("s", [0.3, -1, 2.25])
def test_invalid_spin(s):
    with pytest.raises(ValueError):
        spin_operators(s)


def test_vb_system_dimension():
    assert VB.dim == 81
    assert SpinSystem(0.5).dim == 2


def test_embed_electron_sz_eigenvalue():
    sz = embed(spin_operators(1)["Sz"], 0, VB).entries
    # |m_S=+1> tensor any nuclear state occupies the first 27 basis vectors
    psi = np.zeros(81)
    psi[:27] = np.random.default_rng(1).normal(size=27)
    assert np.allclose(sz @ psi, psi)


def test_embed_identity():
    assert embed(Operator.identity(3), 2, VB).allclose(Operator.identity(81))


def test_embed_trace_factorizes(rng):
    a = random_hermitian(3, rng)
    assert np.isclose(embed(a, 1, VB).trace(), a.trace() * 27, atol=1e-10)


def test_embed_dimension_mismatch():
    with pytest.raises(DimensionError):
        embed(Operator.identity(2), 0, VB)


def test_embedded_slots_commute(rng):
    a, b = random_hermitian(3, rng), random_hermitian(3, rng)
    ea, eb = embed(a, 0, VB), embed(b, 2, VB)
    assert np.max(np.abs(ea.commutator(eb).entries)) < 1e-12


def test_expm_zero_is_identity():
    assert expm_hermitian(Operator.zeros(3), 123.4).allclose(Operator.identity(3))


def test_expm_pi_pulse():
    om = 2 * np.pi * 67e6
    U = expm_hermitian(pauli()["y"] * (om / 2), np.pi / om).entries
    out = U @ np.array([1, 0])
    assert np.isclose(abs(out[1]), 1.0, atol=1e-12)


def test_expm_matches_series_oracle(rng):
    H = random_hermitian(3, rng)
    U = expm_hermitian(H, 0.7).entries
    assert np.max(np.abs(U - expm_series(-0.7j * H.entries))) < 1e-9


def test_expm_rejects_non_hermitian():
    with pytest.raises(NotHermitianError):
        expm_hermitian(Operator(np.array([[0, 1], [0, 0]])), 1.0)


@pytest.mark.parametrize("dim", [2, 3, 81])
def test_expm_unitary_random(dim):
    rng = np.random.default_rng(dim)
    n = 1000 if dim < 81 else 100
    worst = 0.0
    for _ in range(n):
        U = expm_hermitian(random_hermitian(dim, rng, scale=rng.uniform(0.1, 50)), rng.uniform(0, 3)).entries
        worst = max(worst, np.max(np.abs(U @ U.conj().T - np.eye(dim))))
    assert worst < 1e-10


def test_evolve_pi_pulse_flips():
    U = expm_hermitian(pauli()["y"] * 0.5, np.pi)
    rho = evolve(DensityMatrix.basis(2, 0), U)
    assert np.isclose(rho.population(1), 1.0, atol=1e-12)


def test_evolve_identity(rng):
    rho = random_density(3, rng)
    assert np.allclose(evolve(rho, Operator.identity(3)).entries, rho.entries, atol=1e-15)


def test_evolve_preserves_spectrum(rng):
    rho = random_density(9, rng)
    U = expm_hermitian(random_hermitian(9, rng), 1.3)
    before = np.linalg.eigvalsh(rho.entries)
    after = np.linalg.eigvalsh(evolve(rho, U).entries)
    assert np.allclose(before, after, atol=1e-10)


def test_evolve_dimension_mismatch():
    with pytest.raises(DimensionError):
        evolve(DensityMatrix.basis(2, 0), Operator.identity(3))


def test_density_matrix_invariants_enforced():
    with pytest.raises(ValueError):
        DensityMatrix(Operator(np.diag([0.5, 0.6])))
    with pytest.raises(ValueError):
        DensityMatrix(Operator(np.diag([1.5, -0.5])))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([2, 3, 9, 27]), st.floats(0.0, 5.0))
def test_evolve_properties(seed, dim, t):
    rng = np.random.default_rng(seed)
    rho = random_density(dim, rng)
    U = expm_hermitian(random_hermitian(dim, rng, scale=3.0), t)
    out = evolve(rho, U).entries
    assert abs(np.trace(out) - 1) < 1e-12
    assert np.max(np.abs(out - out.conj().T)) < 1e-12
    assert np.min(np.linalg.eigvalsh(out)) > -1e-9

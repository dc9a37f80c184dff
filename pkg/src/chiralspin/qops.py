"""Operator and state algebra for N spin-1/2 systems.

Basis convention (frozen): spin 1 is the most significant bit of a basis
index, ``|g> = 0`` and ``|e> = 1``.  So for two spins the computational basis
is ``|gg>, |ge>, |eg>, |ee>``.

Operators are returned as ``scipy.sparse`` CSR matrices, states as 1-d complex
arrays and density matrices as dense 2-d complex arrays.
"""

import warnings

import numpy as np
import scipy.sparse as sp

# single-site matrices in the (g, e) basis
SIGMA = np.array([[0, 1], [0, 0]], dtype=complex)  # |g><e|
SIGMA_DAG = SIGMA.conj().T
SIGMA_X = SIGMA + SIGMA_DAG
SIGMA_Y = 1j * (SIGMA - SIGMA_DAG)
SIGMA_Z = np.diag([-1.0, 1.0]).astype(complex)  # sigma^dag sigma - sigma sigma^dag
IDENTITY = np.eye(2, dtype=complex)
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)

GROUND = np.array([1, 0], dtype=complex)
EXCITED = np.array([0, 1], dtype=complex)


class PositivityError(ValueError):
    """A density matrix has an eigenvalue below the allowed drift."""


def _check_n(n_spins):
    if int(n_spins) != n_spins or n_spins < 1:
        raise ValueError(f"n_spins must be a positive integer, got {n_spins!r}")
    return int(n_spins)


def n_spins_of(dim):
    """Number of spins for a Hilbert-space dimension (must be a power of two)."""
    n = int(dim).bit_length() - 1
    if dim < 2 or (1 << n) != dim:
        raise ValueError(f"dimension {dim} is not a power of two >= 2")
    return n


def embed(site_op, site, n_spins):
    """Embed a 2x2 operator acting on ``site`` (1-based) into N spins."""
    n_spins = _check_n(n_spins)
    if not 1 <= site <= n_spins:
        raise ValueError(f"site {site} out of range 1..{n_spins}")
    op = sp.csr_matrix(np.asarray(site_op, dtype=complex))
    left = sp.identity(2 ** (site - 1), dtype=complex, format="csr")
    right = sp.identity(2 ** (n_spins - site), dtype=complex, format="csr")
    return sp.kron(sp.kron(left, op, format="csr"), right, format="csr")


def lowering(site, n_spins):
    return embed(SIGMA, site, n_spins)


def raising(site, n_spins):
    return embed(SIGMA_DAG, site, n_spins)


def number(site, n_spins):
    return embed(SIGMA_DAG @ SIGMA, site, n_spins)


def collective_lowering(n_spins):
    """c = sum_j sigma_j."""
    n_spins = _check_n(n_spins)
    return sum(lowering(j, n_spins) for j in range(1, n_spins + 1)).tocsr()


def total_jz(n_spins):
    """J^z = sum_j sigma^z_j, eigenvalues -N, -N+2, ..., N."""
    n_spins = _check_n(n_spins)
    return sum(embed(SIGMA_Z, j, n_spins) for j in range(1, n_spins + 1)).tocsr()


def kron_states(*states):
    """Tensor product of state vectors, first argument = most significant."""
    out = np.array([1.0 + 0j])
    for s in states:
        out = np.kron(out, np.asarray(s, dtype=complex))
    return out


def basis_state(bits):
    """Product state from a string/sequence of 'g'/'e' (or 0/1) labels."""
    vecs = []
    for b in bits:
        if b in ("g", 0, "0"):
            vecs.append(GROUND)
        elif b in ("e", 1, "1"):
            vecs.append(EXCITED)
        else:
            raise ValueError(f"bad spin label {b!r}")
    return kron_states(*vecs)


def ground_state(n_spins):
    psi = np.zeros(2 ** _check_n(n_spins), dtype=complex)
    psi[0] = 1.0
    return psi


def singlet():
    """(|ge> - |eg>)/sqrt(2)."""
    return (basis_state("ge") - basis_state("eg")) / np.sqrt(2)


def triplet():
    """(|ge> + |eg>)/sqrt(2)."""
    return (basis_state("ge") + basis_state("eg")) / np.sqrt(2)


def dm(psi):
    """|psi><psi|."""
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def maximally_mixed(n_spins):
    d = 2 ** _check_n(n_spins)
    return np.eye(d, dtype=complex) / d


def as_state(psi, tol=1e-10):
    """Validate a pure state vector (power-of-two length, unit norm)."""
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1:
        raise ValueError("a pure state must be a 1-d array")
    n_spins_of(psi.size)
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > tol:
        raise ValueError(f"state is not normalized (norm={norm:.3e})")
    return psi


def as_density(rho, tol=1e-10, eig_tol=1e-8):
    """Validate a density matrix: Hermitian, unit trace, positive."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("a density matrix must be square")
    n_spins_of(rho.shape[0])
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > tol:
        raise ValueError(f"density matrix is not Hermitian (residual {herm:.2e})")
    tr = np.trace(rho)
    if abs(tr - 1.0) > tol:
        raise ValueError(f"density matrix trace is {tr.real:.12f}, expected 1")
    lam = np.linalg.eigvalsh(rho).min()
    if lam < -eig_tol:
        raise PositivityError(f"density matrix has eigenvalue {lam:.3e}")
    return rho


def density_diagnostics(rho):
    """Hermiticity residual, trace residual and smallest eigenvalue."""
    rho = np.asarray(rho)
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    tr = float(abs(np.trace(rho) - 1.0))
    lam = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
    return herm, tr, lam


def _sites_to_axes(keep, n_spins):
    keep = list(keep)
    if not keep:
        raise ValueError("keep list is empty")
    if len(set(keep)) != len(keep):
        raise ValueError(f"duplicate sites in keep list {keep}")
    for s in keep:
        if not 1 <= s <= n_spins:
            raise ValueError(f"site {s} out of range 1..{n_spins}")
    return [s - 1 for s in keep]


def partial_trace(rho, keep):
    """Reduced density matrix of the sites in ``keep`` (1-based, ordered).

    The kept sites appear in the output in the order given.
    """
    rho = np.asarray(rho, dtype=complex)
    n = n_spins_of(rho.shape[0])
    axes = _sites_to_axes(keep, n)
    drop = [a for a in range(n) if a not in axes]
    t = rho.reshape((2,) * (2 * n))
    # bring kept row axes then kept column axes to front, traced pairs last
    order = axes + [n + a for a in axes] + drop + [n + a for a in drop]
    t = t.transpose(order)
    k = len(axes)
    t = t.reshape(2**k, 2**k, 2 ** len(drop), 2 ** len(drop))
    return np.einsum("abii->ab", t)


def reduced_from_state(psi, keep):
    """Reduced density matrix of ``keep`` directly from a pure state."""
    psi = np.asarray(psi, dtype=complex)
    n = n_spins_of(psi.size)
    axes = _sites_to_axes(keep, n)
    drop = [a for a in range(n) if a not in axes]
    m = psi.reshape((2,) * n).transpose(axes + drop).reshape(2 ** len(axes), -1)
    return m @ m.conj().T


def apply_site(psi, site_op, site):
    """Apply a 2x2 operator on ``site`` to a state vector without building 2^N matrices."""
    psi = np.asarray(psi, dtype=complex)
    n = n_spins_of(psi.size)
    if not 1 <= site <= n:
        raise ValueError(f"site {site} out of range 1..{n}")
    t = psi.reshape(2 ** (site - 1), 2, 2 ** (n - site))
    return np.einsum("ab,ibj->iaj", site_op, t).reshape(-1)


def purity(rho):
    """Tr(rho^2)."""
    rho = np.asarray(rho)
    # Tr(rho rho) = sum_ij rho_ij rho_ji = sum |rho_ij|^2 for Hermitian rho
    return float(np.real(np.vdot(rho.conj().T, rho)))


def entropy(rho, clip=1e-12):
    """Von Neumann entropy in nats.

    Eigenvalues in ``[-clip, 1e-14)`` count as zero; anything more negative
    is a positivity violation.
    """
    p = np.linalg.eigvalsh(0.5 * (np.asarray(rho) + np.asarray(rho).conj().T))
    if p.min() < -clip:
        raise PositivityError(f"eigenvalue {p.min():.3e} below -{clip:g}")
    p = p[p > 1e-14]
    return float(max(0.0, -np.sum(p * np.log(p))))


def expectation(op, state, hermitian=False):
    """Tr(A rho) for a density matrix or <psi|A|psi> for a state vector.

    With ``hermitian=True`` the real part is returned and a warning is
    issued if the imaginary residual exceeds 1e-9.
    """
    state = np.asarray(state)
    dim = op.shape[0]
    if state.shape[0] != dim:
        raise ValueError(f"dimension mismatch: operator {dim}, state {state.shape[0]}")
    if state.ndim == 1:
        val = np.vdot(state, op @ state)
    else:
        if state.shape != (dim, dim):
            raise ValueError("dimension mismatch")
        val = (op @ state).trace() if sp.issparse(op) else np.trace(op @ state)
        val = complex(val)
    if hermitian:
        if abs(val.imag) > 1e-9:
            warnings.warn(f"expectation of Hermitian operator has imaginary part {val.imag:.2e}")
        return float(val.real)
    return complex(val)


def fidelity_pure(psi, rho):
    """<psi|rho|psi> for a pure reference state."""
    psi = np.asarray(psi, dtype=complex)
    rho = np.asarray(rho)
    if rho.shape != (psi.size, psi.size):
        raise ValueError(f"dimension mismatch: state {psi.size}, rho {rho.shape}")
    return float(min(1.0, max(0.0, np.real(np.vdot(psi, rho @ psi)))))


def trace_distance(rho, sigma):
    """(1/2) ||rho - sigma||_1."""
    d = np.asarray(rho) - np.asarray(sigma)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


def schmidt_coefficients(psi, cut):
    """Schmidt coefficients of ``psi`` across the cut after the first ``cut`` spins."""
    psi = np.asarray(psi, dtype=complex)
    n = n_spins_of(psi.size)
    if not 1 <= cut < n:
        raise ValueError(f"cut {cut} out of range 1..{n - 1}")
    return np.linalg.svd(psi.reshape(2**cut, -1), compute_uv=False)


def permutation_operator(perm):
    """Unitary that moves spin ``i`` to position ``perm[i-1]`` (both 1-based).

    ``P @ kron(a_1, ..., a_N) == kron(b_1, ..., b_N)`` with ``b_{perm[i]} = a_i``.
    """
    perm = [p - 1 for p in perm]
    n = len(perm)
    if sorted(perm) != list(range(n)):
        raise ValueError(f"not a permutation: {perm}")
    dim = 2**n
    idx = np.arange(dim)
    out = np.zeros(dim, dtype=np.int64)
    for i, p in enumerate(perm):
        bit = (idx >> (n - 1 - i)) & 1
        out |= bit << (n - 1 - p)
    return sp.csr_matrix((np.ones(dim, dtype=complex), (out, idx)), shape=(dim, dim))


def random_density(n_spins, rng, rank=None):
    """Random density matrix (Ginibre construction)."""
    d = 2 ** _check_n(n_spins)
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def random_state(n_spins, rng):
    d = 2 ** _check_n(n_spins)
    psi = rng.normal(size=d) + 1j * rng.normal(size=d)
    return psi / np.linalg.norm(psi)


def random_unitary(dim, rng):
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))

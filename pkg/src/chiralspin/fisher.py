"""Fisher information, k-producibility bounds and optimal local generators.

Generators are linear, G = (1/2) sum_j n_j . sigma_j with unit vectors n_j.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from . import qops

P_FLOOR = 1e-14
DP2_FLOOR = 1e-20
WITNESS_SLACK = 1e-9


@dataclass(frozen=True)
class GeneratorSpec:
    directions: np.ndarray

    def __post_init__(self):
        d = np.array(self.directions, dtype=float).reshape(-1, 3)
        norms = np.linalg.norm(d, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError(f"directions must be unit vectors (norms {norms})")
        d.setflags(write=False)
        object.__setattr__(self, "directions", d)

    @property
    def n_spins(self):
        return len(self.directions)

    @classmethod
    def uniform(cls, n_spins, axis=(1.0, 0.0, 0.0)):
        return cls(np.tile(np.asarray(axis, float), (n_spins, 1)))

    @classmethod
    def from_signs(cls, signs, axis=(1.0, 0.0, 0.0)):
        """Directions s_j * axis, e.g. signs (1, -1, -1, 1) along x."""
        axis = np.asarray(axis, float)
        return cls(np.array([s * axis for s in signs]))

    def operator(self):
        n = self.n_spins
        out = sp.csr_matrix((2**n, 2**n), dtype=complex)
        for j, vec in enumerate(self.directions, start=1):
            local = 0.5 * sum(c * p for c, p in zip(vec, qops.PAULI))
            out = out + qops.embed(local, j, n)
        return out.tocsr()


@dataclass(frozen=True)
class Povm:
    effects: tuple
    labels: tuple = ()

    def __post_init__(self):
        effects = tuple(sp.csr_matrix(e, dtype=complex) for e in self.effects)
        if not effects:
            raise ValueError("a POVM needs at least one effect")
        dim = effects[0].shape[0]
        total = sum(effects)
        err = abs(total - sp.identity(dim, format="csr")).max()
        if err > 1e-10:
            raise ValueError(f"POVM effects do not sum to the identity (error {err:.2e})")
        object.__setattr__(self, "effects", effects)


def staggered_probe(n_spins):
    """G = (1/2) sum_j (-1)^j sigma_j^x."""
    return GeneratorSpec.from_signs([(-1) ** j for j in range(1, n_spins + 1)])


def jz_measurement(n_spins):
    """Projectors onto the eigenspaces of J^z = sum_j sigma_j^z (grouped by eigenvalue)."""
    jz = qops.total_jz(n_spins).diagonal().real
    values = np.unique(np.round(jz).astype(int))
    dim = 2**n_spins
    effects = [sp.diags((np.round(jz) == v).astype(complex), format="csr", shape=(dim, dim))
               for v in values]
    return Povm(tuple(effects), tuple(int(v) for v in values))


def classical_fisher(rho, gen, povm):
    """Fisher information of the outcome distribution of ``povm`` at theta=0.

    rho(theta) = exp(-i theta G) rho exp(i theta G), so dP/dtheta = Tr(-i[G, rho] M).
    Outcomes with P below 1e-14 use the limit 4 Tr(M G rho G) of (dP)^2 / P.
    """
    rho = np.asarray(rho, dtype=complex)
    g = gen.operator()
    if g.shape != rho.shape:
        raise ValueError("generator and state dimensions differ")
    grho = g @ rho
    drho = -1j * (grho - grho.conj().T)
    grhog = (g @ grho.conj().T).conj().T  # G rho G for Hermitian rho
    total = 0.0
    for m in povm.effects:
        p = float(np.real(m.multiply(rho.T).sum()))
        dp = float(np.real(m.multiply(drho.T).sum()))
        if p >= P_FLOOR:
            total += dp * dp / p
        elif dp * dp < DP2_FLOOR:
            # second-order limit of (dP)^2 / P when the outcome is absent
            total += 4.0 * max(0.0, float(np.real(m.multiply(grhog.T).sum())))
    return total


def qfi_pure(psi, gen):
    """4 (<G^2> - <G>^2)."""
    psi = qops.as_state(psi)
    gpsi = gen.operator() @ psi
    mean = np.vdot(psi, gpsi).real
    return float(4.0 * (np.vdot(gpsi, gpsi).real - mean**2))


def qfi_mixed(rho, gen, cutoff=1e-12):
    """2 sum_{kl} (p_k - p_l)^2 / (p_k + p_l) |<k|G|l>|^2 over the spectrum of rho."""
    rho = np.asarray(rho, dtype=complex)
    p, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    p = np.clip(p, 0.0, None)
    g = v.conj().T @ (gen.operator() @ v)
    s = p[:, None] + p[None, :]
    d = (p[:, None] - p[None, :]) ** 2
    mask = s > cutoff
    return float(2.0 * np.sum(d[mask] / s[mask] * np.abs(g[mask]) ** 2))


def producibility_bound(k, n):
    """f(k, N) = m k^2 + (N - m k)^2 with m = floor(N / k)."""
    if int(k) != k or int(n) != n or not 1 <= k <= n:
        raise ValueError(f"need integers 1 <= k <= N, got k={k}, N={n}")
    m = n // k
    return float(m * k * k + (n - m * k) ** 2)


def witnessed_depth(value, n):
    """Largest k+1 with value > f(k, N); 1 when nothing is witnessed."""
    depth = 1
    for k in range(1, n):
        f = producibility_bound(k, n)
        if value > f + WITNESS_SLACK * max(1.0, f):
            depth = k + 1
    return depth


def correlation_matrix(psi):
    """Symmetrized covariance Gamma of all single-site Pauli operators (3N x 3N).

    Row/column index 3*(j-1) + a for site j and a in (x, y, z).
    """
    psi = qops.as_state(psi)
    n = qops.n_spins_of(psi.size)
    cols = [qops.apply_site(psi, p, j) for j in range(1, n + 1) for p in qops.PAULI]
    v = np.array(cols).T
    second = np.real(v.conj().T @ v)
    mean = np.real(psi.conj() @ v)
    gamma = 0.5 * (second + second.T) - np.outer(mean, mean)
    return gamma


def _sphere_max(a, v):
    """argmax of n.A.n + 2 n.v over |n| = 1 for symmetric 3x3 A."""
    lam, q = np.linalg.eigh(a)
    lam, q = lam[::-1], q[:, ::-1]  # descending
    w = q.T @ v
    wn = np.linalg.norm(w)
    scale = max(1.0, abs(lam[0]), wn)
    if wn <= 1e-15 * scale:
        return q[:, 0]
    top = lam[0]
    in_top = top - lam <= 1e-12 * scale
    if np.all(np.abs(w[in_top]) <= 1e-12 * scale):
        # possible hard case: the multiplier sits at the top eigenvalue
        y = np.zeros(3)
        y[~in_top] = w[~in_top] / (top - lam[~in_top])
        r2 = float(y @ y)
        if r2 <= 1.0:
            y[np.argmax(in_top)] = np.sqrt(1.0 - r2)
            return q @ y
    live = np.abs(w) > 0

    def secular(mu):
        return np.sum((w[live] / (mu - lam[live])) ** 2) - 1.0

    lo = top + 1e-15 * scale
    if secular(lo) <= 0:
        lo = np.nextafter(top, np.inf)
    hi = top + wn
    if secular(hi) > 0:
        hi = top + 2 * wn
    mu = brentq(secular, lo, hi, xtol=1e-15 * scale, rtol=1e-15, maxiter=500)
    y = np.where(live, w / np.where(live, mu - lam, 1.0), 0.0)
    y = y / np.linalg.norm(y)
    return q @ y


def _quad(gamma, n):
    x = n.reshape(-1)
    return float(x @ gamma @ x)


def _ascent(gamma, n0, tol=1e-10, max_sweeps=10_000):
    n = n0.copy()
    nsp = n.shape[0]
    value = _quad(gamma, n)
    for _ in range(max_sweeps):
        for i in range(nsp):
            blk = slice(3 * i, 3 * i + 3)
            a = gamma[blk, blk]
            v = gamma[blk] @ n.reshape(-1) - a @ n[i]
            n[i] = _sphere_max(a, v)
        new = _quad(gamma, n)
        if abs(new - value) <= tol * max(1.0, abs(new)):
            value = new
            break
        value = new
    return value, n


@dataclass
class FisherResult:
    value: float
    generator: GeneratorSpec
    bound_table: dict = field(repr=False)
    witnessed_depth: int = 1
    upper_bound: float = np.inf
    restart_values: tuple = field(default=(), repr=False)


def optimize_generator(psi, restarts=32, seed=0, workers=None, tol=1e-10):
    """Maximize F_Q = n.Gamma.n over unit directions by exact block ascent.

    Each restart starts from random directions drawn from its own stream
    (``SeedSequence(seed).spawn``); the best value wins, ties going to the
    lowest restart index.  ``upper_bound`` is N * lambda_max(Gamma).
    """
    psi = qops.as_state(psi)
    gamma = correlation_matrix(psi)
    n = gamma.shape[0] // 3
    streams = np.random.SeedSequence(seed).spawn(max(1, int(restarts)))

    def one(ss):
        rng = np.random.default_rng(ss)
        n0 = rng.normal(size=(n, 3))
        n0 /= np.linalg.norm(n0, axis=1, keepdims=True)
        return _ascent(gamma, n0, tol)

    if workers is None:
        workers = int(os.environ.get("CHIRALSPIN_THREADS", "1") or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, streams))
    else:
        results = [one(ss) for ss in streams]
    values = [r[0] for r in results]
    best = int(np.argmax(values))  # first maximal index
    value, dirs = results[best]
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    table = {k: producibility_bound(k, n) for k in range(1, n + 1)}
    bound = float(n * np.linalg.eigvalsh(gamma)[-1])
    return FisherResult(value, GeneratorSpec(dirs), table, witnessed_depth(value, n),
                        bound, tuple(values))

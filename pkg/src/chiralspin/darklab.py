"""Analytic dark states of commensurate chiral networks and their certification.

All constructions assume the commensurate setting in which every guide emits
through the single collective operator ``c = sum_j sigma_j``.  Dark states
then live in the span of products of singlets ``|S>_{jl}`` and ground states.
Sites are 1-based throughout.
"""

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import qops

DARK_TOL = 1e-9
CANCEL_TOL = 1e-12
NULL_TOL = 1e-10


class NotDarkError(ValueError):
    """Parameters admit no pure dark state of the requested form."""


class UndefinedFractionError(ValueError):
    pass


class NonUniqueSteadyStateError(ValueError):
    pass


class NoEntanglingSwapError(ValueError):
    pass


@dataclass(frozen=True)
class DetuningPattern:
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]


def _values(pattern):
    return tuple(float(v) for v in pattern)


def _cancel(a, b):
    return abs(a + b) < CANCEL_TOL * max(1.0, abs(a))


# ---------------------------------------------------------------- dimers

def dimer_state(alpha):
    """(|gg> + alpha |S>) / sqrt(1 + |alpha|^2)."""
    alpha = complex(alpha)
    psi = qops.basis_state("gg") + alpha * qops.singlet()
    return psi / np.sqrt(1.0 + abs(alpha) ** 2)


def singlet_fraction(omega, delta, dgamma):
    """-2 sqrt(2) Omega / (2 delta + i dgamma)."""
    den = 2.0 * delta + 1j * dgamma
    if den == 0:
        raise UndefinedFractionError("delta = dgamma = 0: the dark state is not unique")
    return -2.0 * np.sqrt(2.0) * omega / den


def gamma_eff(omega, delta, gamma_L, gamma_R):
    """Rate at which a driven pair is pumped into its dark state."""
    if gamma_L < 0 or gamma_R < 0:
        raise ValueError("rates must be >= 0")
    q = 0.25 * (gamma_R - gamma_L) ** 2 + delta**2
    den = q + 2.0 * abs(omega) ** 2
    if den == 0:
        return 0.0
    return 2.0 * (gamma_L + gamma_R) * q / den


# ---------------------------------------------------------------- helpers

def singlet_product(pairs, n_spins):
    """Product of singlets on the given (j, l) pairs, ground state elsewhere."""
    psi = qops.ground_state(n_spins)
    for j, l in pairs:
        if j == l:
            raise ValueError("singlet needs two distinct sites")
        a, b = min(j, l), max(j, l)
        # |S>_{ab} = (sigma_a^dag - sigma_b^dag)/sqrt(2) acting on |g_a g_b>, with a < b
        psi = (qops.raising(b, n_spins) @ psi - qops.raising(a, n_spins) @ psi) / np.sqrt(2)
    return psi


def place_clusters(cluster_states, n_spins):
    """Tensor cluster states (sites, vector) into the N-spin register."""
    order = [s for sites, _ in cluster_states for s in sites]
    if sorted(order) != list(range(1, n_spins + 1)):
        raise ValueError(f"clusters {order} do not cover 1..{n_spins} exactly once")
    psi = qops.kron_states(*[np.asarray(v, dtype=complex) for _, v in cluster_states])
    return qops.permutation_operator(order) @ psi


def matchings(sites, n_pairs):
    """All sets of ``n_pairs`` disjoint pairs drawn from ``sites`` (canonical order)."""
    sites = sorted(sites)
    out = []

    def rec(avail, chosen, k):
        if k == 0:
            out.append(tuple(chosen))
            return
        for i, a in enumerate(avail):
            for b in avail[i + 1:]:
                if chosen and (a, b) <= chosen[-1]:
                    continue
                rest = [x for x in avail if x not in (a, b)]
                rec(rest, chosen + [(a, b)], k - 1)

    rec(sites, [], n_pairs)
    return out


def factorize_clusters(psi, tol=1e-10):
    """Finest partition of the spins into clusters carrying pure reduced states."""
    psi = qops.as_state(psi)
    n = qops.n_spins_of(psi.size)
    remaining = list(range(1, n + 1))
    parts = []
    while remaining:
        first, others = remaining[0], remaining[1:]
        found = None
        for size in range(0, len(others) + 1):
            for extra in itertools.combinations(others, size):
                sites = [first, *extra]
                if len(sites) == len(remaining):
                    found = sites
                    break
                red = qops.reduced_from_state(psi, sites)
                if abs(1.0 - qops.purity(red)) < tol:
                    found = sites
                    break
            if found:
                break
        parts.append(tuple(found))
        remaining = [s for s in remaining if s not in found]
    return tuple(parts)


def cluster_amplitudes(psi, sites, n_spins):
    """Minimum-norm singlet-product coefficients a^(m) of a cluster state.

    Keys are flattened pair tuples, e.g. ``()`` for the ground state,
    ``(1, 2)`` and ``(1, 3, 2, 4)`` for |S>_13 |S>_24.  The singlet products
    of four or more spins are linearly dependent, so the expansion is not
    unique; least squares picks the shortest coefficient vector.
    """
    local = list(range(1, len(sites) + 1))
    keys, cols = [], []
    for k in range(len(sites) // 2 + 1):
        for mt in matchings(local, k):
            keys.append(tuple(sites[x - 1] for pair in mt for x in pair))
            cols.append(singlet_product(mt, len(sites)))
    basis = np.array(cols).T
    coef, *_ = np.linalg.lstsq(basis, psi, rcond=None)
    return dict(zip(keys, coef))


@dataclass
class MultimerState:
    partition: tuple
    amplitudes: dict = field(repr=False)
    realized: np.ndarray = field(repr=False)
    pattern: Optional[tuple] = None

    def __post_init__(self):
        self.partition = tuple(tuple(int(s) for s in c) for c in self.partition)
        flat = [s for c in self.partition for s in c]
        n = qops.n_spins_of(len(self.realized))
        if sorted(flat) != list(range(1, n + 1)):
            raise ValueError("clusters must be disjoint and cover all spins")
        if any(len(c) % 2 for c in self.partition):
            raise ValueError("every cluster must have an even number of spins")
        self.realized = qops.as_state(self.realized)
        resid = np.linalg.norm(qops.collective_lowering(n) @ self.realized)
        if resid > NULL_TOL:
            raise NotDarkError(f"state is not annihilated by sum_j sigma_j (residual {resid:.2e})")

    @property
    def n_spins(self):
        return qops.n_spins_of(len(self.realized))

    @classmethod
    def from_state(cls, psi, pattern=None, tol=1e-10):
        psi = qops.as_state(psi)
        n = qops.n_spins_of(psi.size)
        parts = factorize_clusters(psi, tol)
        amps = {}
        for c in parts:
            red = qops.reduced_from_state(psi, c)
            w, v = np.linalg.eigh(red)
            vec = v[:, -1]
            # fix the gauge so the all-ground amplitude is real positive
            if abs(vec[0]) > 1e-12:
                vec = vec * abs(vec[0]) / vec[0]
            amps[c] = cluster_amplitudes(vec, list(c), n)
        return cls(parts, amps, psi, None if pattern is None else _values(pattern))


# ---------------------------------------------------------------- dimerized chains

def dimerized_state(pattern, omega, dgamma):
    """Product of dimers |D(alpha_{2j-1})> on the pairs (2j-1, 2j)."""
    d = _values(pattern)
    n = len(d)
    if n % 2:
        raise NotDarkError("dimerized states need an even number of spins")
    for j in range(0, n, 2):
        if not _cancel(d[j], d[j + 1]):
            raise NotDarkError(f"pattern is not staggered at spins {j + 1},{j + 2}")
    clusters = []
    for j in range(0, n, 2):
        alpha = singlet_fraction(omega, d[j], dgamma)
        clusters.append(((j + 1, j + 2), dimer_state(alpha)))
    psi = place_clusters(clusters, n)
    amps = {sites: {(): v[0], sites: v[1] * np.sqrt(2.0)}
            for sites, v in clusters}
    return MultimerState(tuple(s for s, _ in clusters), amps, psi, d)


# ---------------------------------------------------------------- tetramers

def tetramer_conditions(deltas):
    """Which of the pairings (12)(34), (13)(24), (14)(23) cancel the detunings."""
    d1, d2, d3, d4 = _values(deltas)
    return {
        "I": _cancel(d1, d2) and _cancel(d3, d4),
        "II": _cancel(d1, d3) and _cancel(d2, d4),
        "III": _cancel(d1, d4) and _cancel(d2, d3),
    }


def tetramer_coefficients(deltas, omega, dgamma):
    """Closed-form coefficients (a12, a34, a13, a1324, a1234) of the N=4 dark state."""
    d1, d2, d3, d4 = _values(deltas)
    if dgamma == 0:
        raise NotDarkError("the closed form needs dgamma != 0")
    cond = tetramer_conditions(deltas)
    if not any(cond.values()):
        raise NotDarkError(f"detunings {deltas} satisfy none of the pairing conditions")
    om = omega
    Q = -0.5j * dgamma
    r2 = np.sqrt(2.0)
    a12 = om * (2 * Q**2 + 2 * d3 * d4 + (Q + d1) * (d3 + d4)) / (r2 * (Q - d1) * (Q + d3) * (Q + d4))
    a34 = om * (2 * Q + d3 - d4) / (r2 * (Q + d3) * (Q + d4))
    a13 = om * (d3 + d4) / (2 * r2 * (Q + d3) * (Q + d4))
    a1324 = 2 * r2 * om * a13 / (2 * Q - d1 - d2)
    if cond["I"] or cond["II"]:
        a1234 = om**2 * (d1 + d2 - 4 * Q) / ((Q - d1) * (Q + d4) * (d1 + d2 - 2 * Q))
    else:
        a1234 = r2 * om * (4 * Q + d3 + d4) * a34 / ((2 * Q + d3 + d4) * (2 * Q - d3 + d4))
    return {"a12": a12, "a34": a34, "a13": a13, "a1324": a1324, "a1234": a1234}


def tetramer_state(deltas, omega, dgamma):
    """Normalized four-spin dark state assembled from the closed-form coefficients."""
    if dgamma <= 0:
        raise NotDarkError("tetramer construction needs dgamma > 0")
    a = tetramer_coefficients(deltas, omega, dgamma)
    sp_ = lambda *pairs: singlet_product(pairs, 4)
    psi = (qops.ground_state(4)
           + a["a12"] * sp_((1, 2)) + a["a34"] * sp_((3, 4))
           + a["a13"] * (sp_((1, 3)) + sp_((1, 4)) + sp_((2, 3)) + sp_((2, 4)))
           + a["a1234"] * sp_((1, 2), (3, 4))
           + a["a1324"] * (sp_((1, 3), (2, 4)) + sp_((1, 4), (2, 3))))
    return psi / np.linalg.norm(psi)


# ---------------------------------------------------------------- swaps

_SWAP4 = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)


def swap_unitary(theta, site, n_spins):
    """exp(i theta/2 sigma_j . sigma_{j+1}) on sites (site, site+1).

    Uses sigma.sigma = 2 SWAP - 1, so U = e^{-i theta/2}(cos theta + i sin theta SWAP).
    """
    if not 1 <= site < n_spins:
        raise ValueError(f"site {site} out of range 1..{n_spins - 1}")
    local = np.exp(-0.5j * theta) * (np.cos(theta) * np.eye(4) + 1j * np.sin(theta) * _SWAP4)
    left = sp.identity(2 ** (site - 1), dtype=complex, format="csr")
    right = sp.identity(2 ** (n_spins - site - 1), dtype=complex, format="csr")
    return sp.kron(sp.kron(left, sp.csr_matrix(local)), right, format="csr")


def theta_for_swap(delta_j, delta_j1, dgamma):
    """Angle whose swap unitary exchanges the detunings of spins j and j+1."""
    if dgamma == 0:
        raise NoEntanglingSwapError("dgamma = 0: the exchange unitary does not entangle")
    return float(np.arctan((delta_j1 - delta_j) / dgamma))


def apply_swap(psi, delta, site, dgamma):
    """Exchange the detunings at (site, site+1) and map the dark state along.

    With theta evaluated on the pattern before the exchange, the dark state
    of the exchanged pattern is U(theta)^dag psi.  Returns the new state and
    the new pattern.
    """
    delta = list(delta)
    theta = theta_for_swap(delta[site - 1], delta[site], dgamma)
    n = len(delta)
    psi = swap_unitary(-theta, site, n) @ psi
    delta[site - 1], delta[site] = delta[site], delta[site - 1]
    return psi, tuple(delta)


def adjacent_transpositions(perm):
    """Bubble-sort decomposition (left-to-right passes) of a 1-based permutation.

    ``perm[k-1]`` is the new position of the entry at position ``k``.  Returns
    the sites ``j`` of the adjacent exchanges (j, j+1), in application order.
    """
    perm = [int(p) for p in perm]
    n = len(perm)
    if sorted(perm) != list(range(1, n + 1)):
        raise ValueError(f"not a permutation of 1..{n}: {perm}")
    arr = list(perm)  # arr[i] = target position of the item currently at i+1
    out = []
    changed = True
    while changed:
        changed = False
        for i in range(n - 1):
            if arr[i] > arr[i + 1]:
                arr[i], arr[i + 1] = arr[i + 1], arr[i]
                out.append(i + 1)
                changed = True
    return out


def multimer_from_permutation(perm, staggered, omega, dgamma):
    """Dark state of the permuted pattern delta'_{p(k)} = delta_k, built by swaps.

    Starts from the dimerized state of the staggered pattern and applies the
    exchange unitaries of the bubble decomposition of ``perm``, each angle
    evaluated on the intermediate pattern.
    """
    d = _values(staggered)
    if len(perm) != len(d):
        raise ValueError("permutation length differs from the pattern length")
    if dgamma <= 0:
        raise NotDarkError("permutation construction needs dgamma > 0")
    psi = dimerized_state(d, omega, dgamma).realized
    pattern = d
    for site in adjacent_transpositions(perm):
        psi, pattern = apply_swap(psi, pattern, site, dgamma)
    return MultimerState.from_state(psi, pattern)


def permuted_pattern(perm, staggered):
    d = _values(staggered)
    out = [0.0] * len(d)
    for k, p in enumerate(perm):
        out[int(p) - 1] = d[k]
    return tuple(out)


def predicted_dark_state(pattern, omega, dgamma):
    """Dark state of any pattern whose detunings cancel in pairs (chiral guide).

    The first pairing found fixes a staggered reference (each pair adjacent)
    and the permutation carrying it onto ``pattern``.
    """
    d = _values(pattern)
    cls = classify_pattern(d, max_pairings=1)
    if not cls.pairable:
        raise NotDarkError(f"detunings {d} do not cancel in pairs")
    staggered, perm = [], []
    for p, q in cls.pairings[0]:
        staggered += [d[p - 1], d[q - 1]]
        perm += [p, q]
    return multimer_from_permutation(perm, staggered, omega, dgamma)


# ---------------------------------------------------------------- two guides

@dataclass(frozen=True)
class Reduction:
    theta: float
    epsilon: float
    mapped: tuple  # new (delta_j, delta_{j+1})


def two_waveguide_reduction(dgamma1, dgamma2, delta_j, delta_j1, branch=+1):
    """Angle, splitting and mapped detunings for a pair swapped between two guides.

    ``dgamma1`` belongs to the guide in which spin j precedes spin j+1.
    ``branch`` selects the sign of the square root (+1 by default), giving
    |theta| < pi/2 from the principal arctan.
    """
    if dgamma1 <= 0 or dgamma2 <= 0:
        raise ValueError("both decay asymmetries must be > 0")
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    d = delta_j - delta_j1
    tan = (d + branch * np.sqrt(d * d + 4 * dgamma1 * dgamma2)) / (2 * dgamma1)
    theta = float(np.arctan(tan))
    eps = (dgamma1 + dgamma2) * np.sin(2 * theta) + d * np.cos(2 * theta)
    mean = 0.5 * (delta_j + delta_j1)
    return Reduction(theta, float(eps), (mean + 0.5 * eps, mean - 0.5 * eps))


def swapped_pair(order_a, order_b):
    """The neighbouring pair (j, j+1) whose relative order differs between two orders."""
    pa = {s: i for i, s in enumerate(order_a)}
    pb = {s: i for i, s in enumerate(order_b)}
    n = len(order_a)
    bad = [(j, l) for j in range(1, n + 1) for l in range(j + 1, n + 1)
           if (pa[j] < pa[l]) != (pb[j] < pb[l])]
    if len(bad) != 1 or bad[0][1] != bad[0][0] + 1:
        raise NotDarkError(f"orders differ by more than one neighbouring exchange: {bad}")
    return bad[0][0]


def reduce_network(spec, branch=+1):
    """Map a commensurate two-guide network onto a single guide.

    The first guide visits the spins as 1..N.  The second runs the opposite
    way: read backwards it visits them in the same order except for one
    exchanged neighbouring pair (j, j+1); e.g. (4, 2, 3, 1) for N=4, j=2.
    Both asymmetries are taken along each guide's own direction.  Returns
    ``(single_spec, unitary, reduction)`` with the two-guide steady state
    equal to ``unitary @ rho_single @ unitary^dag``; the single guide carries
    the rates of both guides counted along the first guide's direction.
    """
    from .netmodel import NetworkSpec, DriveSpec, WaveguideSpec

    n = spec.n_spins
    if len(spec.waveguides) != 2:
        raise ValueError("reduction is defined for exactly two waveguides")
    g1, g2 = spec.waveguides
    for g in (g1, g2):
        if not g.is_commensurate(n):
            raise NotDarkError("reduction needs commensurate guides")
    o1 = g1.resolved(n)[0]
    o2 = g2.resolved(n)[0]
    if o1 != tuple(range(1, n + 1)):
        raise ValueError("the first guide must visit the spins in order 1..N")
    j = swapped_pair(o1, tuple(reversed(o2)))
    det = list(spec.drive.detuning)
    red = two_waveguide_reduction(g1.dgamma, g2.dgamma, det[j - 1], det[j], branch)
    det[j - 1], det[j] = red.mapped
    single = NetworkSpec(
        n_spins=n,
        drive=DriveSpec(spec.drive.rabi, det, spec.drive.schedule),
        waveguides=(WaveguideSpec(g1.gamma_L + g2.gamma_R, g1.gamma_R + g2.gamma_L),),
        onsite_decay=spec.onsite_decay,
    )
    u = swap_unitary(red.theta, j, n)
    return single, u, red


# ---------------------------------------------------------------- classification

@dataclass(frozen=True)
class PatternClass:
    pairable: bool
    pairings: tuple
    conditions: Optional[dict] = None


def _perfect_pairings(d, limit):
    out = []

    def rec(avail, chosen):
        if len(out) >= limit:
            return
        if not avail:
            out.append(tuple(chosen))
            return
        a = avail[0]
        for b in avail[1:]:
            if _cancel(d[a - 1], d[b - 1]):
                rec([x for x in avail if x not in (a, b)], chosen + [(a, b)])

    rec(list(range(1, len(d) + 1)), [])
    return out


def classify_pattern(pattern, max_pairings=64):
    """Pairings of spins with opposite detunings; conditions (I)-(III) for N=4."""
    d = _values(pattern)
    if len(d) % 2:
        return PatternClass(False, (), None)
    pairings = _perfect_pairings(d, max_pairings)
    cond = tetramer_conditions(d) if len(d) == 4 else None
    return PatternClass(bool(pairings), tuple(pairings), cond)


@dataclass(frozen=True)
class BidirectionalPairing:
    pairs: tuple
    state: Optional[np.ndarray] = field(default=None, repr=False)


def bidirectional_pairing(pattern, omega=None):
    """Unique pairing of opposite detunings and, given Omega, the predicted dark state."""
    d = _values(pattern)
    if len(set(d)) != len(d) or any(v == 0 for v in d):
        raise NonUniqueSteadyStateError(
            "bidirectional dark states need distinct, nonzero detunings")
    cls = classify_pattern(d, max_pairings=2)
    if not cls.pairable:
        raise NotDarkError(f"detunings {d} do not cancel in pairs")
    pairs = cls.pairings[0]
    state = None
    if omega is not None:
        blocks = [((j, l), dimer_state(singlet_fraction(omega, d[j - 1], 0.0)))
                  for j, l in pairs]
        state = place_clusters(blocks, len(d))
    return BidirectionalPairing(pairs, state)


# ---------------------------------------------------------------- certificates

@dataclass(frozen=True)
class DarkCertificate:
    jump_residuals: tuple
    hamiltonian_residual: float
    verdict: bool
    energy: float = 0.0


def verify_dark(psi, model, tol=DARK_TOL):
    """Residuals ||op psi|| per jump channel and ||(H - <H>) psi||."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (model.dim,):
        raise ValueError(f"state dimension {psi.shape} does not match model dim {model.dim}")
    psi = psi / np.linalg.norm(psi)
    jumps = tuple(float(np.linalg.norm(ch.op @ psi)) for ch in model.jumps)
    h = model.hamiltonian if model.drive is None else model.hamiltonian + model.drive
    hpsi = h @ psi
    e = complex(np.vdot(psi, hpsi))
    hres = float(np.linalg.norm(hpsi - e * psi))
    verdict = all(r < tol for r in jumps) and hres < tol
    return DarkCertificate(jumps, hres, verdict, e.real)

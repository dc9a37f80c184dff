"""Declarative chiral spin networks and their Lindblad models.

Units: gamma_R of the first waveguide is 1; rates, Rabi frequencies,
detunings and times are all expressed in these units.  Spin positions enter
only through the ordering along each guide and the propagation phases
``k x_j mod 2pi``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import qops

PHASE_TOL = 1e-9


@dataclass(frozen=True)
class Schedule:
    """Time profile multiplying the drive: constant, or sin^2 ramp to 1 at ``t_ramp``."""

    kind: str = "constant"
    t_ramp: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "sin2"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "sin2" and not self.t_ramp > 0:
            raise ValueError("sin2 schedule needs t_ramp > 0")

    def __call__(self, t):
        if self.kind == "constant" or t >= self.t_ramp:
            return 1.0
        if t <= 0:
            return 0.0
        return float(np.sin(0.5 * np.pi * t / self.t_ramp) ** 2)


@dataclass(frozen=True)
class DriveSpec:
    rabi: tuple
    detuning: tuple
    schedule: Optional[Schedule] = None

    def __post_init__(self):
        object.__setattr__(self, "rabi", tuple(complex(x) for x in self.rabi))
        object.__setattr__(self, "detuning", tuple(float(x) for x in self.detuning))
        if len(self.rabi) != len(self.detuning):
            raise ValueError("rabi and detuning lengths differ")

    @classmethod
    def homogeneous(cls, n_spins, omega, detuning=None, schedule=None):
        det = [0.0] * n_spins if detuning is None else list(detuning)
        return cls(rabi=[omega] * n_spins, detuning=det, schedule=schedule)

    @property
    def offset(self):
        """Homogeneous detuning offset Delta = mean detuning (two spins: (d1+d2)/2)."""
        return float(np.mean(self.detuning))

    @property
    def rabi_imbalance(self):
        """Omega_1 - Omega_2 for a pair of spins."""
        return self.rabi[0] - self.rabi[1]


@dataclass(frozen=True)
class WaveguideSpec:
    gamma_L: float
    gamma_R: float
    order: Optional[tuple] = None
    phases: Optional[tuple] = None
    per_spin_rates: Optional[tuple] = None

    def __post_init__(self):
        if self.gamma_L < 0 or self.gamma_R < 0:
            raise ValueError("waveguide rates must be >= 0")
        if not self.gamma_L + self.gamma_R > 0:
            raise ValueError("gamma_L + gamma_R must be > 0")
        if self.order is not None:
            order = tuple(int(o) for o in self.order)
            if sorted(order) != list(range(1, len(order) + 1)):
                raise ValueError(f"order {order} is not a permutation of 1..N")
            object.__setattr__(self, "order", order)
        if self.phases is not None:
            object.__setattr__(self, "phases",
                               tuple(float(p) % (2 * np.pi) for p in self.phases))
        if self.per_spin_rates is not None:
            rates = tuple(float(r) for r in self.per_spin_rates)
            if any(r < 0 for r in rates):
                raise ValueError("per-spin rate factors must be >= 0")
            object.__setattr__(self, "per_spin_rates", rates)

    @property
    def dgamma(self):
        return self.gamma_R - self.gamma_L

    def resolved(self, n_spins):
        """(order, phases, rate factors) with defaults filled in for N spins."""
        order = self.order or tuple(range(1, n_spins + 1))
        phases = self.phases or (0.0,) * n_spins
        rates = self.per_spin_rates or (1.0,) * n_spins
        for name, v in (("order", order), ("phases", phases), ("per_spin_rates", rates)):
            if len(v) != n_spins:
                raise ValueError(f"waveguide {name} has length {len(v)}, expected {n_spins}")
        return order, np.array(phases), np.array(rates)

    def is_commensurate(self, n_spins):
        """All phases equal mod 2pi and uniform coupling: c_L and c_R coincide."""
        _, phases, rates = self.resolved(n_spins)
        d = np.angle(np.exp(1j * (phases - phases[0])))
        return bool(np.all(np.abs(d) < PHASE_TOL) and np.ptp(rates) == 0)


@dataclass(frozen=True)
class NetworkSpec:
    n_spins: int
    drive: DriveSpec
    waveguides: tuple
    onsite_decay: float = 0.0

    def __post_init__(self):
        if int(self.n_spins) != self.n_spins or self.n_spins < 1:
            raise ValueError("n_spins must be an integer >= 1")
        object.__setattr__(self, "waveguides", tuple(self.waveguides))
        if not self.waveguides:
            raise ValueError("at least one waveguide is required")
        if len(self.drive.rabi) != self.n_spins:
            raise ValueError(f"drive.rabi has length {len(self.drive.rabi)}, "
                             f"expected {self.n_spins}")
        if len(self.drive.detuning) != self.n_spins:
            raise ValueError(f"drive.detuning has length {len(self.drive.detuning)}, "
                             f"expected {self.n_spins}")
        for wg in self.waveguides:
            wg.resolved(self.n_spins)
        if self.onsite_decay < 0:
            raise ValueError("onsite_decay must be >= 0")


def chain(n_spins, omega, detuning=None, gamma_L=0.0, gamma_R=1.0, onsite_decay=0.0,
          schedule=None, phases=None):
    """Single-waveguide chain with homogeneous drive (the common case)."""
    return NetworkSpec(
        n_spins=n_spins,
        drive=DriveSpec.homogeneous(n_spins, omega, detuning, schedule),
        waveguides=(WaveguideSpec(gamma_L, gamma_R, phases=phases),),
        onsite_decay=onsite_decay,
    )


@dataclass(frozen=True)
class JumpChannel:
    rate: float
    op: sp.csr_matrix = field(repr=False)
    label: str = ""
    guide: Optional[int] = None  # waveguide index (0-based), None for on-site


@dataclass(frozen=True)
class LindbladModel:
    """H(t) = hamiltonian + schedule(t) * drive, plus jump channels."""

    n_spins: int
    hamiltonian: sp.csr_matrix = field(repr=False)
    jumps: tuple = ()
    drive: Optional[sp.csr_matrix] = field(default=None, repr=False)
    schedule: Optional[Schedule] = None

    def __post_init__(self):
        object.__setattr__(self, "jumps", tuple(self.jumps))
        dim = 2**self.n_spins
        if self.hamiltonian.shape != (dim, dim):
            raise ValueError("Hamiltonian dimension does not match n_spins")
        herm = abs(self.hamiltonian - self.hamiltonian.conj().T).max() if dim else 0.0
        if herm > 1e-12:
            raise ValueError(f"Hamiltonian is not Hermitian (residual {herm:.2e})")
        for ch in self.jumps:
            if not ch.rate > 0:
                raise ValueError(f"jump rate must be > 0, got {ch.rate}")
            if ch.op.shape != (dim, dim):
                raise ValueError(f"jump operator {ch.label!r} has wrong dimension")

    @property
    def dim(self):
        return 2**self.n_spins

    @property
    def time_dependent(self):
        return self.drive is not None and self.schedule is not None \
            and self.schedule.kind != "constant"

    def hamiltonian_at(self, t):
        if self.drive is None:
            return self.hamiltonian
        s = self.schedule(t) if self.schedule is not None else 1.0
        return (self.hamiltonian + s * self.drive).tocsr()

    def guide_channels(self):
        return [ch for ch in self.jumps if ch.guide is not None]


def build_drive_coupling(spec):
    """sum_j (Omega_j sigma_j + Omega_j^* sigma_j^dag)."""
    n = spec.n_spins
    out = sp.csr_matrix((2**n, 2**n), dtype=complex)
    for j, om in enumerate(spec.drive.rabi, start=1):
        if om != 0:
            s = qops.lowering(j, n)
            out = out + om * s + np.conj(om) * s.conj().T
    return out.tocsr()


def build_system_hamiltonian(spec, include_drive=True):
    """H_sys = sum_j (-delta_j n_j + Omega_j sigma_j + Omega_j^* sigma_j^dag)."""
    n = spec.n_spins
    h = sp.csr_matrix((2**n, 2**n), dtype=complex)
    for j, d in enumerate(spec.drive.detuning, start=1):
        if d != 0:
            h = h - d * qops.number(j, n)
    if include_drive:
        h = h + build_drive_coupling(spec)
    return h.tocsr()


def _hopping(j, l, n):
    """sigma_j^dag sigma_l."""
    return (qops.raising(j, n) @ qops.lowering(l, n)).tocsr()


def build_waveguide_hamiltonian(spec, m):
    """Coherent guide-mediated exchange H_L^(m) + H_R^(m).

    Right movers couple each spin to those after it along the guide, left
    movers to those before it; the pair phase is ``k|x_j - x_l|`` =
    (phase of later spin) - (phase of earlier spin).
    """
    n = spec.n_spins
    wg = spec.waveguides[m]
    order, phases, rates = wg.resolved(n)
    pos = {spin: p for p, spin in enumerate(order)}
    h = sp.csr_matrix((2**n, 2**n), dtype=complex)
    for j in range(1, n + 1):
        for l in range(1, n + 1):
            if j == l:
                continue
            if pos[j] > pos[l]:
                gamma = wg.gamma_R
                phase = phases[j - 1] - phases[l - 1]
            else:
                gamma = wg.gamma_L
                phase = phases[l - 1] - phases[j - 1]
            if gamma == 0:
                continue
            amp = -0.5j * gamma * np.sqrt(rates[j - 1] * rates[l - 1]) * np.exp(1j * phase)
            term = amp * _hopping(j, l, n)
            h = h + term + term.conj().T
    return h.tocsr()


def build_jump_operators(spec):
    """Collective guide channels c_L^(m), c_R^(m) plus on-site sigma_j channels."""
    n = spec.n_spins
    out = []
    for m, wg in enumerate(spec.waveguides):
        _, phases, rates = wg.resolved(n)
        amps = np.sqrt(rates)
        lows = [qops.lowering(j, n) for j in range(1, n + 1)]
        c_r = sum(a * np.exp(-1j * p) * s for a, p, s in zip(amps, phases, lows)).tocsr()
        c_l = sum(a * np.exp(1j * p) * s for a, p, s in zip(amps, phases, lows)).tocsr()
        if wg.is_commensurate(n):
            # strip the global phase so the merged operator is sum_j sigma_j
            c = (np.exp(1j * phases[0]) * c_r).tocsr()
            out.append(JumpChannel(wg.gamma_L + wg.gamma_R, c, f"LR{m + 1}", m))
            continue
        if wg.gamma_L > 0:
            out.append(JumpChannel(wg.gamma_L, c_l, f"L{m + 1}", m))
        if wg.gamma_R > 0:
            out.append(JumpChannel(wg.gamma_R, c_r, f"R{m + 1}", m))
    if spec.onsite_decay > 0:
        for j in range(1, n + 1):
            out.append(JumpChannel(spec.onsite_decay, qops.lowering(j, n), f"onsite{j}"))
    return out


def commensurate_interaction(n_spins, dgamma, order=None):
    """-(i dgamma / 2) sum_{j after l} (sigma_j^dag sigma_l - h.c.) along ``order``."""
    order = order or tuple(range(1, n_spins + 1))
    h = sp.csr_matrix((2**n_spins, 2**n_spins), dtype=complex)
    for a in range(n_spins):
        for b in range(a):
            j, l = order[a], order[b]
            t = _hopping(j, l, n_spins)
            h = h - 0.5j * dgamma * (t - t.conj().T)
    return h.tocsr()


def assemble_model(spec):
    """Build the full LindbladModel for a network."""
    n = spec.n_spins
    sched = spec.drive.schedule
    separate = sched is not None and sched.kind != "constant"
    h = build_system_hamiltonian(spec, include_drive=not separate)
    for m, wg in enumerate(spec.waveguides):
        hw = build_waveguide_hamiltonian(spec, m)
        if wg.is_commensurate(n):
            order, _, _ = wg.resolved(n)
            ref = commensurate_interaction(n, wg.dgamma, order)
            assert abs(hw - ref).max() < 1e-12 if hw.nnz or ref.nnz else True, \
                "commensurate guide does not reduce to the single-jump form"
        h = h + hw
    h = (0.5 * (h + h.conj().T)).tocsr()
    h.eliminate_zeros()
    drive = build_drive_coupling(spec) if separate else None
    return LindbladModel(
        n_spins=n,
        hamiltonian=h,
        jumps=tuple(build_jump_operators(spec)),
        drive=drive,
        schedule=sched if separate else None,
    )

"""Density-matrix time evolution, steady states and photon counting."""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import qops
from .integrate import Dopri5, KrylovExp

log = logging.getLogger(__name__)

POSITIVITY_ABORT = 1e-6


@dataclass
class EvolveOptions:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-8
    t_max: float = 100.0
    sample_times: Optional[np.ndarray] = None
    steady_residual: float = 1e-8
    max_step: float = np.inf
    method: str = "auto"  # "auto", "dopri5" or "krylov"

    def __post_init__(self):
        if self.method not in ("auto", "dopri5", "krylov"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.rel_tol <= 0 or self.abs_tol <= 0 or self.steady_residual <= 0:
            raise ValueError("tolerances must be positive")
        if self.sample_times is not None:
            st = np.asarray(self.sample_times, dtype=float)
            if np.any(np.diff(st) < 0):
                raise ValueError("sample_times must be sorted ascending")
            self.sample_times = st

    def times(self):
        if self.sample_times is not None:
            return self.sample_times
        return np.linspace(0.0, self.t_max, 201)


@dataclass
class ObservableSeries:
    times: np.ndarray
    columns: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    final_state: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        for name, col in self.columns.items():
            if len(col) != len(self.times):
                raise ValueError(f"column {name!r} has {len(col)} rows, expected {len(self.times)}")

    def __getitem__(self, name):
        return self.columns[name]

    def __contains__(self, name):
        return name in self.columns

    @property
    def names(self):
        return list(self.columns)


def subset_label(sites):
    sites = list(sites)
    if all(s < 10 for s in sites):
        return "".join(str(s) for s in sites)
    return "_".join(str(s) for s in sites)


class LindbladRhs:
    """Matrix-free right-hand side drho/dt for a LindbladModel.

    Uses H_eff = H - (i/2) sum r L^dag L so that
    drho/dt = -i (H_eff rho - rho H_eff^dag) + sum r L rho L^dag.
    """

    def __init__(self, model):
        self.model = model
        heff = model.hamiltonian.astype(complex)
        for ch in model.jumps:
            heff = heff - 0.5j * ch.rate * (ch.op.conj().T @ ch.op)
        self.heff = heff.tocsr()
        self.drive = model.drive
        self.schedule = model.schedule
        self.jumps = [(ch.rate, ch.op.tocsr()) for ch in model.jumps]

    def heff_at(self, t):
        if self.drive is None:
            return self.heff
        return self.heff + self.schedule(t) * self.drive

    def __call__(self, t, rho):
        # project onto the Hermitian part first: the shortcut below would
        # otherwise feed roundoff anti-Hermitian parts back into the trace
        rho = 0.5 * (rho + rho.conj().T)
        a = self.heff @ rho
        if self.drive is not None:
            s = self.schedule(t)
            if s != 0:
                a = a + s * (self.drive @ rho)
        out = -1j * (a - a.conj().T)
        for rate, op in self.jumps:
            out = out + rate * (op @ (op @ rho).conj().T)
        return out

    def general(self, t, rho):
        """Same generator without assuming Hermitian rho."""
        heff = self.heff_at(t)
        out = -1j * (heff @ rho - (heff @ rho.conj().T).conj().T)
        for rate, op in self.jumps:
            out = out + rate * (op @ (op @ rho).conj().T).conj().T
        return out


def liouvillian_apply(model, rho, t=0.0):
    """drho/dt = -i[H(t), rho] + sum rate D[op] rho, without the superoperator."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (model.dim, model.dim):
        raise ValueError(f"dimension mismatch: model {model.dim}, rho {rho.shape}")
    return LindbladRhs(model).general(t, rho)


def photon_flux(model, rho):
    """sum over waveguide channels of rate * Tr(c^dag c rho)."""
    total = 0.0
    for ch in model.guide_channels():
        # Tr(c^dag c rho) = sum_ij conj(c)_ij (c rho)_ij
        x = ch.op @ rho
        total += ch.rate * float(np.real(ch.op.conj().multiply(x).sum()))
    return total


class _Recorder:
    def __init__(self, model, probes, observers, check_positivity):
        self.model = model
        self.probes = [tuple(p) for p in probes]
        self.observers = dict(observers or {})
        self.check = check_positivity
        self.number_diag = [qops.number(j, model.n_spins).diagonal().real
                            for j in range(1, model.n_spins + 1)]
        self.rows = {}

    def record(self, t, rho):
        rho = 0.5 * (rho + rho.conj().T)
        if self.check:
            lam = np.linalg.eigvalsh(rho).min()
            if lam < -POSITIVITY_ABORT:
                raise qops.PositivityError(
                    f"eigenvalue {lam:.3e} at t={t:.6g} exceeds positivity drift "
                    f"{POSITIVITY_ABORT:g}; tighten rel_tol/abs_tol")
        self._add("P", qops.purity(rho))
        diag = np.real(np.diag(rho))
        for j, nd in enumerate(self.number_diag, start=1):
            self._add(f"n_{j}", float(nd @ diag))
        self._add("flux", photon_flux(self.model, rho))
        for sites in self.probes:
            red = qops.partial_trace(rho, sites)
            lab = subset_label(sites)
            self._add(f"P_{lab}", qops.purity(red))
            self._add(f"S_{lab}", qops.entropy(red, clip=POSITIVITY_ABORT))
        for name, fn in self.observers.items():
            self._add(name, fn(rho))

    def _add(self, name, value):
        self.rows.setdefault(name, []).append(value)

    def columns(self):
        return {k: np.asarray(v) for k, v in self.rows.items()}


def _make_integrator(model, rhs, t0, rho0, opts, max_step=None):
    max_step = opts.max_step if max_step is None else max_step
    method = opts.method
    if method == "auto":
        # Krylov propagation handles the stiff collective decay of large
        # networks far better than explicit steps; it needs a fixed generator
        method = "dopri5" if model.time_dependent else "krylov"
    if method == "krylov":
        if model.time_dependent:
            raise ValueError("krylov propagation requires a time-independent model")
        return KrylovExp(rhs, t0, rho0, opts.rel_tol, opts.abs_tol, max_step)
    return Dopri5(rhs, t0, rho0, opts.rel_tol, opts.abs_tol, max_step)


def evolve_density(model, rho0=None, opts=None, probes=(), observers=None,
                   check_positivity=True):
    """Integrate the master equation and record observables at sample times.

    Columns: ``P`` (total purity), ``n_j`` (excited populations), ``flux``
    (guide photon flux), ``P_<sites>``/``S_<sites>`` for each probe subset and
    any extra ``observers`` (name -> callable(rho)).
    """
    opts = opts or EvolveOptions()
    if rho0 is None:
        rho0 = qops.dm(qops.ground_state(model.n_spins))
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (model.dim, model.dim):
        raise ValueError("initial state dimension does not match the model")
    times = opts.times()
    rhs = LindbladRhs(model)
    rec = _Recorder(model, probes, observers, check_positivity)
    ig = _make_integrator(model, rhs, times[0], rho0, opts)
    for t in times:
        while ig.t < t:
            ig.step(times[-1])
        rho = ig.y if t == ig.t else ig.interpolate(t)
        rec.record(t, rho)
    log.debug("evolve_density: %d steps, %d rejected", ig.n_steps, ig.n_rejected)
    return ObservableSeries(times, rec.columns(), final_state=0.5 * (ig.y + ig.y.conj().T))


@dataclass
class SteadyState:
    rho: np.ndarray = field(repr=False)
    residual: float
    converged: bool
    t: float
    unique: Optional[bool] = None

    def __iter__(self):
        # allows ``rho, residual = steady_state(...)``
        return iter((self.rho, self.residual))


def spectral_radius_estimate(rhs, n_iter=40, seed=0):
    """Power-iteration estimate of the largest |eigenvalue| of the generator."""
    rng = np.random.default_rng(seed)
    n = rhs.model.n_spins
    x = qops.random_density(n, rng)
    x = x / np.linalg.norm(x)
    ratios = []
    for _ in range(n_iter):
        y = rhs(0.0, x)
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        ratios.append(ny)
        x = y / ny
    return float(max(ratios[-10:]))


def _integrate_to_rest(model, rho0, opts):
    rhs = LindbladRhs(model)
    # near the fixed point the step controller drifts to the stability edge
    # and the stiff modes wobble at tolerance level; keep h inside the region
    radius = spectral_radius_estimate(rhs)
    cap = opts.max_step if radius == 0 else min(opts.max_step, 2.5 / radius)
    ig = Dopri5(rhs, 0.0, rho0, opts.rel_tol, opts.abs_tol, cap)
    t_rest = model.schedule.t_ramp if model.time_dependent else 0.0
    residual = np.linalg.norm(ig.f)
    while True:
        if ig.t >= t_rest and residual < opts.steady_residual:
            return ig.y, residual, True, ig.t
        if ig.t >= opts.t_max:
            return ig.y, residual, False, ig.t
        ig.step(opts.t_max)
        residual = float(np.linalg.norm(ig.f))


def steady_state(model, opts=None, rho0=None, check_unique=False, unique_tol=1e-6):
    """Long-time integration until ||drho/dt||_F < steady_residual.

    Starts from |g...g> unless ``rho0`` is given.  Exceeding ``t_max``
    returns the current state with ``converged=False``.  With
    ``check_unique`` a second run from the maximally mixed state is compared
    (trace distance ``unique_tol``) to flag initial-state dependence.
    """
    opts = opts or EvolveOptions(t_max=2000.0)
    if rho0 is None:
        rho0 = qops.dm(qops.ground_state(model.n_spins))
    rho, residual, conv, t = _integrate_to_rest(model, np.asarray(rho0, dtype=complex), opts)
    rho = 0.5 * (rho + rho.conj().T)
    result = SteadyState(rho, residual, conv, t)
    if check_unique:
        other, res2, conv2, _ = _integrate_to_rest(model, qops.maximally_mixed(model.n_spins), opts)
        result.unique = bool(conv and conv2 and qops.trace_distance(rho, other) < unique_tol)
    if not conv:
        log.info("steady_state not converged at t=%g (residual %.2e)", t, residual)
    return result


def liouvillian_matrix(model, t=None):
    """Sparse superoperator acting on column-stacked rho (at the end of any ramp by default)."""
    d = model.dim
    h = model.hamiltonian_at(np.inf if t is None else t).astype(complex)
    eye = sp.identity(d, dtype=complex, format="csr")
    out = -1j * (sp.kron(eye, h) - sp.kron(h.T, eye))
    for ch in model.jumps:
        c = ch.op.astype(complex)
        cdc = (c.conj().T @ c).tocsr()
        out = out + ch.rate * (sp.kron(c.conj(), c) - 0.5 * sp.kron(eye, cdc)
                               - 0.5 * sp.kron(cdc.T, eye))
    return out.tocsr()


def steady_state_direct(model):
    """Null vector of the Liouvillian by sparse LU, one equation traded for Tr rho = 1.

    Only meaningful for a unique steady state; a singular system raises.
    """
    d = model.dim
    lv = liouvillian_matrix(model).tolil()
    lv[0, :] = 0
    idx = np.arange(d) * (d + 1)
    lv[0, idx] = 1.0
    rhs = np.zeros(d * d, dtype=complex)
    rhs[0] = 1.0
    x = spsolve(lv.tocsc(), rhs)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("singular Liouvillian: steady state not unique")
    rho = x.reshape(d, d, order="F")
    rho = 0.5 * (rho + rho.conj().T)
    residual = float(np.linalg.norm(LindbladRhs(model)(np.inf, rho)))
    return SteadyState(rho, residual, residual < 1e-8, np.inf)


def photon_count(series):
    """Trapezoidal integral of the ``flux`` column."""
    if "flux" not in series:
        raise KeyError("series has no 'flux' column")
    return float(np.trapezoid(series["flux"], series.times))


def relaxation_rate(times, fidelity, window=(0.5, 0.99)):
    """Exponential approach rate from a linear fit of ln(1 - F) over the window."""
    times = np.asarray(times)
    fidelity = np.asarray(fidelity)
    sel = (fidelity >= window[0]) & (fidelity <= window[1])
    if sel.sum() < 3:
        raise ValueError("fewer than 3 samples inside the fidelity window")
    slope, _ = np.polyfit(times[sel], np.log(1.0 - fidelity[sel]), 1)
    return float(-slope)

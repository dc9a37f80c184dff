"""Quantum-jump unraveling of the network master equation."""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import qops
from .evolve import ObservableSeries, subset_label
from .integrate import Dopri5, KrylovExp

log = logging.getLogger(__name__)

DEFAULT_MAX_SPINS = 14
NORM_SLACK = 1e-10


class TrajectoryError(RuntimeError):
    pass


@dataclass
class TrajectoryConfig:
    n_traj: int = 1
    seed: int = 0
    t_max: float = 100.0
    sample_times: Optional[np.ndarray] = None
    jump_tolerance: float = 1e-10
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_spins: int = DEFAULT_MAX_SPINS
    allow_large: bool = False

    def __post_init__(self):
        if int(self.n_traj) != self.n_traj or self.n_traj < 1:
            raise ValueError("n_traj must be an integer >= 1")
        if not self.jump_tolerance > 0:
            raise ValueError("jump_tolerance must be > 0")
        if self.sample_times is not None:
            st = np.asarray(self.sample_times, dtype=float)
            if np.any(np.diff(st) < 0) or st[0] < 0:
                raise ValueError("sample_times must be non-negative and ascending")
            self.sample_times = st

    def times(self):
        if self.sample_times is not None:
            return self.sample_times
        return np.linspace(0.0, self.t_max, 101)


@dataclass
class TrajectoryRecord:
    index: int
    times: np.ndarray
    jump_times: list = field(default_factory=list)
    jump_channels: list = field(default_factory=list)
    sampled_states: list = field(default_factory=list, repr=False)

    @property
    def n_jumps(self):
        return len(self.jump_times)


def effective_hamiltonian(model, t=0.0):
    """H(t) - (i/2) sum rate op^dag op."""
    h = model.hamiltonian_at(t).astype(complex)
    for ch in model.jumps:
        h = h - 0.5j * ch.rate * (ch.op.conj().T @ ch.op)
    return h.tocsr()


def trajectory_rng(seed, traj_index):
    """Counter-based stream keyed by (seed, trajectory index)."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(traj_index)])
    return np.random.Generator(np.random.Philox(ss))


def _check_size(model, cfg):
    if model.n_spins > cfg.max_spins and not cfg.allow_large:
        mib = 16 * 2**model.n_spins / 2**20
        raise ValueError(
            f"N={model.n_spins} exceeds the trajectory cap of {cfg.max_spins} spins; "
            f"set allow_large=True to proceed ({mib:.1f} MiB per state vector, "
            f"several vectors plus sparse operators per trajectory)")


class _Propagator:
    """Non-Hermitian Schroedinger flow with dense output for one no-jump segment."""

    def __init__(self, model, cfg):
        self.model = model
        self.cfg = cfg
        self.heff = None
        if not model.time_dependent:
            self.heff = effective_hamiltonian(model, 0.0)
        else:
            base = model.hamiltonian.astype(complex)
            for ch in model.jumps:
                base = base - 0.5j * ch.rate * (ch.op.conj().T @ ch.op)
            self.base = base.tocsr()
            self.drive = model.drive
            self.schedule = model.schedule

    def fun(self, t, psi):
        if self.heff is not None:
            return -1j * (self.heff @ psi)
        return -1j * (self.base @ psi + self.schedule(t) * (self.drive @ psi))

    def start(self, t0, psi):
        if self.heff is not None:
            return KrylovExp(self.fun, t0, psi, self.cfg.rel_tol, self.cfg.abs_tol,
                             krylov_dim=20, real_span=False)
        return Dopri5(self.fun, t0, psi, self.cfg.rel_tol, self.cfg.abs_tol)


def _norm2(x):
    return float(np.vdot(x, x).real)


def _select_channel(model, psi, rng):
    weights = np.array([ch.rate * _norm2(ch.op @ psi) for ch in model.jumps])
    total = weights.sum()
    if not total > 0:
        raise TrajectoryError("all jump channels annihilate the state at a jump time")
    probs = weights / total
    assert abs(probs.sum() - 1.0) < 1e-12
    k = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
    return min(k, len(probs) - 1)


def run_trajectory(model, psi0=None, cfg=None, traj_index=0):
    """One quantum-jump trajectory sampled at ``cfg.times()``.

    Waiting times come from the norm-threshold rule: with u uniform in (0,1)
    the no-jump evolution runs until ||psi||^2 = u, located by root finding
    on the integrator's dense output.
    """
    cfg = cfg or TrajectoryConfig()
    _check_size(model, cfg)
    if psi0 is None:
        psi0 = qops.ground_state(model.n_spins)
    psi = qops.as_state(psi0).astype(complex)
    if psi.shape != (model.dim,):
        raise ValueError("initial state dimension does not match the model")
    times = cfg.times()
    t_end = float(times[-1])
    rng = trajectory_rng(cfg.seed, traj_index)
    prop = _Propagator(model, cfg)
    rec = TrajectoryRecord(traj_index, times)
    k = 0  # next sample index
    t = 0.0
    while k < len(times) and times[k] <= t:
        rec.sampled_states.append(psi.copy())
        k += 1
    while k < len(times):
        u = rng.random()
        ig = prop.start(t, psi)
        prev = 1.0
        jumped = False
        while ig.t < t_end:
            ig.step(t_end)
            n_now = _norm2(ig.y)
            if n_now > prev * (1 + NORM_SLACK) + NORM_SLACK:
                raise TrajectoryError(f"norm grew between jumps at t={ig.t:.6g}")
            if n_now <= u:
                tj = brentq(lambda s: _norm2(ig.interpolate(s)) - u, ig.t_old, ig.t,
                            xtol=cfg.jump_tolerance, rtol=4 * np.finfo(float).eps)
                while k < len(times) and times[k] <= tj:
                    v = ig.interpolate(times[k])
                    rec.sampled_states.append(v / np.sqrt(_norm2(v)))
                    k += 1
                pre = ig.interpolate(tj)
                ch = _select_channel(model, pre, rng)
                post = model.jumps[ch].op @ pre
                psi = post / np.sqrt(_norm2(post))
                rec.jump_times.append(float(tj))
                rec.jump_channels.append(ch)
                t = tj
                jumped = True
                break
            prev = n_now
            while k < len(times) and times[k] <= ig.t:
                v = ig.y if times[k] == ig.t else ig.interpolate(times[k])
                rec.sampled_states.append(v / np.sqrt(_norm2(v)))
                k += 1
        if not jumped:
            break
    return rec


def _resolve_workers(workers):
    if workers is None:
        workers = int(os.environ.get("CHIRALSPIN_THREADS", "1") or 1)
    return max(1, int(workers))


def run_ensemble(model, psi0=None, cfg=None, workers=None):
    """All trajectories of ``cfg``, returned in index order."""
    cfg = cfg or TrajectoryConfig()
    _check_size(model, cfg)
    workers = _resolve_workers(workers)
    idx = range(cfg.n_traj)
    if workers == 1:
        return [run_trajectory(model, psi0, cfg, i) for i in idx]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda i: run_trajectory(model, psi0, cfg, i), idx))


def _populations(psi, n):
    prob = (np.abs(psi) ** 2).reshape([2] * n)
    return np.array([prob.sum(axis=tuple(a for a in range(n) if a != j))[1] for j in range(n)])


def _jackknife(values, stat):
    """stat(mean) and its jackknife standard error over the leading axis."""
    n = len(values)
    total = values.sum(axis=0)
    full = stat(total / n)
    if n < 2:
        return full, np.nan
    loo = np.array([stat((total - v) / (n - 1)) for v in values])
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return full, float(se)


def ensemble_average(model, psi0=None, cfg=None, probes=(), workers=None, records=None):
    """Trajectory averages with standard errors.

    Columns: ``n_j`` (mean excitation, SEM), ``P_<sites>``/``S_<sites>``
    (purity and entropy of the averaged reduced state, jackknife errors) and
    ``jumps`` (mean cumulative number of guide photons).
    """
    cfg = cfg or TrajectoryConfig()
    if records is None:
        records = run_ensemble(model, psi0, cfg, workers)
    times = cfg.times()
    n = model.n_spins
    ntr = len(records)
    cols, errs = {}, {}
    guide = {i for i, ch in enumerate(model.jumps) if ch.guide is not None}
    pops = np.array([[_populations(psi, n) for psi in r.sampled_states] for r in records])
    for j in range(n):
        cols[f"n_{j + 1}"] = pops[:, :, j].mean(axis=0)
        errs[f"n_{j + 1}"] = pops[:, :, j].std(axis=0, ddof=1) / np.sqrt(ntr) if ntr > 1 \
            else np.full(len(times), np.nan)
    counts = np.array([[sum(1 for tj, c in zip(r.jump_times, r.jump_channels)
                            if tj <= t and c in guide) for t in times] for r in records], float)
    cols["jumps"] = counts.mean(axis=0)
    errs["jumps"] = counts.std(axis=0, ddof=1) / np.sqrt(ntr) if ntr > 1 \
        else np.full(len(times), np.nan)
    for sites in probes:
        lab = subset_label(sites)
        pv, pe, sv, se = [], [], [], []
        for i in range(len(times)):
            reds = np.array([qops.reduced_from_state(r.sampled_states[i], sites) for r in records])
            p, perr = _jackknife(reds, qops.purity)
            s, serr = _jackknife(reds, lambda x: qops.entropy(0.5 * (x + x.conj().T)))
            pv.append(p)
            pe.append(perr)
            sv.append(s)
            se.append(serr)
        cols[f"P_{lab}"], errs[f"P_{lab}"] = np.array(pv), np.array(pe)
        cols[f"S_{lab}"], errs[f"S_{lab}"] = np.array(sv), np.array(se)
    return ObservableSeries(times, cols, errs)


def pair_purity_grid(record, pairs):
    """Purity of each pair's reduced state along a single trajectory (rows: times)."""
    return np.array([[qops.purity(qops.reduced_from_state(psi, p)) for p in pairs]
                     for psi in record.sampled_states])


def purification_times(grid, times, threshold=0.99):
    """Per column, the first sample time at which the purity is back above
    ``threshold`` after having dropped below it (0 if it never dropped, inf
    if it never recovered)."""
    grid = np.asarray(grid)
    times = np.asarray(times)
    out = []
    for col in grid.T:
        low = np.nonzero(col < threshold)[0]
        if low.size == 0:
            out.append(0.0)
            continue
        after = np.nonzero(col[low[0]:] >= threshold)[0]
        out.append(float(times[low[0] + after[0]]) if after.size else np.inf)
    return np.array(out)

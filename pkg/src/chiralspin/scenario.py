"""Declarative scenario files: loading, validation, execution and export.

A scenario is a JSON object::

    {"schema": "chiralspin.scenario/1", "name": "fig2a", "task": "evolve",
     "seed": 0, "network": {...}, "params": {...}, "comment": "..."}

Detunings may name symbols (``"a"``, ``"-b"``) defined in
``network.drive.symbols``, which makes patterns like (a, b, -b, -a)
sweepable through a single scalar.  All randomness derives from ``seed``:
trajectory ``i`` uses ``SeedSequence([seed, i])`` and optimizer restarts use
``SeedSequence(seed).spawn(restarts)``.
"""

import copy
import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, darklab, evolve, fisher, mcwf, netmodel, qops

log = logging.getLogger(__name__)

SCHEMA = "chiralspin.scenario/1"
MANIFEST_SCHEMA = "chiralspin.manifest/1"
TASKS = ("evolve", "steady", "trajectories", "darkstate", "fisher", "sweep", "adiabatic")
DIRECT_MAX_SPINS = 6
PURE_TOL = 1e-8  # 1 - purity below which a steady state counts as pure
FIT_WINDOW = 0.05
REQUIRED = object()


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


# ---------------------------------------------------------------- validation helpers

def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _number(path, lo=None, positive=False, integer=False):
    def check(x):
        if not _is_number(x):
            raise ScenarioError(path, f"expected a number, got {x!r}")
        if integer and int(x) != x:
            raise ScenarioError(path, f"expected an integer, got {x!r}")
        if positive and not x > 0:
            raise ScenarioError(path, f"must be > 0, got {x!r}")
        if lo is not None and x < lo:
            raise ScenarioError(path, f"must be >= {lo}, got {x!r}")
        return int(x) if integer else float(x)
    return check


def _bool(path):
    def check(x):
        if not isinstance(x, bool):
            raise ScenarioError(path, f"expected true/false, got {x!r}")
        return x
    return check


def _choice(path, options):
    def check(x):
        if x not in options:
            raise ScenarioError(path, f"expected one of {list(options)}, got {x!r}")
        return x
    return check


def _number_list(path, positive=False):
    def check(x):
        if not isinstance(x, list) or not x:
            raise ScenarioError(path, "expected a non-empty list of numbers")
        return [_number(f"{path}[{i}]", positive=positive)(v) for i, v in enumerate(x)]
    return check


def _reject_unknown(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ScenarioError(path, f"expected an object, got {type(obj).__name__}")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ScenarioError(f"{path}.{extra[0]}" if path else extra[0],
                            f"unknown key (allowed: {sorted(allowed)})")


# ---------------------------------------------------------------- network

def _resolve_probes(value, n, path):
    if value == "pairs":
        return [[j, j + 1] for j in range(1, n, 2)]
    if value == "neighbours":
        return [[j, j + 1] for j in range(1, n)]
    if not isinstance(value, list):
        raise ScenarioError(path, "expected a list of site lists, 'pairs' or 'neighbours'")
    out = []
    for i, sites in enumerate(value):
        p = f"{path}[{i}]"
        if not isinstance(sites, list) or not sites:
            raise ScenarioError(p, "expected a non-empty list of sites")
        s = [_number(p, integer=True)(x) for x in sites]
        if len(set(s)) != len(s) or min(s) < 1 or max(s) > n:
            raise ScenarioError(p, f"sites must be distinct and within 1..{n}")
        out.append(sorted(s))
    return out


def _detunings(drive, n, path):
    symbols = drive.get("symbols", {})
    _reject_unknown(symbols, symbols.keys(), f"{path}.symbols")
    for k, v in symbols.items():
        _number(f"{path}.symbols.{k}")(v)
    det = drive.get("detuning", 0.0)
    if _is_number(det):
        values = [float(det)] * n
    elif isinstance(det, list):
        if len(det) != n:
            raise ScenarioError(f"{path}.detuning", f"has {len(det)} entries, expected N={n}")
        values = []
        for i, d in enumerate(det):
            if _is_number(d):
                values.append(float(d))
            elif isinstance(d, str):
                sign, key = (-1.0, d[1:]) if d.startswith("-") else (1.0, d.lstrip("+"))
                if key not in symbols:
                    raise ScenarioError(f"{path}.detuning[{i}]", f"undefined symbol {key!r}")
                values.append(sign * float(symbols[key]))
            else:
                raise ScenarioError(f"{path}.detuning[{i}]", f"expected a number or symbol, got {d!r}")
    else:
        raise ScenarioError(f"{path}.detuning", "expected a number or a list")
    offset = _number(f"{path}.offset")(drive.get("offset", 0.0))
    return [v + offset for v in values]


def build_network(raw, path="network"):
    """NetworkSpec from the ``network`` object of a scenario."""
    _reject_unknown(raw, {"n_spins", "drive", "waveguides", "onsite_decay"}, path)
    if "n_spins" not in raw:
        raise ScenarioError(f"{path}.n_spins", "missing")
    n = _number(f"{path}.n_spins", integer=True, lo=1)(raw["n_spins"])
    drive = raw.get("drive")
    if drive is None:
        raise ScenarioError(f"{path}.drive", "missing")
    dpath = f"{path}.drive"
    _reject_unknown(drive, {"rabi", "detuning", "symbols", "offset", "rabi_imbalance",
                            "schedule"}, dpath)
    rabi = drive.get("rabi", REQUIRED)
    if rabi is REQUIRED:
        raise ScenarioError(f"{dpath}.rabi", "missing")
    if _is_number(rabi):
        rabi = [float(rabi)] * n
    else:
        rabi = _number_list(f"{dpath}.rabi")(rabi)
        if len(rabi) != n:
            raise ScenarioError(f"{dpath}.rabi", f"has {len(rabi)} entries, expected N={n}")
    imb = _number(f"{dpath}.rabi_imbalance")(drive.get("rabi_imbalance", 0.0))
    # staggered component: Omega_1 - Omega_2 = imbalance for a pair
    rabi = [r + (0.5 if j % 2 == 0 else -0.5) * imb for j, r in enumerate(rabi)]
    det = _detunings(drive, n, dpath)
    schedule = None
    if "schedule" in drive:
        sc = drive["schedule"]
        _reject_unknown(sc, {"kind", "t_ramp"}, f"{dpath}.schedule")
        try:
            schedule = netmodel.Schedule(sc.get("kind", "constant"), float(sc.get("t_ramp", 0.0)))
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"{dpath}.schedule", str(exc)) from None
    guides = raw.get("waveguides")
    if not isinstance(guides, list) or not guides:
        raise ScenarioError(f"{path}.waveguides", "expected a non-empty list")
    wgs = []
    for m, g in enumerate(guides):
        gp = f"{path}.waveguides[{m}]"
        _reject_unknown(g, {"gamma_L", "gamma_R", "order", "phases", "per_spin_rates"}, gp)
        gl = _number(f"{gp}.gamma_L", lo=0)(g.get("gamma_L", 0.0))
        gr = _number(f"{gp}.gamma_R", lo=0)(g.get("gamma_R", 1.0))
        kw = {}
        for key in ("order", "phases", "per_spin_rates"):
            if key in g:
                vals = _number_list(f"{gp}.{key}")(g[key])
                if len(vals) != n:
                    raise ScenarioError(f"{gp}.{key}", f"has {len(vals)} entries, expected N={n}")
                kw[key] = tuple(vals)
        try:
            wgs.append(netmodel.WaveguideSpec(gl, gr, **kw))
        except ValueError as exc:
            raise ScenarioError(gp, str(exc)) from None
    onsite = _number(f"{path}.onsite_decay", lo=0)(raw.get("onsite_decay", 0.0))
    return netmodel.NetworkSpec(n, netmodel.DriveSpec(rabi, det, schedule), tuple(wgs), onsite)


# ---------------------------------------------------------------- task parameters

def _task_schema(task, n, path):
    p = f"{path}"
    probes = lambda x: _resolve_probes(x, n, f"{p}.probes")
    method = _choice(f"{p}.method", ("auto", "direct", "integrate"))
    if task == "evolve":
        return {"t_max": (_number(f"{p}.t_max", positive=True), REQUIRED),
                "n_samples": (_number(f"{p}.n_samples", integer=True, lo=2), 201),
                "probes": (probes, []),
                "initial": (_choice(f"{p}.initial", ("ground", "mixed")), "ground"),
                "method": (_choice(f"{p}.method", ("auto", "dopri5", "krylov")), "auto"),
                "rel_tol": (_number(f"{p}.rel_tol", positive=True), 1e-8),
                "abs_tol": (_number(f"{p}.abs_tol", positive=True), 1e-8)}
    if task == "steady":
        return {"probes": (probes, []),
                "method": (method, "auto"),
                "t_max": (_number(f"{p}.t_max", positive=True), 5000.0),
                "residual": (_number(f"{p}.residual", positive=True), 1e-8),
                "check_unique": (_bool(f"{p}.check_unique"), False)}
    if task == "trajectories":
        return {"n_traj": (_number(f"{p}.n_traj", integer=True, lo=1), REQUIRED),
                "t_max": (_number(f"{p}.t_max", positive=True), REQUIRED),
                "n_samples": (_number(f"{p}.n_samples", integer=True, lo=2), 101),
                "probes": (probes, []),
                "pair_grid": (_bool(f"{p}.pair_grid"), False),
                "max_spins": (_number(f"{p}.max_spins", integer=True, lo=1),
                              mcwf.DEFAULT_MAX_SPINS),
                "allow_large": (_bool(f"{p}.allow_large"), False)}
    if task == "darkstate":
        return {"branch": (_choice(f"{p}.branch", (1, -1)), 1),
                "tol": (_number(f"{p}.tol", positive=True), darklab.DARK_TOL),
                "compare_steady": (_bool(f"{p}.compare_steady"), False)}
    if task == "fisher":
        def generator(x):
            if x in ("staggered", "optimize"):
                return x
            if isinstance(x, list) and len(x) == n:
                return _number_list(f"{p}.generator")(x)
            raise ScenarioError(f"{p}.generator",
                                f"expected 'staggered', 'optimize' or {n} signs along x")
        return {"state": (_choice(f"{p}.state", ("steady", "dark")), "steady"),
                "generator": (generator, "staggered"),
                "measurement": (_choice(f"{p}.measurement", ("jz", "none")), "none"),
                "restarts": (_number(f"{p}.restarts", integer=True, lo=1), 32),
                "method": (method, "auto"),
                "t_max": (_number(f"{p}.t_max", positive=True), 5000.0)}
    if task == "adiabatic":
        return {"t_ramps": (_number_list(f"{p}.t_ramps", positive=True), REQUIRED),
                "t_settle": (_number(f"{p}.t_settle", positive=True), 200.0),
                "n_samples": (_number(f"{p}.n_samples", integer=True, lo=2), 401),
                "sudden": (_bool(f"{p}.sudden"), True)}
    raise ScenarioError(f"{path}", f"no parameter schema for task {task!r}")


def _validate_params(task, params, n, path="params"):
    schema = _task_schema(task, n, path)
    _reject_unknown(params, schema, path)
    out = {}
    for key, (check, default) in schema.items():
        if key in params:
            out[key] = check(params[key])
        elif default is REQUIRED:
            raise ScenarioError(f"{path}.{key}", f"required for task {task!r}")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _get_path(obj, path):
    for part in path.split("."):
        if isinstance(obj, list):
            obj = obj[int(part)]
        else:
            obj = obj[part]
    return obj


def _set_path(obj, path, value):
    parts = path.split(".")
    for part in parts[:-1]:
        obj = obj[int(part)] if isinstance(obj, list) else obj.setdefault(part, {})
    last = parts[-1]
    if isinstance(obj, list):
        obj[int(last)] = value
    else:
        obj[last] = value


def _validate_grid(raw, grid, path):
    if not isinstance(grid, dict) or not 1 <= len(grid) <= 2:
        raise ScenarioError(path, "expected an object with 1 or 2 fields")
    out = {}
    for key, values in grid.items():
        values = _number_list(f"{path}.{key}")(values)
        probe = copy.deepcopy(raw)
        try:
            current = _get_path(probe, key)
        except (KeyError, IndexError, ValueError, TypeError):
            current = None
            try:
                _set_path(probe, key, values[0])
                current = _get_path(probe, key)
            except (KeyError, IndexError, ValueError, TypeError, AttributeError):
                raise ScenarioError(f"{path}.{key}", "not a field of the scenario") from None
        if not _is_number(current):
            raise ScenarioError(f"{path}.{key}", "grid fields must be scalar numbers")
        out[key] = values
    return out


# ---------------------------------------------------------------- scenario object

@dataclass
class Scenario:
    name: str
    network: netmodel.NetworkSpec
    task: str
    params: dict
    seed: int = 0
    output: str = ""
    comment: str = ""
    raw: dict = field(default_factory=dict, repr=False)


def validate_scenario(raw):
    """Scenario from a parsed JSON object; raises ScenarioError naming the field."""
    _reject_unknown(raw, {"schema", "name", "task", "seed", "network", "params", "output",
                          "comment"}, "")
    if raw.get("schema") != SCHEMA:
        raise ScenarioError("schema", f"expected {SCHEMA!r}, got {raw.get('schema')!r}")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise ScenarioError("name", "expected a non-empty string")
    task = _choice("task", TASKS)(raw.get("task"))
    seed = _number("seed", integer=True, lo=0)(raw.get("seed", 0))
    if "network" not in raw:
        raise ScenarioError("network", "missing")
    net = build_network(raw["network"])
    params = raw.get("params", {})
    if task == "sweep":
        _reject_unknown(params, {"task", "params", "grid", "outputs"}, "params")
        inner = _choice("params.task", tuple(t for t in TASKS if t not in ("sweep",)))(
            params.get("task"))
        inner_params = _validate_params(inner, params.get("params", {}), net.n_spins,
                                        "params.params")
        grid = _validate_grid(raw, params.get("grid"), "params.grid")
        outputs = params.get("outputs", [])
        if not isinstance(outputs, list) or not all(isinstance(o, str) for o in outputs):
            raise ScenarioError("params.outputs", "expected a list of column names")
        # every grid point must itself be a valid scenario
        for key in grid:
            for v in grid[key]:
                probe = copy.deepcopy(raw)
                _set_path(probe, key, v)
                n = build_network(probe["network"]).n_spins
                _validate_params(inner, params.get("params", {}), n, "params.params")
        params = {"task": inner, "params": inner_params, "grid": grid, "outputs": outputs}
    else:
        params = _validate_params(task, params, net.n_spins)
    output = raw.get("output", name)
    if not isinstance(output, str) or not output or "/" in output:
        raise ScenarioError("output", "expected a file stem without directories")
    comment = raw.get("comment", "")
    if not isinstance(comment, str):
        raise ScenarioError("comment", "expected a string")
    return Scenario(name, net, task, params, seed, output, comment, copy.deepcopy(raw))


def load_scenario(path):
    path = Path(path)
    if not path.exists():
        shipped = shipped_scenario_path(path.stem)
        if shipped is None:
            raise FileNotFoundError(f"no scenario file {path}")
        path = shipped
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"{path}: JSON parse error at line {exc.lineno}, "
                                f"column {exc.colno}: {exc.msg}") from None
    return validate_scenario(raw)


def save_scenario(scenario, path):
    Path(path).write_text(json.dumps(scenario.raw, indent=2) + "\n")


def shipped_scenarios():
    root = resources.files("chiralspin") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def shipped_scenario_path(name):
    p = resources.files("chiralspin") / "scenarios" / f"{name}.json"
    return Path(str(p)) if p.is_file() else None


def with_overrides(scenario, **values):
    """Copy of ``scenario`` with dotted-path fields replaced, revalidated."""
    raw = copy.deepcopy(scenario.raw)
    for key, v in values.items():
        _set_path(raw, key.replace("__", "."), v)
    return validate_scenario(raw)


# ---------------------------------------------------------------- task runners

@dataclass
class TaskResult:
    """In-memory outcome of one task: table(s), scalars and manifest sections."""

    tables: dict = field(default_factory=dict)  # suffix -> (header, rows)
    scalars: dict = field(default_factory=dict)
    converged: dict = field(default_factory=dict)
    certificates: list = field(default_factory=list)
    fisher: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _series_table(series, with_errors=False):
    header = ["t"] + list(series.columns)
    cols = [series.times] + [series.columns[k] for k in series.columns]
    if with_errors:
        header += [f"se_{k}" for k in series.errors]
        cols += [series.errors[k] for k in series.errors]
    rows = [list(r) for r in zip(*cols)]
    return header, rows


def _state_scalars(rho, model, probes):
    out = {"P": qops.purity(rho)}
    diag = np.real(np.diag(rho))
    for j in range(1, model.n_spins + 1):
        out[f"n_{j}"] = float(qops.number(j, model.n_spins).diagonal().real @ diag)
    out["flux"] = evolve.photon_flux(model, rho)
    for sites in probes:
        red = qops.partial_trace(rho, sites)
        lab = evolve.subset_label(sites)
        out[f"P_{lab}"] = qops.purity(red)
        out[f"S_{lab}"] = qops.entropy(red)
    return out


def _steady(model, p):
    method = p["method"]
    if method == "auto":
        method = "direct" if model.n_spins <= DIRECT_MAX_SPINS else "integrate"
    if method == "direct":
        return evolve.steady_state_direct(model)
    opts = evolve.EvolveOptions(t_max=p["t_max"], steady_residual=p["residual"])
    return evolve.steady_state(model, opts, check_unique=p.get("check_unique", False))


def _run_evolve(s, model, workers):
    p = s.params
    rho0 = (qops.maximally_mixed(model.n_spins) if p["initial"] == "mixed" else None)
    opts = evolve.EvolveOptions(t_max=p["t_max"], rel_tol=p["rel_tol"], abs_tol=p["abs_tol"],
                                sample_times=np.linspace(0.0, p["t_max"], p["n_samples"]),
                                method=p["method"])
    series = evolve.evolve_density(model, rho0, opts, p["probes"])
    res = TaskResult()
    res.tables[""] = _series_table(series)
    res.scalars = {k: float(v[-1]) for k, v in series.columns.items()}
    res.scalars["photons"] = evolve.photon_count(series)
    res.converged["evolve"] = True
    return res


def _run_steady(s, model, workers):
    p = s.params
    ss = _steady(model, p)
    res = TaskResult()
    sc = _state_scalars(ss.rho, model, p["probes"])
    res.tables[""] = (["t"] + list(sc), [[ss.t] + list(sc.values())])
    res.scalars = sc
    res.converged["steady_state"] = bool(ss.converged)
    res.extra["residual"] = ss.residual
    if ss.unique is not None:
        res.converged["unique"] = ss.unique
    return res


def _run_trajectories(s, model, workers):
    p = s.params
    cfg = mcwf.TrajectoryConfig(n_traj=p["n_traj"], seed=s.seed, t_max=p["t_max"],
                                sample_times=np.linspace(0.0, p["t_max"], p["n_samples"]),
                                max_spins=p["max_spins"], allow_large=p["allow_large"])
    records = mcwf.run_ensemble(model, None, cfg, workers)
    series = mcwf.ensemble_average(model, None, cfg, p["probes"], records=records)
    res = TaskResult()
    res.tables[""] = _series_table(series, with_errors=True)
    res.scalars = {k: float(v[-1]) for k, v in series.columns.items()}
    res.converged["trajectories"] = True
    res.extra["n_jumps"] = [r.n_jumps for r in records]
    if p["pair_grid"]:
        n = model.n_spins
        pairs = [(j, j + 1) for j in range(1, n)]
        grid = mcwf.pair_purity_grid(records[0], pairs)
        header = ["t"] + [f"P_{evolve.subset_label(pr)}" for pr in pairs]
        res.tables["pairs"] = (header, [[t] + list(r) for t, r in zip(cfg.times(), grid)])
        res.extra["purification_times"] = [
            [None if not math.isfinite(x) else x
             for x in mcwf.purification_times(mcwf.pair_purity_grid(r, pairs), cfg.times())]
            for r in records]
    return res


def _null_space_dim(model, tol=darklab.NULL_TOL):
    ops = [ch.op.toarray() for ch in model.jumps]
    if not ops:
        return model.dim
    sv = np.linalg.svd(np.vstack(ops), compute_uv=False)
    return int(model.dim - np.sum(sv > tol * max(1.0, sv[0])))


def predict_dark_state(spec, branch=1):
    """Predicted dark state of ``spec`` (dict with the state and how it was built)."""
    n = spec.n_spins
    rabi = spec.drive.rabi
    if any(abs(r - rabi[0]) > 1e-12 for r in rabi):
        raise darklab.NotDarkError("dark states need a homogeneous drive")
    omega = rabi[0]
    if len(spec.waveguides) == 2:
        single, u, red = darklab.reduce_network(spec, branch)
        inner = predict_dark_state(single)
        psi = u @ inner["state"]
        return {"state": psi, "route": "two-guide reduction", "pattern": list(single.drive.detuning),
                "reduction": {"theta": red.theta, "epsilon": red.epsilon,
                              "mapped": list(red.mapped)},
                "partition": inner.get("partition")}
    if len(spec.waveguides) != 1:
        raise darklab.NotDarkError("dark-state prediction covers one or two guides")
    g = spec.waveguides[0]
    det = spec.drive.detuning
    if g.dgamma == 0:
        pairing = darklab.bidirectional_pairing(det, omega)
        return {"state": pairing.state, "route": "bidirectional pairing",
                "pattern": list(det), "pairs": [list(x) for x in pairing.pairs]}
    if g.dgamma < 0:
        # mirror the chain so that the stronger direction points right
        mirrored = netmodel.NetworkSpec(n, netmodel.DriveSpec(rabi[::-1], det[::-1]),
                                        (netmodel.WaveguideSpec(g.gamma_R, g.gamma_L),))
        inner = predict_dark_state(mirrored)
        perm = [n - k for k in range(n)]
        psi = qops.permutation_operator(perm) @ inner["state"]
        return {"state": psi, "route": "mirrored chain", "pattern": list(det)}
    ms = darklab.predicted_dark_state(det, omega, g.dgamma)
    return {"state": ms.realized, "route": "permuted staggered pattern",
            "pattern": list(det), "partition": [list(c) for c in ms.partition]}


def _run_darkstate(s, model, workers):
    p = s.params
    spec = s.network
    res = TaskResult()
    res.extra["null_space_dim"] = _null_space_dim(model)
    cls = darklab.classify_pattern(spec.drive.detuning)
    res.extra["classification"] = {"pairable": cls.pairable,
                                   "pairings": [[list(x) for x in pr] for pr in cls.pairings[:8]],
                                   "conditions": cls.conditions}
    pred = predict_dark_state(spec, p["branch"])
    psi = pred.pop("state")
    cert = darklab.verify_dark(psi, model, p["tol"])
    res.certificates.append({"jump_residuals": list(cert.jump_residuals),
                             "hamiltonian_residual": cert.hamiltonian_residual,
                             "verdict": cert.verdict, "energy": cert.energy})
    res.extra["prediction"] = pred
    res.converged["dark"] = bool(cert.verdict)
    res.scalars = {"verdict": float(cert.verdict),
                   "hamiltonian_residual": cert.hamiltonian_residual}
    rho = qops.dm(psi)
    sc = _state_scalars(rho, model, _resolve_probes("pairs", spec.n_spins, "probes")
                        if spec.n_spins % 2 == 0 else [])
    if p["compare_steady"]:
        ss = _steady(model, {"method": "auto", "t_max": 5000.0, "residual": 1e-8})
        res.converged["steady_state"] = bool(ss.converged)
        res.extra["steady_fidelity"] = qops.fidelity_pure(psi, ss.rho)
        res.scalars["steady_fidelity"] = res.extra["steady_fidelity"]
    res.tables[""] = (["t"] + list(sc), [[math.inf] + list(sc.values())])
    return res


def _fisher_state(s, model):
    p = s.params
    if p["state"] == "dark":
        psi = predict_dark_state(s.network)["state"]
        return qops.dm(psi), psi, True, 1.0, 1.0
    ss = _steady(model, p)
    rho = ss.rho
    purity = qops.purity(rho)
    lam, vec = np.linalg.eigh(rho)
    if 1.0 - purity < PURE_TOL:
        # solver noise would otherwise populate the outcomes that vanish for the pure state
        return qops.dm(vec[:, -1]), vec[:, -1], bool(ss.converged), purity, float(lam[-1])
    return rho, None, bool(ss.converged), purity, float(lam[-1])


def _run_fisher(s, model, workers):
    p = s.params
    n = model.n_spins
    rho, psi, ok, purity, weight = _fisher_state(s, model)
    res = TaskResult()
    res.converged["state"] = ok
    out = {"purity": purity, "principal_weight": weight}
    gen_choice = p["generator"]
    if gen_choice == "optimize":
        if psi is None:
            psi = np.linalg.eigh(rho)[1][:, -1]
        r = fisher.optimize_generator(psi, p["restarts"], s.seed, workers)
        out.update({"F_Q_max": r.value, "upper_bound": r.upper_bound,
                    "witnessed_depth": r.witnessed_depth,
                    "directions": r.generator.directions.tolist(),
                    "bound_table": {str(k): v for k, v in r.bound_table.items()}})
        gen = r.generator
    else:
        gen = (fisher.staggered_probe(n) if gen_choice == "staggered"
               else fisher.GeneratorSpec.from_signs(gen_choice))
    out["F_Q"] = fisher.qfi_mixed(rho, gen)
    if p["measurement"] == "jz":
        out["F"] = fisher.classical_fisher(rho, gen, fisher.jz_measurement(n))
    key = "F_Q_max" if gen_choice == "optimize" else "F_Q"
    out.setdefault("witnessed_depth", fisher.witnessed_depth(out[key], n))
    res.fisher = out
    res.scalars = {k: float(v) for k, v in out.items() if _is_number(v)}
    res.tables[""] = (["t"] + list(res.scalars), [[math.inf] + list(res.scalars.values())])
    return res


def _run_adiabatic(s, model, workers):
    p = s.params
    spec = s.network
    rows = []
    runs = ([0.0] if p["sudden"] else []) + list(p["t_ramps"])
    for t_ramp in runs:
        sched = netmodel.Schedule("sin2", t_ramp) if t_ramp > 0 else None
        sp_ = netmodel.NetworkSpec(spec.n_spins,
                                   netmodel.DriveSpec(spec.drive.rabi, spec.drive.detuning, sched),
                                   spec.waveguides, spec.onsite_decay)
        m = netmodel.assemble_model(sp_)
        t_end = t_ramp + p["t_settle"]
        opts = evolve.EvolveOptions(t_max=t_end, sample_times=np.linspace(0.0, t_end,
                                                                          p["n_samples"]))
        series = evolve.evolve_density(m, None, opts)
        rows.append([t_ramp, evolve.photon_count(series), float(series["P"][-1])])
    res = TaskResult()
    res.tables[""] = (["T_max", "photons", "P_final"], rows)
    res.scalars = {f"photons_T{r[0]:g}": r[1] for r in rows}
    res.extra["photon_counts"] = {f"{r[0]:g}": r[1] for r in rows}
    res.converged["adiabatic"] = True
    return res


def _grid_points(grid):
    keys = list(grid)
    if len(keys) == 1:
        return [{keys[0]: v} for v in grid[keys[0]]]
    return [{keys[0]: a, keys[1]: b} for a in grid[keys[0]] for b in grid[keys[1]]]


def _run_sweep(s, model, workers):
    p = s.params
    base = copy.deepcopy(s.raw)
    base["task"] = p["task"]
    base["params"] = base.get("params", {}).get("params", {})
    points = _grid_points(p["grid"])

    def one(point):
        raw = copy.deepcopy(base)
        for k, v in point.items():
            _set_path(raw, k, v)
        sc = validate_scenario(raw)
        return execute(sc, workers=1)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, points))
    else:
        results = [one(pt) for pt in points]
    outputs = p["outputs"] or sorted(set().union(*(r.scalars for r in results)))
    header = list(p["grid"]) + outputs
    rows = [[pt[k] for k in p["grid"]] + [r.scalars.get(o, math.nan) for o in outputs]
            for pt, r in zip(points, results)]
    res = TaskResult()
    res.tables[""] = (header, rows)
    for i, r in enumerate(results):
        for k, v in r.converged.items():
            res.converged[f"{i}:{k}"] = v
        res.certificates.extend(r.certificates)
    return res


RUNNERS = {"evolve": _run_evolve, "steady": _run_steady, "trajectories": _run_trajectories,
           "darkstate": _run_darkstate, "fisher": _run_fisher, "adiabatic": _run_adiabatic,
           "sweep": _run_sweep}


def resolve_workers(threads=None):
    if threads is None:
        threads = int(os.environ.get("CHIRALSPIN_THREADS", "1") or 1)
    return max(1, int(threads))


def execute(scenario, workers=None):
    """Run the scenario's task in memory and return a TaskResult."""
    workers = resolve_workers(workers)
    model = netmodel.assemble_model(scenario.network)
    return RUNNERS[scenario.task](scenario, model, workers)


# ---------------------------------------------------------------- output

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def read_csv(path):
    """(header, float array) from a table written by ``write_csv``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def run_scenario(scenario, out_dir=".", workers=None, seed=None):
    """Execute and write ``<output>.csv`` (plus extra tables) and ``<output>.manifest.json``.

    Returns ``(manifest, exit_code)``; the code is 0 iff every convergence
    flag is set and no error occurred.
    """
    if seed is not None:
        scenario = with_overrides(scenario, seed=int(seed))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    manifest = {"schema": MANIFEST_SCHEMA, "library_version": __version__,
                "scenario": scenario.raw, "seed": scenario.seed, "task": scenario.task,
                "outputs": [], "converged": {}, "dark_certificates": [], "fisher": {},
                "results": {}, "error": None}
    try:
        res = execute(scenario, workers)
        for suffix, (header, rows) in res.tables.items():
            name = f"{scenario.output}.{suffix}.csv" if suffix else f"{scenario.output}.csv"
            write_csv(out_dir / name, header, rows)
            manifest["outputs"].append(name)
        manifest["converged"] = res.converged
        manifest["dark_certificates"] = res.certificates
        manifest["fisher"] = res.fisher
        manifest["results"] = {"final": res.scalars, **res.extra}
    except Exception as exc:  # recorded in the manifest, reflected in the exit code
        log.exception("scenario %s failed", scenario.name)
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc)}
    manifest["wall_time_s"] = time.perf_counter() - t0
    ok = manifest["error"] is None and all(manifest["converged"].values())
    manifest["ok"] = ok
    path = out_dir / f"{scenario.output}.manifest.json"
    path.write_text(json.dumps(_jsonable(manifest), indent=2) + "\n")
    return manifest, 0 if ok else 1


# ---------------------------------------------------------------- susceptibility fits

@dataclass(frozen=True)
class SusceptibilityFit:
    kind: str
    coefficient: float
    fit_window: tuple
    residual: float
    n_points: int


def fit_susceptibility(x, purity, kind):
    """Fit P = 1 - (1/2)(x/x0)^2 ("quadratic") or P = 1 - x/x0 ("linear").

    Uses the points with 1 - P < 0.05; needs at least five of them.
    """
    if kind not in ("quadratic", "linear"):
        raise ValueError(f"kind must be 'quadratic' or 'linear', got {kind!r}")
    x = np.asarray(x, dtype=float)
    y = 1.0 - np.asarray(purity, dtype=float)
    sel = y < FIT_WINDOW
    if sel.sum() < 5:
        raise ValueError(f"only {int(sel.sum())} points with 1-P < {FIT_WINDOW}; need >= 5")
    xs, ys = x[sel], y[sel]
    basis = xs**2 if kind == "quadratic" else xs
    c = float(basis @ ys / (basis @ basis))
    if not c > 0:
        raise ValueError("fitted purity loss is not positive")
    resid = float(np.sqrt(np.mean((ys - c * basis) ** 2)))
    coef = 1.0 / np.sqrt(2.0 * c) if kind == "quadratic" else 1.0 / c
    return SusceptibilityFit(kind, float(coef), (float(xs.min()), float(xs.max())), resid,
                             int(sel.sum()))

import copy
import json

import numpy as np
import pytest

from chiralspin import scenario as sc
from chiralspin.scenario import ScenarioError


def _minimal(**over):
    raw = {"schema": sc.SCHEMA, "name": "pair", "task": "evolve", "seed": 1,
           "network": {"n_spins": 2, "drive": {"rabi": 0.5, "detuning": [0.3, -0.3]},
                       "waveguides": [{"gamma_L": 0.5, "gamma_R": 1.0}]},
           "params": {"t_max": 20.0, "n_samples": 11, "probes": [[1, 2]]}}
    raw.update(over)
    return raw


def test_round_trip(tmp_path):
    s = sc.validate_scenario(_minimal())
    sc.save_scenario(s, tmp_path / "a.json")
    s2 = sc.load_scenario(tmp_path / "a.json")
    sc.save_scenario(s2, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()
    assert s2.network == s.network and s2.params == s.params


def test_wrong_detuning_length_names_field():
    raw = _minimal()
    raw["network"]["drive"]["detuning"] = [0.1, 0.2, 0.3]
    with pytest.raises(ScenarioError) as err:
        sc.validate_scenario(raw)
    assert err.value.path == "network.drive.detuning"


@pytest.mark.parametrize("where,key", [("", "colour"), ("network", "spins"),
                                       ("params", "tmax")])
def test_unknown_keys_rejected(where, key):
    raw = _minimal()
    target = raw if not where else raw[where]
    target[key] = 1
    with pytest.raises(ScenarioError, match=key):
        sc.validate_scenario(raw)


def test_missing_required_param():
    raw = _minimal(params={})
    with pytest.raises(ScenarioError) as err:
        sc.validate_scenario(raw)
    assert err.value.path == "params.t_max"


def test_bad_schema_and_json(tmp_path):
    with pytest.raises(ScenarioError):
        sc.validate_scenario(_minimal(schema="other/2"))
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": \n  oops}')
    with pytest.raises(ScenarioError, match="line 2"):
        sc.load_scenario(bad)


def test_symbols_offset_and_imbalance():
    raw = _minimal()
    raw["network"]["drive"] = {"rabi": 0.5, "detuning": ["a", "-a"], "symbols": {"a": 0.2},
                               "offset": 0.05, "rabi_imbalance": 0.1}
    net = sc.validate_scenario(raw).network
    assert net.drive.detuning == pytest.approx((0.25, -0.15))
    assert [r.real for r in net.drive.rabi] == pytest.approx([0.55, 0.45])
    raw["network"]["drive"]["detuning"] = ["b", "-a"]
    with pytest.raises(ScenarioError, match=r"detuning\[0\]"):
        sc.validate_scenario(raw)


def test_shipped_library_complete_and_valid():
    names = set(sc.shipped_scenarios())
    expected = {"fig2a", "fig2b", "fig2c", "fig2d", "fig4a", "fig4b", "fig5", "fig6c",
                "fig8a", "fig8b", "fig9", "fig10a", "fig10b", "fig11b", "fig11c",
                "fig12a", "fig12b", "fig13a", "fig13b", "fig13c"}
    expected |= {f"fig7{c}" for c in "abcdefghijkl"}
    assert expected <= names
    for name in names:
        sc.load_scenario(sc.shipped_scenario_path(name))


def test_fig2a_parameters():
    s = sc.load_scenario("fig2a")
    net = s.network
    assert net.n_spins == 8
    assert net.drive.detuning == (0.0,) * 8
    assert all(r == 0.5 for r in net.drive.rabi)
    assert net.waveguides[0].gamma_L == 0.1 and net.waveguides[0].gamma_R == 1.0


def test_assumed_fields_are_marked():
    for name in ("fig2c", "fig6c"):
        assert "assumed" in sc.load_scenario(name).comment


def test_run_writes_rfc4180_csv_and_manifest(tmp_path):
    s = sc.validate_scenario(_minimal())
    manifest, code = sc.run_scenario(s, tmp_path)
    assert code == 0 and manifest["ok"]
    raw = (tmp_path / "pair.csv").read_bytes()
    assert raw.split(b"\r\n")[0].split(b",")[0] == b"t"
    header, data = sc.read_csv(tmp_path / "pair.csv")
    assert header == ["t", "P", "n_1", "n_2", "flux", "P_12", "S_12"]
    assert data.shape == (11, 7)
    m = json.loads((tmp_path / "pair.manifest.json").read_text())
    assert m["schema"] == sc.MANIFEST_SCHEMA and m["scenario"] == s.raw and m["seed"] == 1
    # 17 significant digits
    assert float(raw.split(b"\r\n")[5].split(b",")[1]) == data[4, 1]


def test_same_seed_bit_identical_csv(tmp_path):
    raw = _minimal(task="trajectories", params={"n_traj": 5, "t_max": 10.0, "n_samples": 6,
                                                "probes": [[1, 2]]})
    s = sc.validate_scenario(raw)
    sc.run_scenario(s, tmp_path / "a")
    sc.run_scenario(s, tmp_path / "b")
    assert (tmp_path / "a" / "pair.csv").read_bytes() == (tmp_path / "b" / "pair.csv").read_bytes()
    sc.run_scenario(s, tmp_path / "c", seed=2)
    assert (tmp_path / "a" / "pair.csv").read_bytes() != (tmp_path / "c" / "pair.csv").read_bytes()


def test_rerun_from_manifest_echo(tmp_path):
    s = sc.validate_scenario(_minimal())
    m, _ = sc.run_scenario(s, tmp_path / "a")
    s2 = sc.validate_scenario(m["scenario"])
    sc.run_scenario(s2, tmp_path / "b")
    assert (tmp_path / "a" / "pair.csv").read_bytes() == (tmp_path / "b" / "pair.csv").read_bytes()


def test_module_error_goes_to_manifest(tmp_path):
    raw = _minimal(task="darkstate", params={})
    raw["network"]["drive"]["detuning"] = [0.1, 0.2]
    m, code = sc.run_scenario(sc.validate_scenario(raw), tmp_path)
    assert code == 1 and m["error"]["type"] == "NotDarkError"


def test_non_converged_gives_nonzero_exit(tmp_path):
    raw = _minimal(task="steady", params={"method": "integrate", "t_max": 1.0})
    m, code = sc.run_scenario(sc.validate_scenario(raw), tmp_path)
    assert code == 1 and m["converged"]["steady_state"] is False and m["error"] is None


def test_fig6c_manifest(tmp_path):
    m, code = sc.run_scenario(sc.load_scenario("fig6c"), tmp_path)
    assert code == 0
    assert m["dark_certificates"][0]["verdict"] is True
    pred = m["results"]["prediction"]
    eps = pred["reduction"]["epsilon"]
    a = 0.3
    assert pred["pattern"] == pytest.approx([a, eps / 2, -eps / 2, -a], abs=0)
    assert m["results"]["steady_fidelity"] > 1 - 1e-6


def test_fig5_null_space():
    res = sc.execute(sc.load_scenario("fig5"))
    assert res.extra["null_space_dim"] == 6
    assert res.extra["classification"]["conditions"]["III"]


def test_one_point_sweep_equals_single_run():
    raw = _minimal(task="sweep", params={"task": "steady", "params": {"probes": [[1]]},
                                         "grid": {"network.drive.offset": [0.0]}})
    swept = sc.execute(sc.validate_scenario(raw))
    single = sc.execute(sc.validate_scenario(_minimal(task="steady", params={"probes": [[1]]})))
    header, rows = swept.tables[""]
    assert header[0] == "network.drive.offset"
    assert dict(zip(header[1:], rows[0][1:])) == single.scalars


def test_sweep_rejects_non_scalar_grid():
    raw = _minimal(task="sweep", params={"task": "steady",
                                         "grid": {"network.drive.detuning": [[0.1, 0.2]]}})
    with pytest.raises(ScenarioError):
        sc.validate_scenario(raw)
    raw["params"]["grid"] = {"a": [1.0], "b": [1.0], "c": [1.0]}
    with pytest.raises(ScenarioError):
        sc.validate_scenario(raw)


def test_sweep_thread_count_invariant():
    raw = _minimal(task="sweep", params={"task": "steady",
                                         "grid": {"network.drive.offset": [-0.1, 0.0, 0.1]}})
    s = sc.validate_scenario(raw)
    assert sc.execute(s, 1).tables == sc.execute(s, 3).tables


def test_purity_symmetric_in_offset():
    raw = _minimal(task="sweep", params={"task": "steady", "outputs": ["P"],
                                         "grid": {"network.drive.offset": [-0.05, 0.05]}})
    rows = sc.execute(sc.validate_scenario(raw)).tables[""][1]
    assert abs(rows[0][1] - rows[1][1]) < 1e-9


def test_fig4a_purity_maximal_at_origin():
    header, rows = sc.execute(sc.load_scenario("fig4a")).tables[""]
    rows = np.array(rows)
    best = rows[np.argmax(rows[:, 2])]
    assert best[0] == 0 and best[1] == 0
    assert best[2] > 1 - 1e-6


def test_fig12b_contains_four_partite_witness():
    header, rows = sc.execute(sc.load_scenario("fig12b")).tables[""]
    fq = np.array(rows)[:, header.index("F_Q")]
    assert fq.max() > 10


def test_fit_recovers_synthetic_quadratic_and_linear():
    x = np.linspace(-0.05, 0.05, 11)
    f = sc.fit_susceptibility(x, 1 - 0.5 * (x / 0.3) ** 2, "quadratic")
    assert f.coefficient == pytest.approx(0.3, abs=1e-6) and f.residual < 1e-12
    g = np.linspace(0, 1e-3, 6)
    f = sc.fit_susceptibility(g, 1 - g / 0.02, "linear")
    assert f.coefficient == pytest.approx(0.02, abs=1e-9)


def test_fit_needs_five_points():
    x = np.linspace(-1, 1, 9)
    with pytest.raises(ValueError):
        sc.fit_susceptibility(x, 1 - 0.5 * (x / 0.1) ** 2, "quadratic")
    with pytest.raises(ValueError):
        sc.fit_susceptibility(x, x, "cubic")


def test_susceptibility_grows_with_size():
    def delta0(n):
        raw = _minimal(task="sweep", params={"task": "steady", "outputs": ["P"],
                                             "grid": {"network.drive.offset":
                                                      list(np.linspace(-0.02, 0.02, 9))}})
        raw["network"] = {"n_spins": n, "drive": {"rabi": 0.5, "detuning": 0.0},
                          "waveguides": [{"gamma_L": 0.3, "gamma_R": 1.0}]}
        rows = np.array(sc.execute(sc.validate_scenario(raw)).tables[""][1])
        return sc.fit_susceptibility(rows[:, 0], rows[:, 1], "quadratic").coefficient

    assert delta0(4) < delta0(2)


def test_with_overrides_revalidates():
    s = sc.validate_scenario(_minimal())
    t = sc.with_overrides(s, seed=9, **{"network.drive.rabi": 0.25})
    assert t.seed == 9 and t.network.drive.rabi[0] == 0.25
    with pytest.raises(ScenarioError):
        sc.with_overrides(s, **{"network.n_spins": 0})
    assert s.seed == 1


def test_resolve_workers_env(monkeypatch):
    monkeypatch.setenv("CHIRALSPIN_THREADS", "3")
    assert sc.resolve_workers() == 3
    assert sc.resolve_workers(2) == 2

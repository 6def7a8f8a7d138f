import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dengue2s import ParameterSet
from dengue2s.analysis import disease_free_equilibrium, two_strain_symmetric_equilibrium
from dengue2s.bifurcation import continue_equilibria
from dengue2s.integrate import SolverSettings, integrate
from dengue2s.io import (
    BRANCH_HEADER,
    EVENTS_HEADER,
    TRAJECTORY_HEADER,
    RunManifest,
    Scenario,
    ScenarioError,
    baseline_scenario,
    baseline_scenario_text,
    parse_scenario,
    read_csv,
    read_manifest,
    scenario_hash,
    serialize_scenario,
    write_branch_csv,
    write_trajectory_csv,
)
from dengue2s.workflows import bifurcation_diagram

from conftest import param_strategy, state_strategy


def edit(mutator):
    doc = json.loads(baseline_scenario_text())
    mutator(doc)
    return json.dumps(doc, indent=2)


# -- parsing ------------------------------------------------------------------------------

def test_baseline_parses_to_default_parameters():
    sc = baseline_scenario()
    assert sc.params == ParameterSet()
    assert sc.run_kind == "simulate"
    assert sc.initial_state.N == pytest.approx(10000.0)
    assert sc.initial_state.M == pytest.approx(1e5)
    assert list(sc.run_options["t_span"]) == [0, 600]


def test_missing_mu_is_named():
    with pytest.raises(ScenarioError) as info:
        parse_scenario(edit(lambda d: d["params"].pop("mu")))
    assert info.value.field == "params.mu"
    assert "mu" in str(info.value)


def test_negative_kappa_is_rejected_with_line():
    text = edit(lambda d: d["params"].update(kappa=-1.0))
    with pytest.raises(ScenarioError, match="nonnegative") as info:
        parse_scenario(text)
    assert info.value.field == "params.kappa"
    assert '"kappa"' in text.splitlines()[info.value.line - 1]


def test_unknown_keys_rejected():
    for mut, field in ((lambda d: d.update(extra=1), "extra"),
                       (lambda d: d["params"].update(zeta=1.0), "params.zeta"),
                       (lambda d: d["initial_state"].update(E=1.0), "initial_state.E"),
                       (lambda d: d["run_options"].update(colour="red"), "run_options.colour")):
        with pytest.raises(ScenarioError) as info:
            parse_scenario(edit(mut))
        assert info.value.field == field


def test_syntax_error_reports_line():
    text = baseline_scenario_text().replace('"kappa": 1.0,', '"kappa": 1.0,,')
    with pytest.raises(ScenarioError, match="JSON syntax") as info:
        parse_scenario(text.encode())
    assert "kappa" in text.splitlines()[info.value.line - 1]


def test_invalid_utf8():
    with pytest.raises(ScenarioError, match="UTF-8"):
        parse_scenario(b"\xff\xfe{}")


def test_run_kind_requirements():
    with pytest.raises(ScenarioError) as info:
        parse_scenario(edit(lambda d: d.update(run_kind="continue", run_options={"free_param": "alpha"})))
    assert info.value.field == "run_options.range"
    with pytest.raises(ScenarioError) as info:
        parse_scenario(edit(lambda d: d.update(run_kind="continue",
                                               run_options={"free_param": "mu", "range": [0, 1]})))
    assert info.value.field == "run_options.free_param"
    with pytest.raises(ScenarioError, match="smaller"):
        parse_scenario(edit(lambda d: d["run_options"].update(t_span=[600, 0])))
    with pytest.raises(ScenarioError, match="initial_state"):
        parse_scenario(edit(lambda d: d.pop("initial_state")))


def test_analysis_runs_need_no_state():
    sc = parse_scenario(edit(lambda d: (d.pop("initial_state"), d.update(run_kind="r0", run_options={}))))
    assert sc.initial_state is None


def test_negative_state_rejected():
    with pytest.raises(ScenarioError) as info:
        parse_scenario(edit(lambda d: d["initial_state"].update(V1=-1.0)))
    assert info.value.field == "initial_state.V1"


def test_bool_is_not_a_number():
    with pytest.raises(ScenarioError, match="number"):
        parse_scenario(edit(lambda d: d["params"].update(alpha=True)))


def test_overrides():
    sc = baseline_scenario().with_overrides({"alpha": 0.5, "I2": 0.0})
    assert sc.params.alpha == 0.5 and sc.initial_state.I2 == 0.0
    with pytest.raises(ScenarioError):
        baseline_scenario().with_overrides({"zeta": 1.0})
    with pytest.raises(ScenarioError):
        baseline_scenario().with_overrides({"mu": -1.0})


def test_for_kind_drops_foreign_options():
    sc = baseline_scenario().for_kind("continue", {"free_param": "alpha", "range": [0.1, 0.75]})
    assert "t_span" not in sc.run_options
    assert sc.run_options["free_param"] == "alpha"


# -- round trip and hashing ------------------------------------------------------------

run_kind_options = st.sampled_from([
    ("simulate", {"t_span": [0.0, 600.0], "rel_tol": 1e-9}),
    ("settle", {"t_max": 1e5}),
    ("r0", {}),
    ("bifcoeff", {"weights": {"w2": 2.0, "v3": 0.5}}),
    ("continue", {"free_param": "sigma", "range": [0.0, 2.0], "max_points": 300}),
    ("orbits", {"free_param": "alpha", "range": [0.1, 0.75], "intervals": 30}),
])


@given(param_strategy, state_strategy, run_kind_options, st.text(max_size=30))
@settings(max_examples=100, deadline=None)
def test_round_trip(params, state, kind_opts, description):
    kind, opts = kind_opts
    sc = Scenario(params, state, kind, opts, description)
    back = parse_scenario(serialize_scenario(sc))
    assert back == sc
    assert scenario_hash(back) == scenario_hash(sc)


def test_hash_changes_iff_content_changes():
    sc = baseline_scenario()
    assert scenario_hash(sc) == scenario_hash(parse_scenario(serialize_scenario(sc)))
    # key order in the document does not matter
    doc = json.loads(baseline_scenario_text())
    reordered = json.dumps(dict(reversed(list(doc.items()))))
    assert scenario_hash(parse_scenario(reordered)) == scenario_hash(sc)
    changed = {scenario_hash(sc.with_overrides({"alpha": 0.4})), scenario_hash(sc.with_overrides({"I1": 21.0})),
               scenario_hash(sc.for_kind("r0")), scenario_hash(sc)}
    assert len(changed) == 4


# -- CSV ----------------------------------------------------------------------------------

def test_trajectory_csv_columns(tmp_path, baseline):
    tr = integrate(baseline.initial_state, baseline.params, (0, 50), SolverSettings(dense_output_interval=1.0))
    path = write_trajectory_csv(tr, tmp_path / "traj.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TRAJECTORY_HEADER)
    assert len(lines) == 52
    cols = read_csv(path)
    np.testing.assert_array_equal(cols["t"], tr.times)
    np.testing.assert_array_equal(cols["S"], tr.states[:, 0])
    human = sum(cols[n] for n in TRAJECTORY_HEADER[1:11])
    vector = sum(cols[n] for n in TRAJECTORY_HEADER[11:15])
    np.testing.assert_allclose(cols["N"], human, rtol=1e-14)
    np.testing.assert_allclose(cols["M"], vector, rtol=1e-14)
    np.testing.assert_allclose(cols["I_tot"], cols["I1"] + cols["I2"] + cols["I12"] + cols["I21"], rtol=1e-14)
    np.testing.assert_allclose(cols["I_sec"], cols["I12"] + cols["I21"], rtol=1e-14)


def test_csv_keeps_full_precision(tmp_path, baseline):
    tr = integrate(baseline.initial_state, baseline.params, (0, 3.3))
    path = write_trajectory_csv(tr, tmp_path / "traj.csv")
    row = path.read_text().splitlines()[-1].split(",")
    assert float(row[0]) == tr.times[-1]
    assert max(len(v.replace(".", "").replace("-", "").split("e")[0].lstrip("0")) for v in row) >= 15


def test_dfe_trajectory_has_no_infection(tmp_path, params):
    x0 = disease_free_equilibrium(params).x
    tr = integrate(x0, params, (0, 100), SolverSettings(dense_output_interval=10.0))
    cols = read_csv(write_trajectory_csv(tr, tmp_path / "dfe.csv"))
    for name in ("I1", "I2", "I12", "I21", "I_tot", "I_sec", "V1", "V2", "V12"):
        assert np.all(cols[name] == 0.0)


def test_long_run_final_row_matches_equilibrium(tmp_path, baseline):
    # the slowest mode decays at about 2.4e-4 per month, hence the long run
    tr = integrate(baseline.initial_state, baseline.params, (0, 1e5), SolverSettings(dense_output_interval=100.0))
    cols = read_csv(write_trajectory_csv(tr, tmp_path / "long.csv"))
    eq = two_strain_symmetric_equilibrium(baseline.params).state
    assert cols["I_sec"][-1] == pytest.approx(eq.I12 + eq.I21, rel=1e-6)


def test_branch_csv(tmp_path, params):
    d = bifurcation_diagram(params, "alpha", (0.1, 0.75))
    br = d.branches["disease_free"]
    main, events = write_branch_csv(br, br.events, tmp_path / "dfe.csv")
    assert events.name == "dfe_events.csv"
    assert main.read_text().splitlines()[0] == ",".join(BRANCH_HEADER)
    cols = read_csv(main)
    assert np.all(cols["I_tot"] == 0.0)
    ev = read_csv(events)
    assert events.read_text().splitlines()[0] == ",".join(EVENTS_HEADER)
    assert list(ev["event_kind"]) == ["branch_point"]
    assert ev["param_value"][0] == pytest.approx(0.33355, abs=1e-3)

    two = d.branches["two_strain_symmetric"]
    main, events = write_branch_csv(two, two.events, tmp_path / "two.csv")
    cols, ev = read_csv(main), read_csv(events)
    assert list(ev["event_kind"]) == ["hopf"]
    k = int(np.flatnonzero(cols["param"] == ev["param_value"][0])[0])
    # stability flips exactly at the event row and matches the eigenvalues
    assert cols["stable"][k - 1] and not cols["stable"][k + 1]
    np.testing.assert_array_equal(cols["stable"], cols["max_real_eig"] < -1e-9)
    assert ev["imag_pair"][0] > 0


def test_empty_branch_rejected(tmp_path, params):
    br = continue_equilibria(disease_free_equilibrium(params), params, "alpha", (0.1, 0.75))
    br.points = []
    with pytest.raises(ValueError):
        write_branch_csv(br, [], tmp_path / "x.csv")


def test_filesystem_errors_propagate(tmp_path, baseline):
    tr = integrate(baseline.initial_state, baseline.params, (0, 1))
    with pytest.raises(OSError):
        write_trajectory_csv(tr, tmp_path / "missing" / "traj.csv")


# -- manifests ------------------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    sc = baseline_scenario()
    m = RunManifest.create(sc, "simulate", {"rel_tol": 1e-8}, {"alpha": "0.4"})
    d = m.run_directory(tmp_path)
    assert d.name == "simulate-" + scenario_hash(sc)[:12]
    d.mkdir()
    m.outputs.append("trajectory.csv")
    back = read_manifest(m.write(d))
    assert back == m
    assert back.scenario_hash == scenario_hash(sc)
    assert back.tool_version

import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contagion_clear import ScenarioError, parse_scenario, run_scenario, serialize_scenario
from contagion_clear.scenario import (
    TOL_ENV,
    Affine,
    Overrides,
    bundled_scenarios,
    parse_number,
    resolve_tolerance,
    scenario_from_dict,
    with_epsilon,
)

from conftest import EQ_HIGH

BASE = {
    "schema": "contagion-clear/1",
    "meta": {"name": "tiny"},
    "network": {"has_society": True, "nodes": [{"id": "a", "assets": 1}, {"id": "b", "assets": "1/2"}]},
    "liabilities": [{"from": "a", "to": "society", "amount": 2}, {"from": "b", "to": "a", "amount": 1}],
}


def tiny(**changes):
    data = copy.deepcopy(BASE)
    data.update(changes)
    return data


@pytest.mark.parametrize("text, expected", [
    (3, Affine(3.0)),
    ("3/16", Affine(0.1875)),
    ("eps", Affine(0.0, 1.0)),
    ("1 - eps", Affine(1.0, -1.0)),
    ("3/16 - eps", Affine(0.1875, -1.0)),
    ("-2*eps + 0.5", Affine(0.5, -2.0)),
    ("1/2 eps", Affine(0.0, 0.5)),
    ({"const": 1, "eps": -1}, Affine(1.0, -1.0)),
    ("1e-3", Affine(0.001)),
])
def test_number_forms(text, expected):
    assert parse_number(text, "f") == expected


@pytest.mark.parametrize("text", ["", "abc", "1/0", "2 3", "eps eps", "*eps", True, None, float("inf"), [1]])
def test_bad_numbers(text):
    with pytest.raises(ScenarioError):
        parse_number(text, "f")


def test_eps_forbidden_where_not_allowed():
    with pytest.raises(ScenarioError, match="eps is not allowed"):
        parse_number("eps", "f", allow_eps=False)


def test_affine_needs_epsilon():
    with pytest.raises(ValueError):
        Affine(1.0, 2.0).at(None)
    assert Affine(1.0, 2.0).at(0.25) == 1.5


def test_tiny_scenario_builds_network():
    scn = scenario_from_dict(tiny())
    assert scn.ids == ("society", "a", "b")
    net = scn.network()
    assert net.has_society and net.names == ("society", "a", "b")
    assert net.x.tolist() == [0, 1, 0.5]
    assert net.base_liabilities[1, 0] == 2 and net.base_liabilities[2, 1] == 1


@pytest.mark.parametrize("change, field", [
    (dict(schema="other/1"), "schema"),
    (dict(mode="turbo"), "mode"),
    (dict(liabilities=[{"from": "a", "to": "zz", "amount": 1}]), "liabilities[0].to"),
    (dict(liabilities=[{"from": "a", "to": "b"}]), "liabilities[0].amount"),
    (dict(liabilities=[{"from": "a", "to": "b", "amount": "x"}]), "liabilities[0].amount"),
    (dict(liabilities=[{"from": "a", "to": "b", "amount": 1, "time": -1}]), "liabilities[0].time"),
    (dict(contracts=[{"kind": "Swap", "writer": "a", "beneficiary": "b"}]), "contracts[0].kind"),
    (dict(contracts=[{"kind": "CDS", "writer": "a", "beneficiary": "b"}]), "contracts[0]"),
    (dict(solver={"direction": "up"}), "solver.direction"),
    (dict(solver={"tolerance": -1}), "solver.tolerance"),
    (dict(extra=1), None),
])
def test_errors_name_the_field(change, field):
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(tiny(**change))
    assert info.value.field == field


def test_invariant_violation_surfaces_at_load():
    data = tiny(liabilities=[{"from": "society", "to": "a", "amount": 1}])
    with pytest.raises(ScenarioError, match="society node society has liabilities"):
        scenario_from_dict(data)


def test_duplicate_ids_rejected():
    data = tiny(network={"nodes": [{"id": "a"}, {"id": "a"}]})
    with pytest.raises(ScenarioError, match="unique"):
        scenario_from_dict(data)


def test_json_error_reports_line():
    with pytest.raises(ScenarioError) as info:
        parse_scenario('{\n  "schema": "contagion-clear/1",\n  oops\n}')
    assert info.value.line == 3


def test_missing_file():
    with pytest.raises(ScenarioError, match="no scenario file"):
        parse_scenario("definitely_not_here.json")


def test_bundled_list():
    assert bundled_scenarios() == ["ex_3_8", "ex_4_7", "ex_4_8", "ex_4_9", "regular_society"]


def test_path_and_name_agree(tmp_path):
    path = tmp_path / "copy.json"
    path.write_text(serialize_scenario(parse_scenario("ex_4_7")))
    assert parse_scenario(path) == parse_scenario("ex_4_7")
    assert parse_scenario(str(path)) == parse_scenario("ex_4_7")


@pytest.mark.parametrize("name", ["ex_3_8", "ex_4_7", "ex_4_8", "ex_4_9", "regular_society"])
def test_bundled_round_trip(name):
    scn = parse_scenario(name)
    assert parse_scenario(serialize_scenario(scn)) == scn


amounts = st.one_of(st.integers(0, 50), st.fractions(0, 10, max_denominator=64).map(str))


@settings(max_examples=50, deadline=None)
@given(st.lists(amounts, min_size=2, max_size=5), st.lists(amounts, min_size=2, max_size=5),
       st.floats(1e-14, 1e-6))
def test_round_trip_random(assets, owed, tol):
    nodes = [{"id": f"n{k}", "assets": a} for k, a in enumerate(assets)]
    liabilities = [{"from": f"n{k % len(assets)}", "to": "society", "amount": a} for k, a in enumerate(owed)]
    data = {"schema": "contagion-clear/1", "network": {"has_society": True, "nodes": nodes},
            "liabilities": liabilities, "solver": {"tolerance": tol}}
    scn = scenario_from_dict(data)
    again = parse_scenario(serialize_scenario(scn))
    assert again == scn
    assert np.array_equal(again.network().base_liabilities, scn.network().base_liabilities)


def test_dynamic_spec_from_scenario():
    spec = parse_scenario("ex_4_7").dynamic_spec(0.25)
    assert spec.horizon == 1
    assert spec.cash_flows.tolist() == [[0.25, 0, 1], [0.75, 0, 1]]
    assert spec.base_liabilities[0, 0, 1] == 2 and not spec.base_liabilities[1].any()


def test_cash_flow_length_checked():
    data = json.loads(serialize_scenario(parse_scenario("ex_4_7")))
    data["dynamic"]["cash_flows"]["3"] = [1]
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(data)
    assert info.value.field == "dynamic.cash_flows.3"


def test_run_static_reports_audits():
    rep = run_scenario(parse_scenario("ex_3_8"))
    assert rep.status == "solved" and rep.exit_code == 0
    assert np.allclose([rep.result["wealth"][k] for k in ("1", "2", "3")], EQ_HIGH)
    assert rep.audits["conservation"]["ok"] and rep.audits["residual"] <= 1e-10


def test_run_nonexistent_exit_code():
    rep = run_scenario(parse_scenario("ex_4_7"))
    assert rep.status == "nonexistent" and rep.exit_code == 2
    assert rep.result["diagnosis"]["verdict"] == "nonexistent"
    assert rep.rows == ()


def test_run_dynamic_with_overrides():
    rep = run_scenario(parse_scenario("ex_4_7"), Overrides(mode="dynamic", epsilon=0.75))
    assert rep.status == "solved"
    assert rep.result["terminal"] == pytest.approx({"1": 0, "2": 0.5, "3": 2.5})
    assert rep.solver["epsilon"] == 0.75


def test_run_is_deterministic():
    a = run_scenario(parse_scenario("ex_4_8"))
    b = run_scenario(parse_scenario("ex_4_8"))
    assert a.to_json(timings=False) == b.to_json(timings=False)
    assert "timings" in json.loads(a.to_json())


def test_csv_export():
    rep = run_scenario(parse_scenario("ex_4_8"))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "time,node,wealth,payment"
    assert len(lines) == 1 + 2 * 3
    t, node, wealth, payment = lines[-1].split(",")
    assert (t, node) == ("1", "3") and float(wealth) == 0.0


def test_with_epsilon():
    scn = with_epsilon(parse_scenario("ex_4_8"), 0.01)
    rep = run_scenario(scn)
    assert rep.result["times"][0]["wealth"]["2"] == pytest.approx(0.01)


def test_tolerance_precedence(monkeypatch):
    monkeypatch.delenv(TOL_ENV, raising=False)
    assert resolve_tolerance() == 1e-10
    monkeypatch.setenv(TOL_ENV, "1e-7")
    assert resolve_tolerance() == 1e-7
    assert resolve_tolerance(file=1e-8) == 1e-8
    assert resolve_tolerance(cli=1e-9, file=1e-8) == 1e-9
    rep = run_scenario(parse_scenario("ex_3_8"))
    assert rep.solver["tolerance"] == 1e-7


@pytest.mark.parametrize("value", ["abc", "-1"])
def test_bad_tolerance_env(monkeypatch, value):
    monkeypatch.setenv(TOL_ENV, value)
    with pytest.raises(ValueError):
        resolve_tolerance()

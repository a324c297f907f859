import numpy as np
import pytest

from contagion_clear import (
    InvalidInputError,
    clear_dynamic,
    clear_static,
    compare_static_dynamic,
    conservation_audit,
    sensitivity_in_assets,
    static_to_dynamic,
)
from contagion_clear.analysis import OUT_OF_SCOPE

from conftest import EQ_HIGH, EQ_LOW, cds_dynamic
from fuzz import insured_network, regular_network


def test_ramp_on_regular_network_is_monotone():
    net = regular_network(np.random.default_rng(9), n=4)
    d = np.r_[0, np.ones(4)]
    rep = sensitivity_in_assets(net, d, steps=11, scale=2.0)
    assert rep.in_scope and rep.banner is None
    assert rep.monotone and rep.max_violation <= 1e-8
    assert rep.continuous and rep.failure_index is None
    assert rep.wealths.shape == (11, 5)
    assert np.allclose(rep.perturbed_x, net.x + 2 * d)


def test_ramp_on_speculative_system_is_flagged(cds_net):
    rep = sensitivity_in_assets(cds_net, [0, 1, 0], steps=5, scale=0.1)
    assert not rep.in_scope and rep.banner == OUT_OF_SCOPE


def test_ramp_stops_at_clearing_failure(digital_net):
    rep = sensitivity_in_assets(digital_net, [1, 0, 0], steps=3, scale=0.1, max_iter=200)
    assert rep.failure_index == 0 and rep.wealths.shape == (0, 3)


@pytest.mark.parametrize("bad", [dict(direction=[1, 0]), dict(direction=[-1, 0, 0]), dict(steps=1)])
def test_ramp_input_checks(cds_net, bad):
    args = dict(direction=[1, 0, 0], steps=5) | bad
    with pytest.raises(InvalidInputError):
        sensitivity_in_assets(cds_net, args["direction"], args["steps"])


def test_static_audit_on_both_equilibria(cds_net):
    for V in (EQ_HIGH, EQ_LOW):
        audit = conservation_audit(cds_net, V)
        assert audit.ok and audit.gap <= 1e-12 and audit.kind == "static"


def test_static_audit_accepts_results(cds_net):
    audit = conservation_audit(cds_net, clear_static(cds_net))
    assert audit.to_dict()["ok"]


def test_static_audit_catches_non_fixed_point(cds_net):
    assert not conservation_audit(cds_net, np.array([1.0, 1.0, 1.0])).ok


def test_dynamic_audit():
    audit = conservation_audit(clear_dynamic(cds_dynamic(0.05)))
    assert audit.kind == "dynamic"
    assert audit.lhs == pytest.approx(3 / 16) and audit.ok


def test_audit_needs_wealth(cds_net):
    with pytest.raises(InvalidInputError):
        conservation_audit(cds_net)
    with pytest.raises(InvalidInputError):
        conservation_audit("nonsense", np.zeros(3))


def test_static_to_dynamic_layout(cds_net):
    spec = static_to_dynamic(cds_net, [0, 0.1, 0])
    assert spec.horizon == 1
    assert np.allclose(spec.cash_flows, [[0, 0.1, 0], [0, 3 / 16 - 0.1, 0]])
    assert not spec.base_liabilities[1].any()
    assert all(c.active_times == (1,) for c in spec.contracts)


def test_static_to_dynamic_rejects_excess(cds_net):
    with pytest.raises(InvalidInputError):
        static_to_dynamic(cds_net, [0, 1.0, 0])


def test_comparison_cds_matches_greatest(cds_net):
    rep = compare_static_dynamic(cds_net, [0, 0.05, 0])
    assert rep.static_status == "solved"
    assert set(rep.static_solutions) == {"greatest", "least"}
    assert rep.match == "greatest" and rep.coincide
    assert rep.flags == ("matches static greatest solution",)


def test_comparison_digital_matches_branch(digital_net):
    rep = compare_static_dynamic(digital_net, [0.5, 0, 1])
    assert rep.static_status == "nonexistent"
    assert not rep.coincide
    assert rep.match == "branch (2 insolvent)"
    assert "static system has no clearing wealths" in rep.flags
    assert np.allclose(rep.dynamic_terminal, [0, 0.5, 2.5])
    assert rep.to_dict(digital_net.names)["branch_proposals"]["branch (2 solvent)"] == {"1": -1.0, "2": -0.5, "3": 3.0}


def test_comparison_on_insured_network():
    net = insured_network(np.random.default_rng(21))
    rep = compare_static_dynamic(net)
    assert rep.static_status == "solved"
    assert rep.flags

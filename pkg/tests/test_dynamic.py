import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contagion_clear import (
    ContingentContract,
    DynamicSpec,
    InvalidInputError,
    RemovalPolicy,
    clear_dynamic,
    clear_step,
    default_set_update,
    dynamic_conservation,
    dynamic_totals,
    net_cash_flow,
    relative_exposure,
    validate_dynamic,
)
from contagion_clear.network import positive_part

from conftest import cds_dynamic, digital_dynamic, self_insured_dynamic, two_period
from fuzz import dynamic_spec


def test_digital_totals_and_cash_flow():
    spec = digital_dynamic(0.5)
    pbar, pi = dynamic_totals(spec, 0, [])
    assert pbar.tolist() == [2, 1.5, 0]
    assert pi[0].tolist() == [0, 1, 0]
    assert net_cash_flow(spec, 0, []).tolist() == [-1.5, 0.5, 2.5]
    step0 = clear_step(spec, 0, [])
    assert np.allclose(step0.V, [-1.5, -1.0, 1.5])
    pbar, pi = dynamic_totals(spec, 1, [step0])
    # rolled debt plus the digital payout triggered by node 2's time-0 shortfall
    assert np.allclose(pbar, [1.5, 1.0, 1.0])
    assert pi[2].tolist() == [1, 0, 0]


def test_digital_net_cash_flow_at_time_zero():
    for eps in (0, 0.5, 1):
        c = net_cash_flow(digital_dynamic(eps), 0, [])
        assert np.allclose(c, [eps - 2, 0.5, 2.5])


def test_digital_dynamic_totals_at_time_one():
    for eps in (0.0, 0.25, 1.0):
        state = clear_dynamic(digital_dynamic(eps))
        assert np.allclose(state.steps[1].pbar, [2 - eps, 1.5 - eps, 1])


@pytest.mark.parametrize("eps", [0.0, 0.1, 3 / 16])
def test_cds_dynamic_rolls_nothing(eps):
    state = clear_dynamic(cds_dynamic(eps))
    assert state.steps[0].V.tolist() == pytest.approx([0, eps, 0])
    assert state.steps[1].roll.tolist() == [0, 0, 0]


def test_self_insurance_dynamic_grid():
    for eps in np.linspace(0, 1, 11):
        W = clear_dynamic(self_insured_dynamic(eps)).wealth
        assert np.allclose(W[1], [1 - eps, 0.5, 1.5 + eps], atol=1e-10)


def test_steps_record_residuals():
    state = clear_dynamic(digital_dynamic(0.3))
    assert state.max_residual <= 1e-12
    assert all(s.residual_exposure <= 1e-12 for s in state.steps)
    assert state.to_dict()["removal_policy"] == "RollForwardOnly"


def test_exposure_rescales_defaulted_rows():
    spec = digital_dynamic(0.0)
    step0 = clear_step(spec, 0, [])
    A = relative_exposure(spec, 0, [], step0.V)
    assert np.array_equal(A, step0.A)
    # node 1 pays nothing, so its whole shortfall lands on node 2
    assert A[0].tolist() == [0, 1, 0]


def test_history_must_be_complete():
    spec = digital_dynamic(0.5)
    with pytest.raises(InvalidInputError):
        clear_step(spec, 1, [])
    with pytest.raises(InvalidInputError):
        clear_step(spec, 2, [])


def test_removal_policy_drops_defaulters():
    spec = digital_dynamic(0.5).with_policy("RemoveOnDefault")
    state = clear_dynamic(spec)
    assert state.steps[1].active == frozenset({2})
    assert default_set_update(spec, 1, state.steps[:1]) == frozenset({2})
    # rolled debts of removed firms are extinguished
    assert state.steps[1].roll.tolist() == [0, 0, 0]
    assert state.steps[1].residual_exposure is None
    assert state.to_dict()["times"][1]["active"] == ["3"]


def test_roll_forward_keeps_everyone():
    spec = digital_dynamic(0.5)
    state = clear_dynamic(spec)
    assert state.steps[1].active == frozenset(range(3))


def test_negative_initial_wealth_rejected():
    spec = DynamicSpec(np.zeros((1, 2)), np.zeros((1, 2, 2)), initial_wealth=[-1, 0])
    assert "initial wealths must be nonnegative: every firm starts solvent" in validate_dynamic(spec)
    with pytest.raises(InvalidInputError):
        clear_dynamic(spec)


def test_shape_mismatch_rejected():
    with pytest.raises(InvalidInputError):
        DynamicSpec(np.zeros((2, 3)), np.zeros((1, 3, 3)))


def test_society_debts_reported():
    L = np.zeros((1, 2, 2))
    L[0, 0, 1] = 1
    spec = DynamicSpec(np.zeros((1, 2)), L, has_society=True)
    assert validate_dynamic(spec) == ["society node 0 has liabilities at time 0"]


def test_assumption_warnings_without_society():
    state = clear_dynamic(digital_dynamic(0.5))
    assert not state.assumptions_hold
    assert "t=0: node 1 owes nothing to society" in state.assumptions


def test_contract_window_respected():
    L0 = np.zeros((3, 3))
    L0[1, 2] = L0[2, 1] = 1.0
    late = two_period([0, 0, 0], [0, 0, 0], L0, [ContingentContract("CDS", 1, 0, 2, active_times=(0,))])
    state = clear_dynamic(late)
    assert state.steps[1].L[1, 0] == 0


def _payment_oracle(step, carried, x, tol=1e-14):
    p = step.pbar.copy()
    for _ in range(100_000):
        nxt = np.minimum(step.pbar, np.maximum(carried + x + step.pi.T @ p, 0.0))
        if np.max(np.abs(nxt - p)) <= tol:
            return nxt
        p = nxt
    return p


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_steps_match_payment_iteration(seed):
    spec = dynamic_spec(np.random.default_rng(seed))
    state = clear_dynamic(spec)
    prev = spec.initial_wealth
    for step in state.steps:
        p = _payment_oracle(step, positive_part(prev), spec.cash_flows[step.t])
        assert np.max(np.abs(p - step.p)) <= 1e-9
        assert step.residual_fixed_point <= 1e-9
        assert step.residual_exposure <= 1e-9
        assert step.rounds <= spec.n
        prev = step.V


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(list(RemovalPolicy)))
def test_conservation_and_monotone_defaults(seed, policy):
    spec = dynamic_spec(np.random.default_rng(seed)).with_policy(policy)
    state = clear_dynamic(spec)
    lhs, rhs = dynamic_conservation(state)
    if policy is RemovalPolicy.ROLL_FORWARD_ONLY:
        assert abs(lhs - rhs) <= 1e-8
    else:
        # extinguished debts can only add equity
        assert lhs >= rhs - 1e-8
    removed = [frozenset(range(spec.size)) - s.active for s in state.steps]
    assert all(a <= b for a, b in zip(removed, removed[1:]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_relabelling_nodes_permutes_the_answer(seed):
    rng = np.random.default_rng(seed)
    spec = dynamic_spec(rng)
    perm = np.concatenate([[0], 1 + rng.permutation(spec.n)])
    inv = np.argsort(perm)
    moved = [ContingentContract(c.kind, inv[c.writer], inv[c.beneficiary], inv[c.reference], c.eta, c.tau,
                                c.notional, c.active_times) for c in spec.contracts]
    other = DynamicSpec(spec.cash_flows[:, perm], spec.base_liabilities[:, perm][:, :, perm], moved,
                        has_society=True, initial_wealth=spec.initial_wealth[perm])
    a, b = clear_dynamic(spec), clear_dynamic(other)
    assert np.max(np.abs(a.wealth[:, perm] - b.wealth)) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_rounds_bounded_per_clearing_time(seed):
    spec = dynamic_spec(np.random.default_rng(seed))
    state = clear_dynamic(spec)
    # one fictitious-default solve per clearing time 0..T, each at most n rounds
    assert all(s.rounds <= spec.n for s in state.steps)
    assert state.total_rounds <= spec.n * (spec.horizon + 1)

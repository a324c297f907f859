"""Multi-period clearing with debt roll-forward.

Obligations due at time ``t`` are the scheduled base obligations plus the
contingent payoffs triggered by the wealths of ``t - 1``.  Unpaid debts roll
into the next period with the creditor shares they had.  Each period is an
ordinary clearing problem with a fixed relative-liability matrix, solved by
fictitious default with one dense linear solve per round.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .contracts import ContingentContract, LiabilitySpec, check_insurance_tree
from .errors import InvalidInputError, NumericalFailure
from .network import default_names, negative_part, positive_part, relative_from_totals

COND_LIMIT = 1e12


class RemovalPolicy(str, enum.Enum):
    ROLL_FORWARD_ONLY = "RollForwardOnly"
    REMOVE_ON_DEFAULT = "RemoveOnDefault"


@dataclass(frozen=True)
class DynamicSpec:
    """Cash flows ``x[t]`` and base obligations ``base[t]`` over times ``0..T``.

    Contracts pay at ``t`` according to the wealths of ``t - 1``.
    ``initial_wealth`` is ``V(-1)`` and must be nonnegative.
    """

    cash_flows: np.ndarray
    base_liabilities: np.ndarray
    contracts: tuple[ContingentContract, ...] = ()
    has_society: bool = False
    names: tuple[str, ...] = ()
    removal_policy: RemovalPolicy = RemovalPolicy.ROLL_FORWARD_ONLY
    initial_wealth: np.ndarray | None = None

    def __post_init__(self):
        x = np.array(self.cash_flows, dtype=float)
        if x.ndim != 2:
            raise InvalidInputError("cash flows must be a (T+1, nodes) array")
        L = np.array(self.base_liabilities, dtype=float)
        if L.shape != (x.shape[0], x.shape[1], x.shape[1]):
            raise InvalidInputError(f"base liabilities of shape {L.shape} do not match cash flows {x.shape}")
        v0 = np.zeros(x.shape[1]) if self.initial_wealth is None else np.array(self.initial_wealth, dtype=float)
        if v0.shape != (x.shape[1],):
            raise InvalidInputError("initial wealth must have one entry per node")
        for arr in (x, L, v0):
            arr.setflags(write=False)
        object.__setattr__(self, "cash_flows", x)
        object.__setattr__(self, "base_liabilities", L)
        object.__setattr__(self, "initial_wealth", v0)
        object.__setattr__(self, "contracts", tuple(sorted(self.contracts, key=ContingentContract.sort_key)))
        object.__setattr__(self, "removal_policy", RemovalPolicy(self.removal_policy))
        names = tuple(self.names) or default_names(x.shape[1], self.has_society)
        if len(names) != x.shape[1] or len(set(names)) != len(names):
            raise InvalidInputError("node names must be unique, one per node")
        object.__setattr__(self, "names", names)

    @property
    def horizon(self) -> int:
        """Terminal time ``T``."""
        return self.cash_flows.shape[0] - 1

    @property
    def times(self) -> range:
        return range(self.horizon + 1)

    @property
    def size(self) -> int:
        return self.cash_flows.shape[1]

    @property
    def n(self) -> int:
        return self.size - int(self.has_society)

    @property
    def banks(self) -> np.ndarray:
        return np.arange(int(self.has_society), self.size)

    def with_policy(self, policy) -> DynamicSpec:
        return DynamicSpec(self.cash_flows, self.base_liabilities, self.contracts, self.has_society,
                           self.names, RemovalPolicy(policy), self.initial_wealth)


def validate_dynamic(spec: DynamicSpec) -> list[str]:
    out = []
    x, L, label = spec.cash_flows, spec.base_liabilities, spec.names
    if not np.isfinite(x).all() or (x < 0).any():
        out.append("cash flows must be finite and nonnegative")
    if not np.isfinite(L).all() or (L < 0).any():
        out.append("base liabilities must be finite and nonnegative")
    for t in spec.times:
        if np.diagonal(L[t]).any():
            i = int(np.flatnonzero(np.diagonal(L[t]))[0])
            out.append(f"nonzero diagonal at node {label[i]} at time {t}")
        if spec.has_society and L[t, 0].any():
            out.append(f"society node {label[0]} has liabilities at time {t}")
    v0 = spec.initial_wealth
    if not np.isfinite(v0).all() or (v0 < 0).any():
        out.append("initial wealths must be nonnegative: every firm starts solvent")
    society = 0 if spec.has_society else None
    for c in spec.contracts:
        out.extend(c.problems(spec.size, society))
    if not out:
        tree = check_insurance_tree(LiabilitySpec(np.zeros((spec.size, spec.size)), spec.contracts))
        if not tree.ok:
            out.append(f"cyclic insurance for beneficiary {label[tree.beneficiary]}")
    return out


@dataclass(frozen=True)
class DynamicStep:
    """Everything computed at one clearing time."""

    t: int
    L: np.ndarray
    pbar: np.ndarray
    pi: np.ndarray
    roll: np.ndarray
    c: np.ndarray
    A: np.ndarray
    V: np.ndarray
    p: np.ndarray
    active: frozenset[int]
    rounds: int
    default_sets: tuple[frozenset[int], ...]
    residual_fixed_point: float
    residual_exposure: float | None


@dataclass(frozen=True)
class DynamicState:
    spec: DynamicSpec
    steps: tuple[DynamicStep, ...]
    assumptions: tuple[str, ...] = field(default=())

    @property
    def wealth(self) -> np.ndarray:
        """Wealth path, one row per time."""
        return np.array([s.V for s in self.steps])

    @property
    def payments(self) -> np.ndarray:
        return np.array([s.p for s in self.steps])

    @property
    def terminal(self) -> np.ndarray:
        return self.steps[-1].V

    @property
    def total_rounds(self) -> int:
        return sum(s.rounds for s in self.steps)

    @property
    def max_residual(self) -> float:
        return max(s.residual_fixed_point for s in self.steps)

    @property
    def assumptions_hold(self) -> bool:
        return not self.assumptions

    def to_dict(self) -> dict:
        names = self.spec.names
        return {
            "times": [
                {
                    "t": s.t,
                    "wealth": dict(zip(names, map(float, s.V))),
                    "payments": dict(zip(names, map(float, s.p))),
                    "total_liabilities": dict(zip(names, map(float, s.pbar))),
                    "net_cash_flow": dict(zip(names, map(float, s.c))),
                    "active": [names[i] for i in sorted(s.active)],
                    "rounds": s.rounds,
                    "residual": s.residual_fixed_point,
                    "exposure_residual": s.residual_exposure,
                }
                for s in self.steps
            ],
            "terminal": dict(zip(names, map(float, self.terminal))),
            "total_rounds": self.total_rounds,
            "removal_policy": self.spec.removal_policy.value,
            "assumption_warnings": list(self.assumptions),
        }


def _check_history(spec: DynamicSpec, t: int, history) -> None:
    if t not in spec.times:
        raise InvalidInputError(f"time {t} outside 0..{spec.horizon}")
    if len(history) != t:
        raise InvalidInputError(f"clearing time {t} needs the history of times 0..{t - 1}, got {len(history)} steps")


def _previous(spec: DynamicSpec, history):
    """Wealths, relative liabilities, exposures and obligations of ``t - 1``."""
    if history:
        last = history[-1]
        return last.V, last.pi, last.A, last.L
    size = spec.size
    zero = np.zeros((size, size))
    # nothing owed before time 0: zero-liability convention, no roll
    conv = relative_from_totals(zero, np.zeros(size))
    return spec.initial_wealth, conv, conv, zero


def default_set_update(spec: DynamicSpec, t: int, history, policy=None) -> frozenset[int]:
    """Firms still paying at ``t``; removed firms never come back."""
    _check_history(spec, t, history)
    policy = RemovalPolicy(policy or spec.removal_policy)
    everyone = frozenset(range(spec.size))
    if t == 0 or policy is RemovalPolicy.ROLL_FORWARD_ONLY:
        return everyone
    last = history[-1]
    return frozenset(i for i in last.active if last.V[i] >= 0)


def _obligations(spec: DynamicSpec, t: int, history, active) -> np.ndarray:
    prev_V, _, _, prev_L = _previous(spec, history)
    contingent = LiabilitySpec(spec.base_liabilities[t], spec.contracts)
    L = contingent.evaluate(prev_V, time=t, reference=prev_L)
    gone = np.setdiff1d(np.arange(spec.size), sorted(active))
    L[gone, :] = 0.0
    L[:, gone] = 0.0
    return L


def _totals(spec, t, history, active, L):
    prev_V, prev_pi, _, _ = _previous(spec, history)
    mask = np.zeros(spec.size)
    mask[sorted(active)] = 1.0
    # removed firms' unpaid debts are extinguished rather than rolled
    roll = negative_part(prev_V) * mask
    pbar = L.sum(axis=1) + roll
    pi = relative_from_totals(L + prev_pi * roll[:, None], pbar)
    return pbar, pi, roll


def dynamic_totals(spec: DynamicSpec, t: int, history) -> tuple[np.ndarray, np.ndarray]:
    """Total obligations (new plus rolled) and their relative shares at ``t``."""
    active = default_set_update(spec, t, history)
    L = _obligations(spec, t, history, active)
    pbar, pi, _ = _totals(spec, t, history, active, L)
    return pbar, pi


def net_cash_flow(spec: DynamicSpec, t: int, history) -> np.ndarray:
    """Book capital change ``x(t) + L^T 1 - L 1`` assuming everyone pays in full."""
    active = default_set_update(spec, t, history)
    L = _obligations(spec, t, history, active)
    return spec.cash_flows[t] + L.sum(axis=0) - L.sum(axis=1)


def _exposure(L, pbar, pi, V, active, prev_A, prev_V):
    shortfall = negative_part(V)
    prev_short = negative_part(prev_V)
    A = np.zeros_like(pi)
    for i in range(pi.shape[0]):
        if i in active and pbar[i] >= shortfall[i]:
            A[i] = pi[i]
        elif shortfall[i] > 0:
            A[i] = (L[i] + prev_A[i] * prev_short[i]) / shortfall[i]
    return A


def relative_exposure(spec: DynamicSpec, t: int, history, V) -> np.ndarray:
    """Exposure of each creditor to each debtor's realised shortfall at ``t``."""
    active = default_set_update(spec, t, history)
    L = _obligations(spec, t, history, active)
    pbar, pi, _ = _totals(spec, t, history, active, L)
    prev_V, _, prev_A, _ = _previous(spec, history)
    return _exposure(L, pbar, pi, np.asarray(V, dtype=float), active, prev_A, prev_V)


def clear_step(spec: DynamicSpec, t: int, history) -> DynamicStep:
    """Clear time ``t`` given the completed steps ``0..t-1``.

    Starts from the wealths under full payment and grows the set of
    illiquid active firms; each round solves ``(I - Pi^T Lambda) V = b``.
    """
    active = default_set_update(spec, t, history)
    L = _obligations(spec, t, history, active)
    pbar, pi, roll = _totals(spec, t, history, active, L)
    prev_V, _, prev_A, _ = _previous(spec, history)
    size = spec.size
    act = np.zeros(size)
    act[sorted(active)] = 1.0
    x = spec.cash_flows[t]
    carried = positive_part(prev_V)
    b = carried + x + pi.T @ (act * pbar) - pbar

    V = b
    previous: frozenset[int] = frozenset()
    sets = []
    while True:
        current = frozenset(i for i in active if V[i] < 0)
        if current == previous:
            break
        if len(sets) >= spec.n:
            raise NumericalFailure(f"illiquid set still changing after {spec.n} rounds at time {t}",
                                   t=t, defaults=sorted(current))
        sets.append(current)
        lam = np.zeros(size)
        lam[sorted(current)] = 1.0
        system = np.eye(size) - pi.T * lam[None, :]
        if np.linalg.cond(system) > COND_LIMIT:
            raise NumericalFailure(f"singular clearing system at time {t}", t=t, defaults=sorted(current))
        V = np.linalg.solve(system, b)
        previous = current

    p = act * np.maximum(pbar - negative_part(V), 0.0)
    fixed = carried + x + pi.T @ p - pbar
    res7 = float(np.max(np.abs(fixed - V), initial=0.0))
    A = _exposure(L, pbar, pi, V, active, prev_A, prev_V)
    res9 = None
    if spec.removal_policy is RemovalPolicy.ROLL_FORWARD_ONLY:
        c = x + L.sum(axis=0) - L.sum(axis=1)
        rhs = prev_V + c - A.T @ negative_part(V) + prev_A.T @ negative_part(prev_V)
        res9 = float(np.max(np.abs(rhs - V), initial=0.0))
    for arr in (L, pbar, pi, roll, A, V, p):
        arr.setflags(write=False)
    c = x + L.sum(axis=0) - L.sum(axis=1)
    c.setflags(write=False)
    return DynamicStep(t, L, pbar, pi, roll, c, A, V, p, active, len(sets), tuple(sets), res7, res9)


def assumption_report(spec: DynamicSpec, steps) -> tuple[str, ...]:
    """Conditions for the uniqueness guarantee that fail along the realised path.

    Checked, not enforced: several textbook examples run without a society
    node and still clear uniquely.
    """
    out = []
    label = spec.names
    for s in steps:
        x = spec.cash_flows[s.t]
        for i in spec.banks:
            owed_to_society = s.L[i, 0] if spec.has_society else 0.0
            if not x[i] + owed_to_society > 0:
                out.append(f"t={s.t}: node {label[i]} has no external cash flow and owes nothing to society")
            if not spec.has_society or not s.L[i, 0] > 0:
                out.append(f"t={s.t}: node {label[i]} owes nothing to society")
    return tuple(out)


def clear_dynamic(spec: DynamicSpec) -> DynamicState:
    """Clear every time in order."""
    problems = validate_dynamic(spec)
    if problems:
        raise InvalidInputError("invalid dynamic specification: " + "; ".join(problems))
    steps: list[DynamicStep] = []
    for t in spec.times:
        try:
            steps.append(clear_step(spec, t, steps))
        except NumericalFailure as exc:
            exc.context.setdefault("t", t)
            raise
    return DynamicState(spec, tuple(steps), assumption_report(spec, steps))


def dynamic_conservation(state: DynamicState) -> tuple[float, float]:
    """Terminal positive equity versus initial equity plus all cash injected."""
    spec = state.spec
    lhs = float(positive_part(state.terminal).sum())
    rhs = float(positive_part(spec.initial_wealth).sum() + spec.cash_flows.sum())
    return lhs, rhs



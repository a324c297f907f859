"""Wealth-contingent obligations.

A :class:`LiabilitySpec` is a constant base matrix plus a list of typed
contracts.  Evaluating it at a wealth vector ``V`` yields the nominal
liabilities ``L(V)``.  Every built-in payoff reads wealths only through their
negative parts, so ``L(V) == L(-V^-)`` holds for every spec built here.
"""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter
from typing import Iterable

import numpy as np

from .errors import InvalidInputError, StructuralError


class ContractKind(str, enum.Enum):
    INSURANCE = "Insurance"
    THRESHOLD_INSURANCE = "ThresholdInsurance"
    CDS = "CDS"
    DIGITAL_CDS = "DigitalCDS"
    SELF_INSURANCE = "SelfInsurance"
    STABILITY_FUND_CLAIM = "StabilityFundClaim"


INSURANCE_KINDS = frozenset({ContractKind.INSURANCE, ContractKind.THRESHOLD_INSURANCE})
# the beneficiary is also the reference entity
SELF_KINDS = frozenset({ContractKind.SELF_INSURANCE, ContractKind.STABILITY_FUND_CLAIM})


@dataclass(frozen=True)
class ContingentContract:
    """One contingent obligation from ``writer`` to ``beneficiary``.

    ``reference`` is the node whose distress triggers payment.  ``eta`` is the
    coverage coefficient, ``tau`` the threshold of a threshold insurance and
    ``notional`` the fixed payout of a digital CDS.  ``active_times`` restricts
    the contract to some clearing dates in the dynamic model (``None`` means
    every date); the static model ignores it.
    """

    kind: ContractKind
    writer: int
    beneficiary: int
    reference: int | None = None
    eta: float = 1.0
    tau: float = 0.0
    notional: float = 0.0
    active_times: tuple[int, ...] | None = None

    def __post_init__(self):
        try:
            kind = ContractKind(self.kind)
        except ValueError:
            raise InvalidInputError(f"unknown contract kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        if self.reference is None:
            if kind not in SELF_KINDS:
                raise InvalidInputError(f"{kind.value} contract needs a reference node")
            object.__setattr__(self, "reference", self.beneficiary)
        for name in ("writer", "beneficiary", "reference"):
            object.__setattr__(self, name, int(getattr(self, name)))
        for name in ("eta", "tau", "notional"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.active_times is not None:
            object.__setattr__(self, "active_times", tuple(sorted(int(t) for t in self.active_times)))

    def is_active(self, time: int | None) -> bool:
        return time is None or self.active_times is None or time in self.active_times

    def sort_key(self):
        return (self.writer, self.beneficiary, self.reference, self.kind.value,
                self.eta, self.tau, self.notional, self.active_times or ())

    def problems(self, size: int, society: int | None = None) -> list[str]:
        """Invariant violations of this contract inside a network of ``size`` nodes."""
        out = []
        label = f"{self.kind.value} {self.writer}->{self.beneficiary} on {self.reference}"
        for name in ("writer", "beneficiary", "reference"):
            idx = getattr(self, name)
            if not 0 <= idx < size:
                out.append(f"{label}: {name} index {idx} out of range")
        if society is not None and self.writer == society:
            out.append(f"{label}: society cannot write contracts")
        if self.writer == self.beneficiary:
            out.append(f"{label}: writer equals beneficiary")
        if self.kind in INSURANCE_KINDS and self.writer == self.reference:
            out.append(f"{label}: insurer cannot insure against itself")
        if self.kind in SELF_KINDS and self.reference != self.beneficiary:
            out.append(f"{label}: reference must be the beneficiary")
        if not np.isfinite([self.eta, self.tau, self.notional]).all():
            out.append(f"{label}: non-finite parameter")
        if self.eta < 0:
            out.append(f"{label}: negative coefficient")
        if self.kind in INSURANCE_KINDS and self.eta > 1:
            out.append(f"{label}: insurance coefficient above 1")
        if self.tau < 0:
            out.append(f"{label}: negative threshold")
        if self.notional < 0:
            out.append(f"{label}: negative notional")
        return out


@dataclass(frozen=True)
class LiabilitySpec:
    """Base obligations plus contingent contracts, evaluatable at any wealth."""

    base: np.ndarray
    contracts: tuple[ContingentContract, ...] = ()

    def __post_init__(self):
        base = np.array(self.base, dtype=float)
        if base.ndim != 2 or base.shape[0] != base.shape[1]:
            raise InvalidInputError(f"liability matrix must be square, got shape {base.shape}")
        base.setflags(write=False)
        object.__setattr__(self, "base", base)
        # canonical order makes evaluation independent of how contracts were listed
        object.__setattr__(self, "contracts", tuple(sorted(self.contracts, key=ContingentContract.sort_key)))

    @property
    def size(self) -> int:
        return self.base.shape[0]

    @property
    def is_constant(self) -> bool:
        return not self.contracts

    def evaluate(self, V, *, time: int | None = None, reference=None) -> np.ndarray:
        return evaluate_liabilities(self, V, time=time, reference=reference)

    def upper_bounds(self, x) -> np.ndarray:
        return upper_bound_matrix(self, x)


def _share_of_shortfall(row: np.ndarray, j: int, shortfall: float) -> float:
    total = row.sum()
    if total <= 0:
        return 0.0
    return row[j] / total * shortfall


def _threshold_coefficient(contract: ContingentContract, row: np.ndarray, shortfall: float) -> float:
    paid = row[contract.beneficiary] - _share_of_shortfall(row, contract.beneficiary, shortfall)
    denominator = max(paid, 0.0)
    if denominator <= 0:
        return 0.0
    numerator = max(paid + contract.tau, 0.0)
    return contract.eta * min(1.0, numerator / denominator)


def threshold_eta(contract: ContingentContract, V, resolved_L) -> float:
    """Effective coefficient of a threshold insurance, clipped to ``[0, eta]``.

    The ratio is ``[paid + tau]^+ / [paid]^+`` where ``paid`` is what the
    reference entity pays the beneficiary under pro-rata sharing of its
    shortfall.  A zero denominator yields 0.
    """
    if contract.kind is not ContractKind.THRESHOLD_INSURANCE:
        raise InvalidInputError("threshold_eta applies to ThresholdInsurance contracts only")
    V = np.asarray(V, dtype=float)
    row = np.asarray(resolved_L, dtype=float)[contract.reference]
    return _threshold_coefficient(contract, row, max(-V[contract.reference], 0.0))


def _insurance_payoff(contract: ContingentContract, row: np.ndarray, shortfall: float) -> float:
    loss = _share_of_shortfall(row, contract.beneficiary, shortfall)
    if contract.kind is ContractKind.THRESHOLD_INSURANCE:
        return _threshold_coefficient(contract, row, shortfall) * loss
    return contract.eta * loss


def _row_order(insurance: Iterable[ContingentContract]) -> list[int]:
    graph: dict[int, set[int]] = defaultdict(set)
    for c in insurance:
        graph[c.writer].add(c.reference)
    try:
        return list(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        cycle = tuple(exc.args[1][:-1])
        raise StructuralError(f"cyclic insurance dependency through nodes {cycle}", cycle=cycle) from None


def evaluate_liabilities(spec: LiabilitySpec, V, *, time: int | None = None, reference=None) -> np.ndarray:
    """Nominal liabilities ``L(V)``.

    Insurance payoffs depend on the reference entity's own obligations, so rows
    are resolved in topological order of the writer -> reference graph.  When
    ``reference`` is given, insurance reads the reference entity's obligations
    from that matrix instead (used by the dynamic model, where the shortfall
    being insured happened in the previous period).
    """
    V = np.asarray(V, dtype=float)
    if V.shape != (spec.size,):
        raise InvalidInputError(f"wealth vector has shape {V.shape}, expected ({spec.size},)")
    shortfall = np.maximum(-V, 0.0)
    L = np.array(spec.base, dtype=float)
    insurance = []
    for c in spec.contracts:
        if not c.is_active(time):
            continue
        k = c.reference
        if c.kind is ContractKind.DIGITAL_CDS:
            if V[k] < 0:
                L[c.writer, c.beneficiary] += c.notional
        elif c.kind in INSURANCE_KINDS:
            insurance.append(c)
        else:
            L[c.writer, c.beneficiary] += c.eta * shortfall[k]
    if not insurance:
        return L
    if reference is not None:
        ref = np.asarray(reference, dtype=float)
        for c in insurance:
            L[c.writer, c.beneficiary] += _insurance_payoff(c, ref[c.reference], shortfall[c.reference])
        return L
    by_writer = defaultdict(list)
    for c in insurance:
        by_writer[c.writer].append(c)
    for row in _row_order(insurance):
        for c in by_writer.get(row, ()):
            L[c.writer, c.beneficiary] += _insurance_payoff(c, L[c.reference], shortfall[c.reference])
    return L


def evaluate_batch(spec: LiabilitySpec, Vs) -> np.ndarray:
    """``L(V)`` for every row of ``Vs`` at once, shape ``(m, size, size)``."""
    Vs = np.asarray(Vs, dtype=float)
    if Vs.ndim != 2 or Vs.shape[1] != spec.size:
        raise InvalidInputError(f"wealth batch has shape {Vs.shape}, expected (m, {spec.size})")
    shortfall = np.maximum(-Vs, 0.0)
    L = np.repeat(spec.base[None], Vs.shape[0], axis=0)
    insurance = []
    for c in spec.contracts:
        i, j, k = c.writer, c.beneficiary, c.reference
        if c.kind is ContractKind.DIGITAL_CDS:
            L[:, i, j] += c.notional * (Vs[:, k] < 0)
        elif c.kind in INSURANCE_KINDS:
            insurance.append(c)
        else:
            L[:, i, j] += c.eta * shortfall[:, k]
    if not insurance:
        return L
    by_writer = defaultdict(list)
    for c in insurance:
        by_writer[c.writer].append(c)
    for row in _row_order(insurance):
        for c in by_writer.get(row, ()):
            L[:, c.writer, c.beneficiary] += np.array(
                [_insurance_payoff(c, L[m, c.reference], shortfall[m, c.reference]) for m in range(len(Vs))])
    return L


@dataclass(frozen=True)
class TreeVerdict:
    ok: bool
    beneficiary: int | None = None
    cycle: tuple[int, ...] | None = None


def check_insurance_tree(spec: LiabilitySpec) -> TreeVerdict:
    """Reject cyclic chains of insurance written on behalf of one beneficiary."""
    graphs: dict[int, dict[int, set[int]]] = defaultdict(lambda: defaultdict(set))
    for c in spec.contracts:
        if c.kind in INSURANCE_KINDS:
            graphs[c.beneficiary][c.writer].add(c.reference)
    for j in sorted(graphs):
        try:
            TopologicalSorter(graphs[j]).prepare()
        except CycleError as exc:
            return TreeVerdict(ok=False, beneficiary=j, cycle=tuple(exc.args[1][:-1]))
    return TreeVerdict(ok=True)


def _payoff_bound(contract: ContingentContract, worst_shortfall: np.ndarray) -> float:
    if contract.kind is ContractKind.DIGITAL_CDS:
        return contract.notional
    # pro-rata shares and threshold coefficients never exceed 1
    return contract.eta * worst_shortfall[contract.reference]


def upper_bound_matrix(spec: LiabilitySpec, x) -> np.ndarray:
    """Componentwise bound on ``L(V)`` over the a-priori wealth box.

    The box ``[x - rowsum(Lbar), x + colsum(Lbar)]`` and ``Lbar`` depend on each
    other; the sweep starts at the base matrix and stops once a sweep changes
    nothing.  Acyclic reference chains settle within ``size + 1`` sweeps.
    """
    x = np.asarray(x, dtype=float)
    bound = np.array(spec.base, dtype=float)
    for _ in range(spec.size + 2):
        worst = np.maximum(bound.sum(axis=1) - x, 0.0)
        nxt = np.array(spec.base, dtype=float)
        for c in spec.contracts:
            nxt[c.writer, c.beneficiary] += _payoff_bound(c, worst)
        if np.array_equal(nxt, bound):
            nxt.setflags(write=False)
            return nxt
        bound = nxt
    raise StructuralError("contingent liabilities are unbounded: bound sweep did not settle")


def wealth_box(spec: LiabilitySpec, x) -> tuple[np.ndarray, np.ndarray]:
    """Compact box that contains every clearing wealth vector."""
    x = np.asarray(x, dtype=float)
    bound = upper_bound_matrix(spec, x)
    return x - bound.sum(axis=1), x + bound.sum(axis=0)

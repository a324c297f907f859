"""Network data model and baseline Eisenberg-Noe clearing."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .contracts import INSURANCE_KINDS, ContingentContract, LiabilitySpec, check_insurance_tree
from .errors import InvalidInputError, NumericalFailure, StructuralError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000


def positive_part(v) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=float), 0.0)


def negative_part(v) -> np.ndarray:
    return np.maximum(-np.asarray(v, dtype=float), 0.0)


@dataclass(frozen=True)
class FinancialNetwork:
    """Banks (plus optional society at index 0) with assets and obligations.

    Construction only checks shapes; use :func:`validate_network` for the
    domain invariants.
    """

    x: np.ndarray
    base_liabilities: np.ndarray
    contracts: tuple[ContingentContract, ...] = ()
    has_society: bool = False
    names: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        L = np.array(self.base_liabilities, dtype=float)
        if L.shape != (x.size, x.size):
            raise InvalidInputError(f"liabilities of shape {L.shape} do not match {x.size} nodes")
        x.setflags(write=False)
        L.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "base_liabilities", L)
        object.__setattr__(self, "contracts", tuple(self.contracts))
        names = tuple(self.names) or default_names(x.size, self.has_society)
        if len(names) != x.size or len(set(names)) != x.size:
            raise InvalidInputError("node names must be unique, one per node")
        object.__setattr__(self, "names", names)

    @cached_property
    def liabilities(self) -> LiabilitySpec:
        return LiabilitySpec(self.base_liabilities, self.contracts)

    @property
    def size(self) -> int:
        """Number of nodes including society."""
        return self.x.size

    @property
    def n(self) -> int:
        """Number of banks."""
        return self.size - int(self.has_society)

    @property
    def society(self) -> int | None:
        return 0 if self.has_society else None

    @property
    def banks(self) -> np.ndarray:
        return np.arange(int(self.has_society), self.size)

    def with_assets(self, x) -> FinancialNetwork:
        return FinancialNetwork(x, self.base_liabilities, self.contracts, self.has_society, self.names)

    def with_contracts(self, contracts, base=None) -> FinancialNetwork:
        base = self.base_liabilities if base is None else base
        return FinancialNetwork(self.x, base, tuple(contracts), self.has_society, self.names)


def default_names(size: int, has_society: bool) -> tuple[str, ...]:
    # banks are numbered from 1 either way; society is "0"
    if has_society:
        return tuple(str(i) for i in range(size))
    return tuple(str(i + 1) for i in range(size))


@dataclass(frozen=True)
class RelativeLiabilities:
    pi: np.ndarray
    pbar: np.ndarray


def relative_from_totals(numerator: np.ndarray, pbar: np.ndarray) -> np.ndarray:
    """Row-normalise ``numerator`` by ``pbar``; zero rows get the uniform convention."""
    size = pbar.size
    pi = np.zeros((size, size))
    owing = pbar > 0
    pi[owing] = numerator[owing] / pbar[owing, None]
    if size > 1:
        idle = np.flatnonzero(~owing)
        pi[idle] = 1.0 / (size - 1)
        pi[idle, idle] = 0.0
    return pi


def total_and_relative_liabilities(L) -> RelativeLiabilities:
    L = np.asarray(L, dtype=float)
    if not np.isfinite(L).all():
        raise InvalidInputError("liability matrix has non-finite entries")
    if (L < 0).any():
        raise InvalidInputError("liability matrix has negative entries")
    pbar = L.sum(axis=1)
    return RelativeLiabilities(relative_from_totals(L, pbar), pbar)


def payments_from_wealth(pbar, V) -> np.ndarray:
    return np.maximum(np.asarray(pbar, dtype=float) - negative_part(V), 0.0)


def wealth_map(x, rel: RelativeLiabilities, V) -> np.ndarray:
    """``x + Pi^T [pbar - V^-]^+ - pbar`` for fixed relative liabilities."""
    return np.asarray(x) + rel.pi.T @ payments_from_wealth(rel.pbar, V) - rel.pbar


class Direction(str, enum.Enum):
    GREATEST = "greatest"
    LEAST = "least"
    SINGLE = "single"


@dataclass(frozen=True)
class ClearingResult:
    V: np.ndarray
    p: np.ndarray
    residual: float
    iterations: int
    direction: Direction = Direction.SINGLE
    converged: bool = True
    rounds: int = 0
    warnings: tuple[str, ...] = ()
    speculative: bool | None = None
    default_sets: tuple[frozenset[int], ...] = field(default=(), repr=False)

    @property
    def defaults(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.V < 0))

    def to_dict(self, names=None) -> dict:
        names = names or [str(i) for i in range(self.V.size)]
        return {
            "wealth": dict(zip(names, map(float, self.V))),
            "payments": dict(zip(names, map(float, self.p))),
            "defaults": [names[i] for i in self.defaults],
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "rounds": int(self.rounds),
            "direction": self.direction.value,
            "converged": bool(self.converged),
            "speculative": self.speculative,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_network(net: FinancialNetwork) -> ValidationReport:
    violations, warnings = [], []
    label = net.names
    x, L = net.x, net.base_liabilities
    for i in range(net.size):
        if not np.isfinite(x[i]):
            violations.append(f"non-finite external assets at node {label[i]}")
        elif x[i] < 0:
            violations.append(f"negative external assets at node {label[i]}")
        if not np.isfinite(L[i]).all():
            violations.append(f"non-finite liabilities from node {label[i]}")
        elif (L[i] < 0).any():
            violations.append(f"negative liabilities from node {label[i]}")
        if L[i, i] != 0:
            violations.append(f"nonzero diagonal at node {label[i]}")
    if net.has_society and (L[0] != 0).any():
        violations.append(f"society node {label[0]} has liabilities")
    for c in net.contracts:
        violations.extend(c.problems(net.size, net.society))
    if not violations:
        tree = check_insurance_tree(net.liabilities)
        if not tree.ok:
            cyc = ", ".join(label[i] for i in tree.cycle)
            violations.append(f"cyclic insurance for beneficiary {label[tree.beneficiary]}: ({cyc})")
    if not violations and net.contracts:
        try:
            net.liabilities.evaluate(np.zeros(net.size))
            net.liabilities.upper_bounds(net.x)
        except StructuralError as exc:
            violations.append(str(exc))
    cover: dict[tuple[int, int], float] = {}
    for c in net.contracts:
        if c.kind in INSURANCE_KINDS:
            key = (c.reference, c.beneficiary)
            cover[key] = cover.get(key, 0.0) + c.eta
    for (k, j), total in sorted(cover.items()):
        if total > 1:
            warnings.append(f"over-insurance: node {label[j]} insured {total:g} times against node {label[k]}")
    return ValidationReport(tuple(violations), tuple(warnings))


def require_valid(net: FinancialNetwork) -> None:
    report = validate_network(net)
    if not report.ok:
        raise InvalidInputError("invalid network: " + "; ".join(report.violations))


def _payment_picard(x, rel, p, tol, max_iter):
    for it in range(1, max_iter + 1):
        nxt = np.minimum(rel.pbar, x + rel.pi.T @ p)
        step = np.max(np.abs(nxt - p), initial=0.0)
        p = nxt
        if step <= tol:
            return p, it
    raise NumericalFailure("payment iteration did not converge", best_residual=float(step))


def clear_eisenberg_noe(net: FinancialNetwork, tol: float = DEFAULT_TOL,
                        max_iter: int = DEFAULT_MAX_ITER) -> ClearingResult:
    """Greatest clearing payments of a constant-liability network.

    Classic fictitious default: assume full payment, mark the firms that
    cannot cover their debts, solve the linear system for their payments and
    repeat until the default set stops growing.
    """
    if not net.liabilities.is_constant:
        raise InvalidInputError("clear_eisenberg_noe needs constant liabilities; use the static solvers")
    require_valid(net)
    rel = total_and_relative_liabilities(net.base_liabilities)
    x, pi, pbar = net.x, rel.pi, rel.pbar
    p = pbar.copy()
    defaults: frozenset[int] = frozenset()
    history = []
    rounds = 0
    extra = 0
    for _ in range(net.size + 1):
        V = x + pi.T @ p - pbar
        current = frozenset(int(i) for i in np.flatnonzero(V < 0))
        if current == defaults:
            break
        defaults = current
        history.append(current)
        rounds += 1
        D = np.array(sorted(current))
        S = np.setdiff1d(np.arange(net.size), D)
        p[S] = pbar[S]
        system = np.eye(D.size) - pi[np.ix_(D, D)].T
        rhs = x[D] + pi[np.ix_(S, D)].T @ pbar[S]
        if np.linalg.cond(system) < 1e12:
            p[D] = np.clip(np.linalg.solve(system, rhs), 0.0, pbar[D])
        else:
            # closed default cycle: no unique linear solution, take the greatest one
            p, extra = _payment_picard(x, rel, p, tol * 1e-3, max_iter)
    else:
        raise NumericalFailure("default set did not stabilise", best_residual=None, rounds=rounds)
    V = x + pi.T @ p - pbar
    res = float(np.max(np.abs(wealth_map(x, rel, V) - V), initial=0.0))
    return ClearingResult(V=V, p=payments_from_wealth(pbar, V), residual=res,
                          iterations=rounds + extra, direction=Direction.GREATEST,
                          converged=res <= tol, rounds=rounds,
                          speculative=False, default_sets=tuple(history))

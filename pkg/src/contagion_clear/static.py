"""Simultaneous-claims clearing with wealth-contingent liabilities.

Every solver here works with the wealth map

    Phi(V) = x + Pi(V)^T [pbar(V) - V^-]^+ - pbar(V)

whose fixed points are the clearing wealths.  When the system is
nonspeculative ``Phi`` is monotone and Picard iteration from the corners of
the a-priori wealth box reaches the greatest and least fixed points.  For
speculative systems the same iteration still certifies whatever fixed point it
lands on, but uniqueness is not claimed.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import contracts as _contracts
from .contracts import ContractKind
from .errors import InvalidInputError, NumericalFailure
from .network import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    ClearingResult,
    Direction,
    FinancialNetwork,
    payments_from_wealth,
    require_valid,
    total_and_relative_liabilities,
    wealth_map,
)

CYCLE_WINDOW = 8
CYCLE_TOL = 1e-8
MAX_BRANCHES = 2 ** 12


def clearing_map(net: FinancialNetwork, V) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    rel = total_and_relative_liabilities(net.liabilities.evaluate(V))
    return wealth_map(net.x, rel, V)


def residual(net: FinancialNetwork, V) -> float:
    """Sup-norm fixed-point defect ``||Phi(V) - V||``."""
    V = np.asarray(V, dtype=float)
    return float(np.max(np.abs(clearing_map(net, V) - V), initial=0.0))


def wealth_box(net: FinancialNetwork) -> tuple[np.ndarray, np.ndarray]:
    return _contracts.wealth_box(net.liabilities, net.x)


def result_at(net: FinancialNetwork, V, *, iterations=0, direction=Direction.SINGLE, tol=DEFAULT_TOL,
              **extra) -> ClearingResult:
    """Package a wealth vector as a clearing result, recomputing payments and residual."""
    V = np.array(V, dtype=float)
    pbar = net.liabilities.evaluate(V).sum(axis=1)
    res = residual(net, V)
    return ClearingResult(V=V, p=payments_from_wealth(pbar, V), residual=res, iterations=iterations,
                          direction=Direction(direction), converged=res <= tol, **extra)


@dataclass
class _Run:
    V: np.ndarray
    residual: float
    iterations: int
    converged: bool
    monotone: bool = True
    cycle: tuple[np.ndarray, ...] = ()
    trace: list = field(default_factory=list)


def _iterate(step: Callable[[np.ndarray], np.ndarray], start, tol, max_iter, *, sign=0,
             window=CYCLE_WINDOW, cycle_tol=CYCLE_TOL, keep=0) -> _Run:
    """Picard iteration with convergence, monotonicity and cycle bookkeeping.

    ``sign`` is +1 when iterates are expected to decrease (descent from the
    top corner), -1 when they should increase, 0 for no expectation.
    """
    V = np.array(start, dtype=float)
    recent: deque = deque(maxlen=max(window, 1))
    trace: deque = deque(maxlen=keep) if keep else None
    monotone = True
    best_r, best_V = np.inf, V
    for it in range(max_iter):
        W = step(V)
        r = float(np.max(np.abs(W - V), initial=0.0))
        if trace is not None:
            trace.append(V)
        if r < best_r:
            best_r, best_V = r, V
        if r <= tol:
            return _Run(V, r, it, True, monotone, trace=list(trace or ()))
        slack = 1e-12 * (1.0 + np.max(np.abs(V)))
        if sign and ((sign > 0 and (W > V + slack).any()) or (sign < 0 and (W < V - slack).any())):
            monotone = False
        if window:
            recent.append(V)
            for m in range(2, len(recent) + 1):
                if np.max(np.abs(W - recent[-m])) <= cycle_tol:
                    states = tuple(list(recent)[-m:])
                    gaps = [np.max(np.abs(a - b)) for a, b in itertools.combinations(states, 2)]
                    if min(gaps) > 1e3 * cycle_tol:
                        return _Run(best_V, best_r, it + 1, False, monotone, cycle=states,
                                    trace=list(trace or ()))
                    break
        V = W
    return _Run(best_V, best_r, max_iter, False, monotone, trace=list(trace or ()))


def _damped_search(net, start, tol, max_iter, steps=(0.5, 0.25, 0.1)):
    """Averaged iteration ``V + a (Phi(V) - V)`` for a few step sizes ``a``.

    A step of size ``a * tol`` certifies ``||Phi(V) - V|| <= tol``.
    """
    for alpha in steps:
        # aim well below tol so the certified residual has slack
        run = _iterate(lambda V, a=alpha: V + a * (clearing_map(net, V) - V), start, 1e-2 * alpha * tol,
                       max_iter, cycle_tol=alpha * CYCLE_TOL)
        if run.converged and residual(net, run.V) <= tol:
            return run, alpha
    return None


@dataclass(frozen=True)
class NonspeculativeVerdict:
    """Outcome of the sampling falsifier.

    ``witness`` is ``(lower, upper, firm)`` with ``lower <= upper`` and
    ``Phi(lower)[firm] > Phi(upper)[firm]``.  ``strict`` reports whether the
    society inflow was strictly increasing on every sampled pair in the
    nonpositive part of the box (``None`` without a society node).
    """

    falsified: bool
    samples: int
    witness: tuple[np.ndarray, np.ndarray, int] | None = None
    violation: float = 0.0
    strict: bool | None = None
    strict_witness: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def verdict(self) -> str:
        return "Falsified" if self.falsified else "NotFalsified"

    @property
    def strictly_nonspeculative(self) -> bool:
        return not self.falsified and bool(self.strict)


def _batch_map(net: FinancialNetwork, Vs: np.ndarray) -> np.ndarray:
    """Wealth map applied to each row of ``Vs``."""
    if net.liabilities.is_constant:
        rel = total_and_relative_liabilities(net.base_liabilities)
        pay = np.maximum(rel.pbar - np.maximum(-Vs, 0.0), 0.0)
        return net.x + pay @ rel.pi - rel.pbar
    L = _contracts.evaluate_batch(net.liabilities, Vs)
    pbar = L.sum(axis=2)
    safe = np.where(pbar > 0, pbar, 1.0)
    pi = L / safe[:, :, None]
    idle = pbar <= 0
    if idle.any() and net.size > 1:
        uniform = np.full(net.size, 1.0 / (net.size - 1))
        rows, cols = np.nonzero(idle)
        pi[rows, cols] = uniform
        pi[rows, cols, cols] = 0.0
    pay = np.maximum(pbar - np.maximum(-Vs, 0.0), 0.0)
    return net.x + np.einsum("mi,mij->mj", pay, pi) - pbar


def _ordered_pairs(rng, lo, hi, count, coords):
    lower = lo + rng.random((count, lo.size)) * (hi - lo)
    upper = lower.copy()
    half = count // 2
    upper[:half] += rng.random((half, lo.size)) * (hi - lower[:half])
    # the rest move a single coordinate, which is where falsifiers usually hide
    rows = np.arange(half, count)
    k = rng.choice(coords, size=rows.size)
    upper[rows, k] += rng.random(rows.size) * (hi[k] - lower[rows, k])
    return lower, upper


def check_nonspeculative(net: FinancialNetwork, samples: int = 1000, seed: int = 0) -> NonspeculativeVerdict:
    """Search for a pair ``V <= V'`` on which some firm's clearing value decreases."""
    if samples < 1:
        raise InvalidInputError("sample count must be at least 1")
    lo, hi = wealth_box(net)
    rng = np.random.default_rng(seed)
    coords = np.flatnonzero(hi > lo)
    if coords.size == 0:
        return NonspeculativeVerdict(False, samples, strict=None if not net.has_society else False)
    lower, upper = _ordered_pairs(rng, lo, hi, samples, coords)
    drop = _batch_map(net, lower) - _batch_map(net, upper)
    slack = 1e-12 * (1.0 + np.max(np.abs(np.concatenate([lo, hi]))))
    witness, worst = None, float(drop.max())
    if worst > slack:
        r, i = np.unravel_index(np.argmax(drop), drop.shape)
        witness = (lower[r], upper[r], int(i))

    strict, strict_witness = None, None
    if net.has_society:
        nlo, nhi = np.minimum(lo, 0.0), np.minimum(hi, 0.0)
        bank_coords = np.array([k for k in net.banks if nhi[k] > nlo[k]], dtype=int)
        strict = True
        if bank_coords.size:
            a, b = _ordered_pairs(rng, nlo, nhi, samples, bank_coords)
            # only bank coordinates move; society wealth does not enter its own inflow
            a[:, 0] = b[:, 0] = 0.0
            moved = (b > a).any(axis=1)
            gain = _batch_map(net, b)[:, 0] - _batch_map(net, a)[:, 0]
            bad = np.flatnonzero(moved & (gain <= 0))
            if bad.size:
                strict = False
                strict_witness = (a[bad[0]], b[bad[0]])
    return NonspeculativeVerdict(witness is not None, samples, witness, max(worst, 0.0), strict, strict_witness)


def clear_static(net: FinancialNetwork, direction: Direction | str = Direction.GREATEST,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, *,
                 check_speculation: bool = True, samples: int = 256) -> ClearingResult:
    """Picard iteration of the wealth map from the top or bottom corner of the box.

    Returns a result with ``converged=False`` (and the offending cycle or
    budget noted in ``warnings``) instead of raising; :func:`solve_static`
    hands such cases to :func:`detect_nonexistence`.
    """
    direction = Direction(direction)
    if direction is Direction.SINGLE:
        raise InvalidInputError("clear_static needs direction 'greatest' or 'least'")
    require_valid(net)
    lo, hi = wealth_box(net)
    greatest = direction is Direction.GREATEST
    run = _iterate(lambda V: clearing_map(net, V), hi if greatest else lo, tol, max_iter,
                   sign=1 if greatest else -1)
    warnings = []
    if not run.monotone:
        warnings.append("iterates not monotone: system likely speculative")
    if run.cycle:
        warnings.append(f"iteration entered a cycle of period {len(run.cycle)}")
    elif not run.converged:
        warnings.append(f"iteration budget of {max_iter} exhausted")
    if not run.converged and not net.liabilities.is_constant:
        # averaging settles on fixed points that plain iteration circles around
        start = hi if greatest else lo
        damped = _damped_search(net, start, tol, max_iter)
        if damped is not None:
            run, alpha = damped
            warnings.append(f"reached by damped iteration (step {alpha}); extremality not claimed")
    speculative = None
    if net.liabilities.is_constant:
        speculative = False
    elif check_speculation:
        speculative = check_nonspeculative(net, samples).falsified
    if speculative:
        warnings.append("speculative system: no uniqueness guarantee")
    return result_at(net, run.V, iterations=run.iterations, direction=direction, tol=tol,
                     warnings=tuple(warnings), speculative=speculative)


def fictitious_default_static(net: FinancialNetwork, tol: float = DEFAULT_TOL,
                              max_iter: int = DEFAULT_MAX_ITER) -> ClearingResult:
    """Greatest clearing wealths by growing the set of insolvent firms.

    Each round freezes the current insolvent set ``D`` and solves for the
    maximal fixed point of the map in which only members of ``D`` pay less
    than in full; the round after the set stops changing returns.
    ``iterations`` is the outer counter at termination, ``rounds`` the number
    of inner solves (at most the number of banks).
    """
    require_valid(net)
    spec, x = net.liabilities, net.x
    _, hi = wealth_box(net)
    rel = total_and_relative_liabilities(spec.evaluate(np.zeros(net.size)))
    V = x + rel.pi.T @ rel.pbar - rel.pbar
    previous: frozenset[int] = frozenset()
    sets = []
    k = 0
    while True:
        k += 1
        current = frozenset(int(i) for i in net.banks if V[i] < 0)
        if current == previous:
            break
        if len(sets) >= net.n:
            raise NumericalFailure("insolvent set still changing after n rounds", k=k, defaults=sorted(current))
        sets.append(current)
        mask = np.zeros(net.size, dtype=bool)
        mask[list(current)] = True

        def frozen_map(W, mask=mask):
            lw = np.where(mask, W, 0.0)
            r = total_and_relative_liabilities(spec.evaluate(lw))
            return x + r.pi.T @ np.maximum(r.pbar + lw, 0.0) - r.pbar

        run = _iterate(frozen_map, hi, 0.1 * tol, max_iter, sign=1, window=0)
        if not run.converged:
            raise NumericalFailure("inner fixed point did not converge", best_residual=run.residual,
                                   k=k, defaults=sorted(current))
        V = run.V
        previous = current
    return result_at(net, V, iterations=k, direction=Direction.GREATEST, tol=tol, rounds=len(sets),
                     default_sets=tuple(sets), speculative=False if spec.is_constant else None)


@dataclass(frozen=True)
class Branch:
    """One indicator pattern of a system with digital payoffs.

    ``pattern`` pairs each reference node with the assumed insolvency flag.
    ``wealth`` and ``least`` are the greatest and least fixed points of the
    system with the indicators frozen.  ``conclusive`` means every fixed point
    of that frozen system provably contradicts the pattern.
    """

    pattern: tuple[tuple[int, bool], ...]
    wealth: np.ndarray
    least: np.ndarray
    consistent: bool
    conclusive: bool

    def describe(self, names) -> str:
        parts = [f"{names[k]} {'insolvent' if bad else 'solvent'}" for k, bad in self.pattern]
        return ", ".join(parts)


@dataclass(frozen=True)
class NonexistenceDiagnosis:
    verdict: str  # "nonexistent", "exists" or "inconclusive"
    fixed_point: ClearingResult | None = None
    cycle: tuple[np.ndarray, ...] = ()
    branches: tuple[Branch, ...] = ()
    trace: tuple[np.ndarray, ...] = ()
    method: str = ""

    @property
    def period(self) -> int:
        return len(self.cycle)

    @property
    def conclusive(self) -> bool:
        return self.verdict != "inconclusive"


def _solve_branch(net, pattern, tol, max_iter, margin) -> Branch:
    assumed = dict(pattern)
    base = np.array(net.base_liabilities)
    rest = []
    for c in net.contracts:
        if c.kind is ContractKind.DIGITAL_CDS:
            if assumed[c.reference]:
                base[c.writer, c.beneficiary] += c.notional
        else:
            rest.append(c)
    sub = net.with_contracts(rest, base)
    hi = clear_static(sub, Direction.GREATEST, tol, max_iter, check_speculation=False)
    lo = clear_static(sub, Direction.LEAST, tol, max_iter, check_speculation=False)

    def fits(V):
        return all((V[k] < 0) == bad for k, bad in pattern) and residual(net, V) <= tol

    consistent = any(r.converged and fits(r.V) for r in (hi, lo))
    conclusive = False
    if not consistent and hi.converged and lo.converged and not rest:
        # constant liabilities: every fixed point lies between least and greatest
        conclusive = any((bad and lo.V[k] >= margin) or (not bad and hi.V[k] <= -margin)
                         for k, bad in pattern)
    return Branch(tuple(pattern), hi.V, lo.V, consistent, conclusive)


def detect_nonexistence(net: FinancialNetwork, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                        *, window: int = CYCLE_WINDOW, cycle_tol: float = CYCLE_TOL,
                        max_branches: int = MAX_BRANCHES) -> NonexistenceDiagnosis:
    """Decide whether the static system has any clearing wealths.

    1. Picard iteration with cycle detection; a certified limit refutes
       nonexistence.
    2. With digital payoffs, enumerate indicator patterns, solve each frozen
       system and check it against its own assumptions.  All patterns
       provably inconsistent is a nonexistence certificate.
    3. Otherwise try damped (averaged) iteration, which settles on fixed
       points that plain iteration circles around.
    """
    require_valid(net)
    _, hi = wealth_box(net)
    phi = lambda V: clearing_map(net, V)  # noqa: E731
    run = _iterate(phi, hi, tol, max_iter, window=window, cycle_tol=cycle_tol, keep=16)
    trace = tuple(run.trace)
    if run.converged:
        fp = result_at(net, run.V, iterations=run.iterations, tol=tol)
        return NonexistenceDiagnosis("exists", fp, trace=trace, method="picard")

    refs = sorted({c.reference for c in net.contracts if c.kind is ContractKind.DIGITAL_CDS})
    if refs:
        if 2 ** len(refs) > max_branches:
            return NonexistenceDiagnosis("inconclusive", cycle=run.cycle, trace=trace, method="too many branches")
        branches = tuple(_solve_branch(net, tuple(zip(refs, flags)), tol, max_iter, cycle_tol)
                         for flags in itertools.product((False, True), repeat=len(refs)))
        for b in branches:
            for V in (b.wealth, b.least):
                if residual(net, V) <= tol:
                    return NonexistenceDiagnosis("exists", result_at(net, V, tol=tol), run.cycle, branches,
                                                 trace, "branch enumeration")
        verdict = "nonexistent" if all(b.conclusive for b in branches) else "inconclusive"
        return NonexistenceDiagnosis(verdict, None, run.cycle, branches, trace, "branch enumeration")

    damped = _damped_search(net, run.V, tol, max_iter)
    if damped is not None:
        found, alpha = damped
        fp = result_at(net, found.V, iterations=found.iterations, tol=tol,
                       warnings=(f"found by damped iteration (step {alpha})",))
        return NonexistenceDiagnosis("exists", fp, run.cycle, trace=trace, method="damped iteration")
    return NonexistenceDiagnosis("inconclusive", None, run.cycle, trace=trace, method="exhausted")


@dataclass(frozen=True)
class StaticOutcome:
    status: str  # "solved", "nonexistent" or "inconclusive"
    result: ClearingResult | None
    diagnosis: NonexistenceDiagnosis | None = None


def solve_static(net: FinancialNetwork, direction: Direction | str = Direction.GREATEST,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, *,
                 samples: int = 256) -> StaticOutcome:
    """Corner iteration first, falling back to the nonexistence diagnosis."""
    first = clear_static(net, direction, tol, max_iter, samples=samples)
    if first.converged:
        return StaticOutcome("solved", first)
    diag = detect_nonexistence(net, tol, max_iter)
    if diag.verdict == "exists":
        fp = diag.fixed_point
        extra = tuple(first.warnings) + tuple(fp.warnings)
        fp = ClearingResult(fp.V, fp.p, fp.residual, fp.iterations, Direction.SINGLE, fp.converged,
                            warnings=extra, speculative=first.speculative)
        return StaticOutcome("solved", fp, diag)
    return StaticOutcome(diag.verdict, None, diag)

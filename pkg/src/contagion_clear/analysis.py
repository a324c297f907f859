"""Comparative statics, conservation audits and static-versus-dynamic reports."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contracts import ContingentContract
from .dynamic import DynamicSpec, DynamicState, RemovalPolicy, clear_dynamic, dynamic_conservation
from .errors import ContagionError, InvalidInputError
from .network import DEFAULT_MAX_ITER, DEFAULT_TOL, ClearingResult, Direction, FinancialNetwork, positive_part
from .static import check_nonspeculative, clear_static, solve_static

MONOTONE_TOL = 1e-8
JUMP_FACTOR = 10.0
OUT_OF_SCOPE = "out of theorem scope: system not confirmed strictly nonspeculative, monotonicity is not guaranteed"


@dataclass(frozen=True)
class SensitivityReport:
    base_x: np.ndarray
    perturbed_x: np.ndarray
    base_V: np.ndarray
    perturbed_V: np.ndarray
    direction: np.ndarray
    grid: np.ndarray
    wealths: np.ndarray
    monotone: bool
    max_violation: float
    max_jump: float
    continuous: bool
    failure_index: int | None = None
    in_scope: bool = True
    banner: str | None = None

    def to_dict(self, names=None) -> dict:
        names = list(names or range(self.base_x.size))
        return {
            "grid": self.grid.tolist(),
            "wealths": [dict(zip(map(str, names), map(float, v))) for v in self.wealths],
            "monotone": self.monotone,
            "max_violation": self.max_violation,
            "max_jump": self.max_jump,
            "continuous": self.continuous,
            "failure_index": self.failure_index,
            "in_scope": self.in_scope,
            "banner": self.banner,
        }


def sensitivity_in_assets(net: FinancialNetwork, direction, steps: int = 21, scale: float = 1.0, *,
                          tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                          samples: int = 1000, jump_factor: float = JUMP_FACTOR) -> SensitivityReport:
    """Clear along ``x + s * direction`` for ``s`` on ``steps`` points of ``[0, scale]``.

    Reports the largest componentwise decrease between consecutive grid
    points and the largest jump measured against the step length.  A
    clearing failure stops the ramp and records where.
    """
    d = np.array(direction, dtype=float).reshape(-1)
    if d.shape != net.x.shape:
        raise InvalidInputError(f"direction has {d.size} entries, expected {net.size}")
    if not np.isfinite(d).all() or (d < 0).any():
        raise InvalidInputError("direction must be finite and nonnegative")
    if steps < 2:
        raise InvalidInputError("a ramp needs at least 2 grid points")
    grid = np.linspace(0.0, scale, steps)
    verdict = check_nonspeculative(net, samples)
    in_scope = verdict.strictly_nonspeculative
    wealths = []
    failure = None
    for k, s in enumerate(grid):
        try:
            res = clear_static(net.with_assets(net.x + s * d), Direction.GREATEST, tol, max_iter,
                               check_speculation=False)
        except ContagionError:
            res = None
        if res is None or not res.converged:
            failure = k
            break
        wealths.append(res.V)
    W = np.array(wealths).reshape(len(wealths), net.size)
    if len(W) > 1:
        diffs = np.diff(W, axis=0)
        violation = float(max(0.0, -diffs.min()))
        jump = float(np.abs(diffs).max())
    else:
        violation = jump = 0.0
    step = float(np.abs(d).max() * (grid[1] - grid[0]))
    continuous = jump <= jump_factor * step + 1e-12
    last = len(W) - 1
    return SensitivityReport(
        base_x=np.array(net.x), perturbed_x=net.x + grid[max(last, 0)] * d,
        base_V=W[0] if len(W) else np.full(net.size, np.nan),
        perturbed_V=W[last] if len(W) else np.full(net.size, np.nan),
        direction=d, grid=grid[: len(W)], wealths=W,
        monotone=violation <= MONOTONE_TOL, max_violation=violation, max_jump=jump,
        continuous=continuous, failure_index=failure, in_scope=in_scope,
        banner=None if in_scope else OUT_OF_SCOPE,
    )


@dataclass(frozen=True)
class ConservationAudit:
    """Positive equity (``lhs``) against the cash that entered the system (``rhs``)."""

    lhs: float
    rhs: float
    tol: float = MONOTONE_TOL
    kind: str = "static"

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def ok(self) -> bool:
        return self.gap <= self.tol

    def to_dict(self) -> dict:
        return {"kind": self.kind, "positive_equity": self.lhs, "injected": self.rhs,
                "gap": self.gap, "ok": self.ok}


def conservation_audit(subject, wealth=None, tol: float = MONOTONE_TOL) -> ConservationAudit:
    """Audit a static fixed point (network plus wealths) or a completed dynamic run."""
    if isinstance(subject, DynamicState):
        lhs, rhs = dynamic_conservation(subject)
        return ConservationAudit(lhs, rhs, tol, "dynamic")
    if not isinstance(subject, FinancialNetwork):
        raise InvalidInputError("audit needs a FinancialNetwork with wealths or a DynamicState")
    if isinstance(wealth, ClearingResult):
        wealth = wealth.V
    if wealth is None:
        raise InvalidInputError("static audit needs the clearing wealths")
    lhs = float(positive_part(wealth).sum())
    return ConservationAudit(lhs, float(subject.x.sum()), tol, "static")


def static_to_dynamic(net: FinancialNetwork, x0=None,
                      policy: RemovalPolicy = RemovalPolicy.ROLL_FORWARD_ONLY) -> DynamicSpec:
    """Two-period version of a static network.

    Base obligations fall due at time 0, contingent payoffs at time 1 (on
    the time-0 wealths).  ``x0`` is the part of the assets available at time
    0; the rest arrives at time 1.  Defaults to everything at time 0.
    """
    x0 = net.x if x0 is None else np.array(x0, dtype=float)
    x1 = net.x - x0
    if x0.shape != net.x.shape or (x0 < 0).any() or (x1 < -1e-15).any():
        raise InvalidInputError("time-0 assets must lie within [0, x]")
    L = np.zeros((2, net.size, net.size))
    L[0] = net.base_liabilities
    later = [ContingentContract(c.kind, c.writer, c.beneficiary, c.reference, c.eta, c.tau, c.notional, (1,))
             for c in net.contracts]
    return DynamicSpec(np.array([x0, np.maximum(x1, 0.0)]), L, later, net.has_society, net.names, policy)


@dataclass(frozen=True)
class ComparisonReport:
    static_status: str
    static_solutions: dict[str, np.ndarray]
    proposals: dict[str, np.ndarray]
    dynamic_terminal: np.ndarray
    differences: dict[str, float]
    match: str | None
    flags: tuple[str, ...] = field(default=())

    @property
    def coincide(self) -> bool:
        return self.match is not None and self.match in self.static_solutions

    def to_dict(self, names=None) -> dict:
        names = list(names or range(self.dynamic_terminal.size))

        def vec(v):
            return dict(zip(map(str, names), map(float, v)))

        return {
            "static_status": self.static_status,
            "static_solutions": {k: vec(v) for k, v in self.static_solutions.items()},
            "branch_proposals": {k: vec(v) for k, v in self.proposals.items()},
            "dynamic_terminal": vec(self.dynamic_terminal),
            "differences": dict(self.differences),
            "match": self.match,
            "flags": list(self.flags),
        }


def compare_static_dynamic(net: FinancialNetwork, x0=None, *, tol: float = DEFAULT_TOL,
                           max_iter: int = DEFAULT_MAX_ITER, match_tol: float = MONOTONE_TOL) -> ComparisonReport:
    """Clear a network both simultaneously and in two periods, and relate the answers."""
    outcome = solve_static(net, Direction.GREATEST, tol, max_iter)
    solutions: dict[str, np.ndarray] = {}
    if outcome.result is not None:
        label = "greatest" if outcome.result.direction is Direction.GREATEST else "fixed point"
        solutions[label] = outcome.result.V
        least = clear_static(net, Direction.LEAST, tol, max_iter, check_speculation=False)
        if least.converged and np.max(np.abs(least.V - outcome.result.V)) > match_tol:
            solutions["least"] = least.V
    proposals = {}
    if outcome.diagnosis is not None:
        for b in outcome.diagnosis.branches:
            proposals[f"branch ({b.describe(net.names)})"] = b.wealth
    terminal = clear_dynamic(static_to_dynamic(net, x0)).terminal
    candidates = {**solutions, **proposals}
    differences = {k: float(np.max(np.abs(v - terminal))) for k, v in candidates.items()}
    match = next((k for k, gap in differences.items() if gap <= match_tol), None)
    flags = []
    if outcome.status == "nonexistent":
        flags.append("static system has no clearing wealths")
    if match is None:
        flags.append("dynamic terminal wealths match no static solution")
    elif match in proposals:
        flags.append(f"matches {match} proposal")
    else:
        flags.append(f"matches static {match} solution")
    return ComparisonReport(outcome.status, solutions, proposals, terminal, differences, match, tuple(flags))

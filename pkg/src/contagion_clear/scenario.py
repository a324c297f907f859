"""JSON scenario files, scenario execution and run reports.

Numbers may be JSON numbers, exact fraction strings (``"3/16"``) or, where an
asset split is swept, affine expressions in ``eps`` (``"1-eps"``,
``"3/16 - eps"``, ``{"const": 1, "eps": -1}``).  Everything converts to
double at build time.
"""
from __future__ import annotations

import csv
import io
import json
import os
import re
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .analysis import conservation_audit
from .contracts import ContingentContract, ContractKind
from .dynamic import DynamicSpec, DynamicState, RemovalPolicy, clear_dynamic, validate_dynamic
from .errors import ContagionError, InvalidInputError, NumericalFailure, ScenarioError
from .network import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    ClearingResult,
    Direction,
    FinancialNetwork,
    validate_network,
)
from .static import NonexistenceDiagnosis, residual, solve_static

SCHEMA = "contagion-clear/1"
TOL_ENV = "CONTAGION_CLEAR_TOL"
SOCIETY_ID = "society"

EXIT_OK, EXIT_USAGE, EXIT_NONEXISTENT, EXIT_INCONCLUSIVE = 0, 1, 2, 3

_NUM = r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?(?:\s*/\s*(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)?"
_TERM = re.compile(rf"\s*([+-])?\s*(?:({_NUM})\s*(\*\s*)?)?(eps)?\s*")


@dataclass(frozen=True)
class Affine:
    """``const + eps * slope``; plain numbers have zero slope."""

    const: float
    slope: float = 0.0

    def at(self, epsilon: float | None) -> float:
        if self.slope and epsilon is None:
            raise InvalidInputError("value depends on eps but no epsilon was given")
        return self.const + (self.slope * epsilon if self.slope else 0.0)

    def to_json(self):
        if not self.slope:
            return self.const
        return {"const": self.const, "eps": self.slope}


def _fraction(text: str) -> Fraction:
    if "/" in text:
        num, den = (Fraction(part.strip()) for part in text.split("/"))
        if den == 0:
            raise ValueError("zero denominator")
        return num / den
    return Fraction(text)


def parse_number(value, where: str, *, allow_eps: bool = True) -> Affine:
    """Decimal, fraction string or affine-in-``eps`` expression."""
    if isinstance(value, bool):
        raise ScenarioError("expected a number, got a boolean", field=where)
    if isinstance(value, (int, float)):
        if not np.isfinite(value):
            raise ScenarioError("number must be finite", field=where)
        return Affine(float(value))
    if isinstance(value, dict) and allow_eps:
        unknown = set(value) - {"const", "eps"}
        if unknown:
            raise ScenarioError(f"unknown keys {sorted(unknown)} in affine number", field=where)
        const = parse_number(value.get("const", 0), where, allow_eps=False).const
        slope = parse_number(value.get("eps", 0), where, allow_eps=False).const
        return Affine(const, slope)
    if not isinstance(value, str) or not value.strip():
        raise ScenarioError(f"expected a number, got {value!r}", field=where)
    const, slope, pos = Fraction(0), Fraction(0), 0
    text = value.strip()
    while pos < len(text):
        m = _TERM.match(text, pos)
        sign, num, star, eps = m.groups()
        if not m.group(0).strip() or (star and not eps) or (not num and not eps) or (pos and not sign):
            raise ScenarioError(f"cannot read number {value!r}", field=where)
        try:
            coeff = _fraction(num) if num else Fraction(1)
        except (ValueError, ZeroDivisionError):
            raise ScenarioError(f"cannot read number {value!r}", field=where) from None
        coeff = -coeff if sign == "-" else coeff
        if eps:
            if not allow_eps:
                raise ScenarioError("eps is not allowed here", field=where)
            slope += coeff
        else:
            const += coeff
        pos = m.end()
    return Affine(float(const), float(slope))


@dataclass(frozen=True)
class LiabilityRecord:
    debtor: str
    creditor: str
    amount: Affine
    time: int = 0


@dataclass(frozen=True)
class ContractRecord:
    kind: str
    writer: str
    beneficiary: str
    reference: str | None = None
    eta: float = 1.0
    tau: float = 0.0
    notional: float = 0.0
    times: tuple[int, ...] | None = None


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float | None = None
    max_iter: int = DEFAULT_MAX_ITER
    direction: str = Direction.GREATEST.value
    removal_policy: str = RemovalPolicy.ROLL_FORWARD_ONLY.value


@dataclass(frozen=True)
class ScenarioFile:
    name: str
    description: str
    mode: str
    has_society: bool
    society_assets: Affine
    nodes: tuple[tuple[str, Affine], ...]
    liabilities: tuple[LiabilityRecord, ...] = ()
    contracts: tuple[ContractRecord, ...] = ()
    horizon: int | None = None
    cash_flows: tuple[tuple[str, tuple[Affine, ...]], ...] = ()
    initial_wealth: tuple[tuple[str, float], ...] = ()
    epsilon: float | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    @property
    def ids(self) -> tuple[str, ...]:
        own = tuple(i for i, _ in self.nodes)
        return ((SOCIETY_ID,) + own) if self.has_society else own

    def _index(self):
        return {name: k for k, name in enumerate(self.ids)}

    def _assets(self, epsilon):
        x = [a.at(epsilon) for _, a in self.nodes]
        return np.array(([self.society_assets.at(epsilon)] if self.has_society else []) + x)

    def _contracts(self, index, dynamic: bool):
        out = []
        for k, c in enumerate(self.contracts):
            ref = index[c.reference] if c.reference is not None else None
            try:
                out.append(ContingentContract(c.kind, index[c.writer], index[c.beneficiary], ref, c.eta, c.tau,
                                              c.notional, c.times if dynamic else None))
            except InvalidInputError as exc:
                raise ScenarioError(str(exc), field=f"contracts[{k}]") from None
        return out

    def network(self, epsilon: float | None = None) -> FinancialNetwork:
        """Static network; obligations of every date are due at once."""
        eps = self.epsilon if epsilon is None else epsilon
        index = self._index()
        size = len(index)
        L = np.zeros((size, size))
        for r in self.liabilities:
            L[index[r.debtor], index[r.creditor]] += r.amount.at(eps)
        return FinancialNetwork(self._assets(eps), L, self._contracts(index, False), self.has_society, self.ids)

    def dynamic_spec(self, epsilon: float | None = None, policy: str | None = None) -> DynamicSpec:
        eps = self.epsilon if epsilon is None else epsilon
        index = self._index()
        size = len(index)
        T = self.horizon if self.horizon is not None else max([r.time for r in self.liabilities] + [0])
        x = np.zeros((T + 1, size))
        x[0] = self._assets(eps)
        for node, flows in self.cash_flows:
            if len(flows) != T + 1:
                raise ScenarioError(f"cash flow of node {node!r} has {len(flows)} entries, expected {T + 1}",
                                    field=f"dynamic.cash_flows.{node}")
            x[:, index[node]] = [f.at(eps) for f in flows]
        L = np.zeros((T + 1, size, size))
        for k, r in enumerate(self.liabilities):
            if r.time > T:
                raise ScenarioError(f"time {r.time} beyond horizon {T}", field=f"liabilities[{k}].time")
            L[r.time, index[r.debtor], index[r.creditor]] += r.amount.at(eps)
        v0 = np.zeros(size)
        for node, w in self.initial_wealth:
            v0[index[node]] = w
        return DynamicSpec(x, L, self._contracts(index, True), self.has_society, self.ids,
                           RemovalPolicy(policy or self.solver.removal_policy), v0)

    def to_dict(self) -> dict:
        out = {
            "schema": SCHEMA,
            "meta": {"name": self.name, "description": self.description},
            "mode": self.mode,
            "network": {
                "has_society": self.has_society,
                "nodes": [{"id": i, "assets": a.to_json()} for i, a in self.nodes],
            },
            "liabilities": [{"from": r.debtor, "to": r.creditor, "amount": r.amount.to_json(), "time": r.time}
                            for r in self.liabilities],
            "contracts": [],
            "solver": {"max_iter": self.solver.max_iter, "direction": self.solver.direction,
                       "removal_policy": self.solver.removal_policy},
        }
        if self.has_society:
            out["network"]["society_assets"] = self.society_assets.to_json()
        for c in self.contracts:
            rec = {"kind": c.kind, "writer": c.writer, "beneficiary": c.beneficiary, "eta": c.eta,
                   "tau": c.tau, "notional": c.notional}
            if c.reference is not None:
                rec["reference"] = c.reference
            if c.times is not None:
                rec["times"] = list(c.times)
            out["contracts"].append(rec)
        if self.solver.tolerance is not None:
            out["solver"]["tolerance"] = self.solver.tolerance
        dyn = {}
        if self.horizon is not None:
            dyn["horizon"] = self.horizon
        if self.cash_flows:
            dyn["cash_flows"] = {node: [f.to_json() for f in flows] for node, flows in self.cash_flows}
        if self.initial_wealth:
            dyn["initial_wealth"] = dict(self.initial_wealth)
        if self.epsilon is not None:
            dyn["epsilon"] = self.epsilon
        if dyn:
            out["dynamic"] = dyn
        return out


def _require(obj, key, where, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ScenarioError(f"missing required key {key!r}", field=f"{where}.{key}" if where else key)
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise ScenarioError(f"expected {getattr(kind, '__name__', kind)}", field=f"{where}.{key}" if where else key)
    return value


def _check_keys(obj, allowed, where):
    extra = set(obj) - set(allowed)
    if extra:
        raise ScenarioError(f"unknown keys {sorted(extra)}", field=where or None)


def _node_id(value, known, where):
    if not isinstance(value, (str, int)) or isinstance(value, bool):
        raise ScenarioError("node id must be a string", field=where)
    value = str(value)
    if value not in known:
        raise ScenarioError(f"unknown node {value!r}", field=where)
    return value


def _int(value, where, minimum=0):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ScenarioError(f"expected an integer >= {minimum}", field=where)
    return value


def scenario_from_dict(data) -> ScenarioFile:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    _check_keys(data, {"schema", "meta", "mode", "network", "liabilities", "contracts", "dynamic", "solver"}, "")
    if data.get("schema") != SCHEMA:
        raise ScenarioError(f"unsupported schema {data.get('schema')!r}, expected {SCHEMA!r}", field="schema")
    meta = data.get("meta", {})
    mode = data.get("mode", "static")
    if mode not in ("static", "dynamic"):
        raise ScenarioError("mode must be 'static' or 'dynamic'", field="mode")
    net = _require(data, "network", "", dict)
    _check_keys(net, {"has_society", "society_assets", "nodes"}, "network")
    has_society = net.get("has_society", False)
    if not isinstance(has_society, bool):
        raise ScenarioError("expected true or false", field="network.has_society")
    society_assets = parse_number(net.get("society_assets", 0), "network.society_assets")
    nodes = []
    for k, node in enumerate(_require(net, "nodes", "network", list)):
        where = f"network.nodes[{k}]"
        if not isinstance(node, dict):
            raise ScenarioError("node must be an object", field=where)
        _check_keys(node, {"id", "assets"}, where)
        nid = _require(node, "id", where)
        if not isinstance(nid, (str, int)) or isinstance(nid, bool):
            raise ScenarioError("node id must be a string", field=f"{where}.id")
        nid = str(nid)
        nodes.append((nid, parse_number(node.get("assets", 0), f"{where}.assets")))
    ids = [i for i, _ in nodes] + ([SOCIETY_ID] if has_society else [])
    if len(set(ids)) != len(ids):
        raise ScenarioError("node ids must be unique", field="network.nodes")
    known = set(ids)

    liabilities = []
    for k, rec in enumerate(data.get("liabilities", [])):
        where = f"liabilities[{k}]"
        if not isinstance(rec, dict):
            raise ScenarioError("liability must be an object", field=where)
        _check_keys(rec, {"from", "to", "amount", "time"}, where)
        liabilities.append(LiabilityRecord(
            _node_id(_require(rec, "from", where), known, f"{where}.from"),
            _node_id(_require(rec, "to", where), known, f"{where}.to"),
            parse_number(_require(rec, "amount", where), f"{where}.amount"),
            _int(rec.get("time", 0), f"{where}.time"),
        ))

    contracts = []
    for k, rec in enumerate(data.get("contracts", [])):
        where = f"contracts[{k}]"
        if not isinstance(rec, dict):
            raise ScenarioError("contract must be an object", field=where)
        _check_keys(rec, {"kind", "writer", "beneficiary", "reference", "eta", "tau", "notional", "times"}, where)
        kind = _require(rec, "kind", where)
        if kind not in {k.value for k in ContractKind}:
            raise ScenarioError(f"unknown contract kind {kind!r}", field=f"{where}.kind")
        ref = rec.get("reference")
        times = rec.get("times")
        if times is not None:
            if not isinstance(times, list):
                raise ScenarioError("times must be a list", field=f"{where}.times")
            times = tuple(sorted(_int(t, f"{where}.times") for t in times))
        contracts.append(ContractRecord(
            kind,
            _node_id(_require(rec, "writer", where), known, f"{where}.writer"),
            _node_id(_require(rec, "beneficiary", where), known, f"{where}.beneficiary"),
            None if ref is None else _node_id(ref, known, f"{where}.reference"),
            parse_number(rec.get("eta", 1), f"{where}.eta", allow_eps=False).const,
            parse_number(rec.get("tau", 0), f"{where}.tau", allow_eps=False).const,
            parse_number(rec.get("notional", 0), f"{where}.notional", allow_eps=False).const,
            times,
        ))

    dyn = data.get("dynamic", {})
    if not isinstance(dyn, dict):
        raise ScenarioError("expected an object", field="dynamic")
    _check_keys(dyn, {"horizon", "cash_flows", "initial_wealth", "epsilon"}, "dynamic")
    horizon = dyn.get("horizon")
    if horizon is not None:
        horizon = _int(horizon, "dynamic.horizon")
    flows = []
    for node, seq in dyn.get("cash_flows", {}).items():
        where = f"dynamic.cash_flows.{node}"
        _node_id(node, known, where)
        if not isinstance(seq, list):
            raise ScenarioError("cash flow must be a list", field=where)
        flows.append((str(node), tuple(parse_number(v, f"{where}[{t}]") for t, v in enumerate(seq))))
    initial = []
    for node, value in dyn.get("initial_wealth", {}).items():
        where = f"dynamic.initial_wealth.{node}"
        initial.append((_node_id(node, known, where), parse_number(value, where, allow_eps=False).const))
    epsilon = dyn.get("epsilon")
    if epsilon is not None:
        epsilon = parse_number(epsilon, "dynamic.epsilon", allow_eps=False).const

    solver = data.get("solver", {})
    if not isinstance(solver, dict):
        raise ScenarioError("expected an object", field="solver")
    _check_keys(solver, {"tolerance", "max_iter", "direction", "removal_policy"}, "solver")
    tol = solver.get("tolerance")
    if tol is not None:
        tol = parse_number(tol, "solver.tolerance", allow_eps=False).const
        if tol <= 0:
            raise ScenarioError("tolerance must be positive", field="solver.tolerance")
    direction = solver.get("direction", Direction.GREATEST.value)
    if direction not in (Direction.GREATEST.value, Direction.LEAST.value):
        raise ScenarioError("direction must be 'greatest' or 'least'", field="solver.direction")
    policy = solver.get("removal_policy", RemovalPolicy.ROLL_FORWARD_ONLY.value)
    if policy not in {p.value for p in RemovalPolicy}:
        raise ScenarioError(f"unknown removal policy {policy!r}", field="solver.removal_policy")
    cfg = SolverConfig(tol, _int(solver.get("max_iter", DEFAULT_MAX_ITER), "solver.max_iter", 1), direction, policy)

    scn = ScenarioFile(
        name=str(meta.get("name", "")), description=str(meta.get("description", "")), mode=mode,
        has_society=has_society, society_assets=society_assets, nodes=tuple(nodes),
        liabilities=tuple(liabilities), contracts=tuple(contracts), horizon=horizon,
        cash_flows=tuple(flows), initial_wealth=tuple(initial), epsilon=epsilon, solver=cfg,
    )
    _semantic_check(scn)
    return scn


def _semantic_check(scn: ScenarioFile) -> None:
    """Build the solver objects once so invariant violations surface at load time."""
    needs_eps = any(a.slope for _, a in scn.nodes) or any(r.amount.slope for r in scn.liabilities) or any(
        f.slope for _, seq in scn.cash_flows for f in seq)
    eps = scn.epsilon if scn.epsilon is not None else (0.0 if needs_eps else None)
    try:
        report = validate_network(scn.network(eps))
        if not report.ok:
            raise ScenarioError("; ".join(report.violations), field="network")
        if scn.mode == "dynamic" or scn.cash_flows or scn.horizon is not None:
            problems = validate_dynamic(scn.dynamic_spec(eps))
            if problems:
                raise ScenarioError("; ".join(problems), field="dynamic")
    except InvalidInputError as exc:
        raise ScenarioError(str(exc)) from None


def parse_scenario(source) -> ScenarioFile:
    """Read a scenario from a path, a bundled scenario name, or JSON text."""
    text, label = _read_source(source)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {label}: {exc.msg}", line=exc.lineno) from None
    return scenario_from_dict(data)


def _read_source(source) -> tuple[str, str]:
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        path = Path(source)
        if path.exists():
            return path.read_text(), str(path)
        if str(source) in bundled_scenarios():
            return resources.files(__package__).joinpath("scenarios", f"{source}.json").read_text(), str(source)
        raise ScenarioError(f"no scenario file or bundled scenario named {str(source)!r}")
    return str(source), "<string>"


def bundled_scenarios() -> list[str]:
    folder = resources.files(__package__).joinpath("scenarios")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def serialize_scenario(scn: ScenarioFile) -> str:
    return json.dumps(scn.to_dict(), indent=2) + "\n"


def resolve_tolerance(cli: float | None = None, file: float | None = None) -> float:
    """Command line beats file beats ``CONTAGION_CLEAR_TOL`` beats the built-in default."""
    for value in (cli, file):
        if value is not None:
            return float(value)
    env = os.environ.get(TOL_ENV)
    if env:
        try:
            tol = float(env)
        except ValueError:
            raise InvalidInputError(f"{TOL_ENV}={env!r} is not a number") from None
        if tol <= 0:
            raise InvalidInputError(f"{TOL_ENV} must be positive")
        return tol
    return DEFAULT_TOL


@dataclass(frozen=True)
class Overrides:
    mode: str | None = None
    direction: str | None = None
    tolerance: float | None = None
    max_iter: int | None = None
    epsilon: float | None = None
    removal_policy: str | None = None


@dataclass(frozen=True)
class RunReport:
    """Deterministic payload plus wall-clock timings kept apart from it."""

    scenario: str
    mode: str
    status: str
    exit_code: int
    result: dict
    audits: dict
    solver: dict
    timings: dict = field(default_factory=dict, compare=False)
    rows: tuple[tuple[int, str, float, float], ...] = field(default=(), repr=False)

    def payload(self) -> dict:
        return {"scenario": self.scenario, "mode": self.mode, "status": self.status,
                "exit_code": self.exit_code, "result": self.result, "audits": self.audits,
                "solver": self.solver}

    def to_json(self, timings: bool = True) -> str:
        data = self.payload()
        if timings:
            data["timings"] = self.timings
        return json.dumps(data, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time", "node", "wealth", "payment"])
        for t, node, w, p in self.rows:
            writer.writerow([t, node, repr(w), repr(p)])
        return buf.getvalue()


def diagnosis_to_dict(diag: NonexistenceDiagnosis, names) -> dict:
    return {
        "verdict": diag.verdict,
        "method": diag.method,
        "period": diag.period,
        "cycle": [dict(zip(names, map(float, v))) for v in diag.cycle],
        "fixed_point": dict(zip(names, map(float, diag.fixed_point.V))) if diag.fixed_point else None,
        "branches": [
            {
                "assumption": b.describe(names),
                "wealth": dict(zip(names, map(float, b.wealth))),
                "consistent": b.consistent,
                "conclusive": b.conclusive,
            }
            for b in diag.branches
        ],
        "trace": [dict(zip(names, map(float, v))) for v in diag.trace],
    }


def _static_rows(names, res: ClearingResult):
    return tuple((0, n, float(v), float(p)) for n, v, p in zip(names, res.V, res.p))


def _dynamic_rows(names, state: DynamicState):
    return tuple((s.t, n, float(v), float(p)) for s in state.steps for n, v, p in zip(names, s.V, s.p))


def run_scenario(scn: ScenarioFile, overrides: Overrides | None = None) -> RunReport:
    """Solve a scenario and attach residual and conservation audits."""
    o = overrides or Overrides()
    mode = o.mode or scn.mode
    tol = resolve_tolerance(o.tolerance, scn.solver.tolerance)
    max_iter = o.max_iter or scn.solver.max_iter
    direction = o.direction or scn.solver.direction
    policy = o.removal_policy or scn.solver.removal_policy
    eps = o.epsilon if o.epsilon is not None else scn.epsilon
    solver = {"tolerance": tol, "max_iter": max_iter, "direction": direction,
              "removal_policy": policy, "epsilon": eps}
    names = list(scn.ids)
    start = time.perf_counter()
    audits: dict = {}
    rows: tuple = ()
    try:
        if mode == "static":
            net = scn.network(eps)
            outcome = solve_static(net, direction, tol, max_iter)
            status = outcome.status
            result = {}
            if outcome.result is not None:
                result = outcome.result.to_dict(names)
                audits["residual"] = residual(net, outcome.result.V)
                audits["conservation"] = conservation_audit(net, outcome.result).to_dict()
                rows = _static_rows(names, outcome.result)
            if outcome.diagnosis is not None:
                result["diagnosis"] = diagnosis_to_dict(outcome.diagnosis, names)
        elif mode == "dynamic":
            state = clear_dynamic(scn.dynamic_spec(eps, policy))
            status = "solved"
            result = state.to_dict()
            audits["residual"] = state.max_residual
            audits["conservation"] = conservation_audit(state).to_dict()
            rows = _dynamic_rows(names, state)
        else:
            raise InvalidInputError(f"unknown mode {mode!r}")
    except NumericalFailure as exc:
        status, result = "failed", {"error": str(exc), "best_residual": exc.best_residual}
    except InvalidInputError as exc:
        raise ScenarioError(str(exc)) from None
    except ContagionError as exc:
        status, result = "failed", {"error": str(exc)}
    elapsed = time.perf_counter() - start
    code = {"solved": EXIT_OK, "nonexistent": EXIT_NONEXISTENT}.get(status, EXIT_INCONCLUSIVE)
    return RunReport(scn.name, mode, status, code, result, audits, solver, {"solve_seconds": elapsed}, rows)


def with_epsilon(scn: ScenarioFile, epsilon: float) -> ScenarioFile:
    return replace(scn, epsilon=float(epsilon))

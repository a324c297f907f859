"""Command-line entry point: ``contagion-clear <command> SCENARIO [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import compare_static_dynamic, sensitivity_in_assets
from .errors import ContagionError, NumericalFailure
from .network import validate_network
from .scenario import (
    EXIT_INCONCLUSIVE,
    EXIT_NONEXISTENT,
    EXIT_OK,
    EXIT_USAGE,
    Overrides,
    bundled_scenarios,
    diagnosis_to_dict,
    parse_scenario,
    resolve_tolerance,
    run_scenario,
)
from .static import check_nonspeculative, detect_nonexistence


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sweep(text: str) -> np.ndarray:
    try:
        a, b, n = text.split(":")
        values = np.linspace(float(a), float(b), int(n))
    except ValueError:
        raise argparse.ArgumentTypeError("sweep must look like START:STOP:COUNT") from None
    if values.size < 1:
        raise argparse.ArgumentTypeError("sweep needs at least one point")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contagion-clear", description="Clear financial networks with contingent obligations.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_cmd(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("scenario", help="scenario file or bundled scenario name")
        p.add_argument("--out", type=Path, help="write the full JSON report here")
        return p

    p = scenario_cmd("clear", "solve a scenario")
    p.add_argument("--mode", choices=["static", "dynamic"])
    p.add_argument("--direction", choices=["greatest", "least"])
    p.add_argument("--policy", choices=["RollForwardOnly", "RemoveOnDefault"], help="dynamic removal policy")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--epsilon", type=float, help="asset split for eps-dependent scenarios")
    group.add_argument("--sweep", type=_sweep, metavar="START:STOP:COUNT", help="run an epsilon grid in parallel")
    p.add_argument("--csv", type=Path, help="write the wealth trajectory as CSV")
    p.add_argument("--workers", type=int, default=4)

    p = scenario_cmd("check", "search for speculative behaviour")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float)

    p = scenario_cmd("diagnose", "decide whether static clearing wealths exist")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--epsilon", type=float)

    p = scenario_cmd("sensitivity", "ramp external assets and check monotonicity")
    p.add_argument("--direction-vector", required=True,
                   help="comma separated, one entry per node, or id=value pairs")
    p.add_argument("--steps", type=int, default=21)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--epsilon", type=float)

    p = scenario_cmd("compare", "static versus two-period clearing")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--tol", type=float)

    scenario_cmd("validate", "check a scenario file")
    sub.add_parser("list", help="list bundled scenarios")
    return parser


def _direction_vector(text: str, ids) -> np.ndarray:
    vec = np.zeros(len(ids))
    parts = [s.strip() for s in text.split(",") if s.strip()]
    try:
        if parts and all("=" in s for s in parts):
            index = {n: k for k, n in enumerate(ids)}
            for s in parts:
                key, value = s.split("=", 1)
                if key.strip() not in index:
                    raise UsageError(f"unknown node {key.strip()!r} in direction vector")
                vec[index[key.strip()]] = float(value)
        else:
            values = [float(s) for s in parts]
            if len(values) != len(ids):
                raise UsageError(f"direction vector needs {len(ids)} entries, got {len(values)}")
            vec[:] = values
    except ValueError:
        raise UsageError(f"cannot read direction vector {text!r}") from None
    return vec


def _fmt(v) -> str:
    return f"{v: .10g}"


def _table(report) -> str:
    lines = [f"scenario {report.scenario or '?'}  mode {report.mode}  status {report.status}"]
    if report.rows:
        lines.append(f"{'time':>4}  {'node':<10} {'wealth':>16} {'payment':>16}")
        lines += [f"{t:>4}  {n:<10} {_fmt(w):>16} {_fmt(p):>16}" for t, n, w, p in report.rows]
    for w in report.result.get("warnings", []):
        lines.append(f"warning: {w}")
    for w in report.result.get("assumption_warnings", []):
        lines.append(f"assumption: {w}")
    diag = report.result.get("diagnosis")
    if diag:
        lines.append(f"diagnosis: {diag['verdict']} ({diag['method']})")
        for b in diag["branches"]:
            vals = ", ".join(_fmt(v).strip() for v in b["wealth"].values())
            lines.append(f"  assume {b['assumption']}: ({vals}) consistent={b['consistent']}")
    if "error" in report.result:
        lines.append(f"error: {report.result['error']}")
    if report.audits:
        cons = report.audits.get("conservation", {})
        lines.append(f"residual {report.audits.get('residual', float('nan')):.3e}  "
                     f"conservation gap {cons.get('gap', float('nan')):.3e}")
    return "\n".join(lines)


def _write_json(path: Path | None, data) -> None:
    if path is not None:
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _cmd_clear(args, scn) -> int:
    base = Overrides(args.mode, args.direction, args.tol, args.max_iter, args.epsilon, args.policy)
    if args.sweep is None:
        report = run_scenario(scn, base)
        print(_table(report))
        if args.out:
            args.out.write_text(report.to_json() + "\n")
        if args.csv:
            args.csv.write_text(report.to_csv())
        return report.exit_code

    def one(eps):
        return run_scenario(scn, Overrides(base.mode, base.direction, base.tolerance, base.max_iter,
                                           float(eps), base.removal_policy))

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        reports = list(pool.map(one, args.sweep))
    for eps, rep in zip(args.sweep, reports):
        print(f"# epsilon = {eps:g}")
        print(_table(rep))
    if args.out:
        _write_json(args.out, [json.loads(r.to_json()) for r in reports])
    if args.csv:
        header, *_ = reports[0].to_csv().splitlines()
        body = [f"{eps!r},{line}" for eps, r in zip(args.sweep, reports) for line in r.to_csv().splitlines()[1:]]
        args.csv.write_text("\n".join(["epsilon," + header] + body) + "\n")
    return max(r.exit_code for r in reports)


def _cmd_check(args, scn) -> int:
    net = scn.network(args.epsilon)
    v = check_nonspeculative(net, args.samples, args.seed)
    print(f"nonspeculative test over {v.samples} pairs: {v.verdict}")
    data = {"verdict": v.verdict, "samples": v.samples, "violation": v.violation, "strict": v.strict}
    if v.witness is not None:
        lower, upper, firm = v.witness
        print(f"  witness: raising wealths lowers the value of node {net.names[firm]}")
        print(f"    lower = {np.round(lower, 6).tolist()}")
        print(f"    upper = {np.round(upper, 6).tolist()}")
        data["witness"] = {"lower": lower.tolist(), "upper": upper.tolist(), "node": net.names[firm]}
    if v.strict is not None:
        print(f"  society inflow strictly increasing on samples: {v.strict}")
    _write_json(args.out, data)
    return EXIT_OK


def _cmd_diagnose(args, scn) -> int:
    net = scn.network(args.epsilon)
    tol = resolve_tolerance(args.tol, scn.solver.tolerance)
    diag = detect_nonexistence(net, tol, args.max_iter or scn.solver.max_iter)
    data = diagnosis_to_dict(diag, list(net.names))
    print(f"verdict: {diag.verdict} ({diag.method})")
    if diag.fixed_point is not None:
        print(f"  fixed point: {diag.fixed_point.V.tolist()}  residual {diag.fixed_point.residual:.3e}")
    if diag.period:
        print(f"  iteration cycle of period {diag.period}")
    for b in data["branches"]:
        print(f"  assume {b['assumption']}: {list(b['wealth'].values())} consistent={b['consistent']}")
    _write_json(args.out, data)
    return {"exists": EXIT_OK, "nonexistent": EXIT_NONEXISTENT}.get(diag.verdict, EXIT_INCONCLUSIVE)


def _cmd_sensitivity(args, scn) -> int:
    net = scn.network(args.epsilon)
    rep = sensitivity_in_assets(net, _direction_vector(args.direction_vector, net.names), args.steps, args.scale)
    if rep.banner:
        print(rep.banner)
    print(f"monotone: {rep.monotone}  max violation {rep.max_violation:.3e}  "
          f"max jump {rep.max_jump:.3e}  continuous proxy: {rep.continuous}")
    if rep.failure_index is not None:
        print(f"clearing failed at grid point {rep.failure_index}")
    _write_json(args.out, rep.to_dict(net.names))
    return EXIT_OK if rep.failure_index is None else EXIT_INCONCLUSIVE


def _cmd_compare(args, scn) -> int:
    spec = scn.dynamic_spec(args.epsilon)
    net = scn.network(args.epsilon)
    rep = compare_static_dynamic(net, spec.cash_flows[0], tol=resolve_tolerance(args.tol, scn.solver.tolerance))
    print(f"static: {rep.static_status}")
    for label, v in {**rep.static_solutions, **rep.proposals}.items():
        print(f"  {label}: {v.tolist()}")
    print(f"dynamic terminal: {rep.dynamic_terminal.tolist()}")
    for flag in rep.flags:
        print(f"  {flag}")
    _write_json(args.out, rep.to_dict(net.names))
    return EXIT_OK


def _cmd_validate(args, scn) -> int:
    report = validate_network(scn.network(scn.epsilon if scn.epsilon is not None else 0.0))
    for w in report.warnings:
        print(f"warning: {w}")
    print(f"{scn.name or args.scenario}: valid")
    _write_json(args.out, {"valid": True, "warnings": list(report.warnings)})
    return EXIT_OK


COMMANDS = {"clear": _cmd_clear, "check": _cmd_check, "diagnose": _cmd_diagnose,
            "sensitivity": _cmd_sensitivity, "compare": _cmd_compare, "validate": _cmd_validate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "list":
            print("\n".join(bundled_scenarios()))
            return EXIT_OK
        scn = parse_scenario(args.scenario)
        return COMMANDS[args.command](args, scn)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except ContagionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

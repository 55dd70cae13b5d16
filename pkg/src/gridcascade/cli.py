"""Command-line frontend.

Subcommands: decompose, plan, cascade, study, detect, solve. Data and
summaries go to stdout, diagnostics to stderr; exit codes are stable:

  0 success        4 switch-off creates an overload
  2 parse error    5 switch-off disconnects load
  3 validation     6 numerical failure
                   7 stage cap exceeded

All randomness flows from --seed. Flags take precedence over the --config
file, which takes precedence over built-in defaults; the merged effective
configuration is echoed into every report.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import caseio, equilibria, primaldual, studies, topology
from .cascade import CascadeConfig, run_cascade
from .errors import (
    CaseSyntaxError,
    CreatesOverload,
    DisconnectsLoad,
    GridCascadeError,
    NumericalFailure,
    SchemaViolation,
    StageCapExceeded,
    UnsupportedField,
    VersionUnsupported,
)

EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_OVERLOAD = 4
EXIT_DISCONNECT = 5
EXIT_NUMERICAL = 6
EXIT_STAGE_CAP = 7

_PARSE_ERRORS = (CaseSyntaxError, SchemaViolation, VersionUnsupported, UnsupportedField)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("GRIDCASCADE_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_case(path: str) -> caseio.CaseDocument:
    text = Path(path).read_bytes()
    if path.endswith(".m"):
        return caseio.parse_case_matpower_subset(text)
    return caseio.parse_case_json(text)


def _load_network(path: str, redispatch: bool = False):
    doc = _load_case(path)
    for w in doc.warnings:
        print(f"warning: {w}", file=sys.stderr)
    net = caseio.case_to_network(doc, redispatch=redispatch)
    return doc, net


def cmd_decompose(args) -> int:
    _, net = _load_network(args.case)
    part = topology.bridge_block_decomposition(net)
    bridges = topology.find_bridges(net)
    report = {
        "areas": [sorted(a) for a in part.areas],
        "bridges": sorted(bridges),
        "tie_lines": sorted(part.tie_lines),
        "internal_lines": sorted(part.internal_lines),
    }
    print(caseio.dumps_report(report))
    return 0


def cmd_plan(args) -> int:
    doc, net = _load_network(args.case)
    switch = args.lines if args.lines else list(doc.switch_off)
    if not switch:
        print("error: no lines to switch off (give --lines or a case switch_off list)",
              file=sys.stderr)
        return EXIT_VALIDATION
    try:
        revised = topology.switch_off_lines(net, switch)
    except CreatesOverload as exc:
        if not args.force:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_OVERLOAD
        print(f"warning: {exc} (forced)", file=sys.stderr)
        revised = topology.switch_off_lines(net, switch, force=True)
    part = topology.bridge_block_decomposition(revised)
    out_doc = caseio.network_to_case(revised, name=doc.name)
    out_path = _out_dir(args) / (Path(args.case).stem + ".revised.json")
    out_path.write_bytes(caseio.emit_case_json(out_doc))
    summary = {
        "revised_case": str(out_path),
        "switched_off": sorted(switch),
        "areas": [sorted(a) for a in part.areas],
        "bridges": sorted(topology.find_bridges(revised)),
    }
    print(caseio.dumps_report(summary))
    return 0


def cmd_cascade(args) -> int:
    _, net = _load_network(args.case)
    config = CascadeConfig(policy=args.policy)
    trace = run_cascade(net, args.failure, args.controller, config=config)
    stages = [
        {
            "index": s.index,
            "outages": sorted(s.outages),
            "verdict": s.verdict,
            "tripped": sorted(s.tripped),
            "lifts": len(s.lifts_applied),
            "load_shed": s.load_shed,
        }
        for s in trace.stages
    ]
    trace_path = _out_dir(args) / "cascade_trace.json"
    trace_path.write_text(
        "\n".join(caseio.dumps_report(s) for s in stages) + "\n"
    )
    print(f"stages={trace.n_stages} lifts={len(trace.lifts)} "
          f"llr={trace.load_loss_rate:.6g} cause={trace.cause}")
    print(f"trace written to {trace_path}", file=sys.stderr)
    return 0


def _study_config(args) -> studies.StudyConfig:
    defaults = dict(
        controllers=["uc", "agc"], k_values=[1], profile_counts=[10],
        failure_counts=[None], alphas=[1.0],
        perturbation=studies.DEFAULT_PERTURBATION, reserve_target=None,
        seed=0, jobs=1, switch_off=[], policy="localization-first",
    )
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise SchemaViolation("config", f"unknown keys {sorted(unknown)}")
        defaults.update(loaded)
    if args.controllers:
        defaults["controllers"] = args.controllers
    if args.k:
        defaults["k_values"] = args.k
        defaults["profile_counts"] = (defaults["profile_counts"] * len(args.k))[: len(args.k)]
        defaults["failure_counts"] = (defaults["failure_counts"] * len(args.k))[: len(args.k)]
    if args.profiles:
        defaults["profile_counts"] = [args.profiles] * len(defaults["k_values"])
    if args.alphas:
        defaults["alphas"] = args.alphas
    if args.seed is not None:
        defaults["seed"] = args.seed
    if args.jobs is not None:
        defaults["jobs"] = args.jobs
    return studies.StudyConfig(
        controllers=tuple(defaults["controllers"]),
        k_values=tuple(defaults["k_values"]),
        profile_counts=tuple(defaults["profile_counts"]),
        failure_counts=tuple(
            None if c in (None, "exhaustive") else int(c)
            for c in defaults["failure_counts"]
        ),
        alphas=tuple(float(a) for a in defaults["alphas"]),
        perturbation=float(defaults["perturbation"]),
        reserve_target=defaults["reserve_target"],
        seed=int(defaults["seed"]),
        jobs=int(defaults["jobs"]),
        switch_off=tuple(defaults["switch_off"]),
        policy=defaults["policy"],
    )


def cmd_study(args) -> int:
    doc, net = _load_network(args.case, redispatch=args.redispatch)
    config = _study_config(args)
    if not config.switch_off and doc.switch_off:
        config = studies.StudyConfig(**{
            **{k: getattr(config, k) for k in config.__dataclass_fields__},
            "switch_off": tuple(doc.switch_off),
        })
    report = studies.run_study(net, config)
    out = _out_dir(args)
    (out / "study_report.json").write_bytes(caseio.emit_report(report, "json"))
    (out / "study_cells.csv").write_bytes(caseio.emit_report(report, "csv"))
    for cell in report.cells:
        tag = f"{cell.controller}_k{cell.k}_a{cell.alpha:g}"
        (out / f"ccdf_llr_{tag}.csv").write_bytes(
            caseio.emit_ccdf_csv(cell.ccdf_llr, "llr"))
        (out / f"ccdf_gen_adjust_{tag}.csv").write_bytes(
            caseio.emit_ccdf_csv(cell.ccdf_gen_adjust, "generators_adjusted"))
    print(caseio.emit_report(report, "csv").decode().rstrip())
    print(f"report files written to {out}", file=sys.stderr)
    return 0


def cmd_detect(args) -> int:
    _, net = _load_network(args.case)
    part = topology.bridge_block_decomposition(net)
    from .cascade import line_outage_disturbance

    r, reduced = line_outage_disturbance(net, args.failure)
    problem = equilibria.make_problem(reduced, part, r, "uc")
    config = primaldual.DetectorConfig(
        budget=args.budget, step=args.step, window=args.window,
    )
    outcome = primaldual.run_primal_dual(problem, config)
    verdict = {"converged": "Converged", "critical": "CriticalDetected",
               "budget": "Budget"}[outcome.kind]
    oracle = equilibria.check_feasibility(problem)
    oracle_word = "Feasible" if oracle.feasible else "Infeasible"
    agree = (outcome.kind == "converged" and oracle.feasible) or (
        outcome.kind == "critical" and not oracle.feasible
    )
    trace_path = _out_dir(args) / "dual_trace.csv"
    trace_path.write_text(outcome.trace.to_csv())
    if outcome.kind == "budget":
        print(f"{verdict}; oracle says {oracle_word} "
              "(raise --budget or adjust --step to resolve)")
    else:
        print(f"{verdict}; oracle {'agrees' if agree else 'DISAGREES'} ({oracle_word})")
    print(f"dual trace written to {trace_path}", file=sys.stderr)
    return 0


def cmd_solve(args) -> int:
    _, net = _load_network(args.case)
    part = topology.bridge_block_decomposition(net)
    if args.failure:
        from .cascade import line_outage_disturbance

        r, reduced = line_outage_disturbance(net, args.failure)
    else:
        from .netmodel import DisturbanceVector

        r, reduced = DisturbanceVector({}), net
    problem = equilibria.make_problem(reduced, part, r, args.controller)
    eq = equilibria.solve_equilibrium(problem)
    payload = {
        "status": eq.status,
        "objective": eq.objective,
        "theta": eq.theta,
        "omega": eq.omega,
        "d": eq.d,
        "flows": eq.flows,
    }
    if eq.status == "optimal":
        payload["duals"] = {
            "balance": eq.duals.balance,
            "ace": {"+".join(map(str, k)): v for k, v in eq.duals.ace.items()},
        }
    print(caseio.dumps_report(payload))
    return 0 if eq.status == "optimal" else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gridcascade",
        description="Cascading-failure simulation for DC-modeled grids",
    )
    ap.add_argument("--out", "-o", help="output directory (env GRIDCASCADE_OUT)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="print bridge-block decomposition")
    p.add_argument("case")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("plan", help="switch off lines and emit the revised case")
    p.add_argument("case")
    p.add_argument("--lines", type=int, nargs="+", help="line ids to switch off")
    p.add_argument("--force", action="store_true",
                   help="emit the revised case even if it creates overloads")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("cascade", help="run one cascade and write its trace")
    p.add_argument("case")
    p.add_argument("--failure", type=int, nargs="+", required=True)
    p.add_argument("--controller", choices=("uc", "agc", "droop"), default="uc")
    p.add_argument("--policy", choices=("localization-first", "load-loss-first"),
                   default="localization-first")
    p.set_defaults(func=cmd_cascade)

    p = sub.add_parser("study", help="run an N-k study and write report files")
    p.add_argument("case")
    p.add_argument("--config", help="JSON study configuration file")
    p.add_argument("--controllers", nargs="+", choices=("uc", "agc", "droop"))
    p.add_argument("--k", type=int, nargs="+")
    p.add_argument("--profiles", type=int)
    p.add_argument("--alphas", type=float, nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel workers (default 1; output is width-independent)")
    p.add_argument("--redispatch", action="store_true",
                   help="re-dispatch the case by DC OPF before the study "
                        "(required for imported MATPOWER cases)")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("detect", help="run the dual-divergence detector on a failure")
    p.add_argument("case")
    p.add_argument("--failure", type=int, nargs="+", required=True)
    p.add_argument("--budget", type=int, default=200_000)
    p.add_argument("--step", type=float, default=1e-2)
    p.add_argument("--window", type=int, default=200)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("solve", help="one-shot equilibrium dump")
    p.add_argument("case")
    p.add_argument("--failure", type=int, nargs="*")
    p.add_argument("--controller", choices=("uc", "agc", "droop"), default="uc")
    p.set_defaults(func=cmd_solve)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except CreatesOverload as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OVERLOAD
    except DisconnectsLoad as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DISCONNECT
    except StageCapExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE_CAP
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (GridCascadeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

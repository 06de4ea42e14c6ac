"""Command-line entry point: generate, solve, simulate, vss, export and bench.

Exit codes: 0 optimal, 2 limit reached with an incumbent, 3 infeasible,
64 usage or input error, 1 limit reached without any incumbent.

All randomness starts from ``--seed``.  Commands that need several streams
derive them with ``sub_seed(seed, *labels)``, which hashes the labels
through numpy's ``SeedSequence``; ``bench`` uses ``sub_seed(seed, n_pois, k)``
for the k-th instance of each size, shared across fuel multipliers.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .generate import FUEL_MULTIPLIERS, GenSpec, build_scenarios, generate_instance, max_pairwise_distance
from .lp import ENGINES
from .model import PlanInfeasible, ScenarioSet
from .simulate import SEMANTICS, START, SWEEP_LEVELS, SimConfig, compute_vss, format_sweep_table, \
    simulate_mission, vss_sweep
from .solve import MODES, exit_status, solve

EXIT_OK, EXIT_NO_INCUMBENT, EXIT_LIMIT, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2, 3, 64
BENCH_SIZES = (10, 20, 30, 40, 50, 60)
BENCH_AVAILABILITY = (75, 25)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sub_seed(seed: int, *labels: int) -> int:
    """Independent 32-bit seed for a labelled sub-stream of ``seed``."""
    return int(np.random.SeedSequence([seed, *labels]).generate_state(1)[0])


def _scenarios(args, num_uvs: int) -> ScenarioSet:
    if getattr(args, "scenarios", None):
        scen = io.read_json(args.scenarios, "scenarios")
    else:
        pct = args.availability or [100.0] * num_uvs
        if len(pct) != num_uvs:
            raise UsageError(f"--availability needs one percentage per UV ({num_uvs})")
        scen = build_scenarios(pct)
    if scen.num_uvs != num_uvs:
        raise UsageError("scenario set and instance disagree on the number of UVs")
    return scen


def _code(outcome) -> int:
    status = exit_status(outcome)
    if status == "optimal":
        return EXIT_OK
    if status == "infeasible":
        return EXIT_INFEASIBLE
    return EXIT_LIMIT if outcome.has_incumbent else EXIT_NO_INCUMBENT


def cmd_generate(args) -> int:
    if args.spec:
        spec = io.read_json(args.spec, "genspec")
    else:
        if args.pois is None:
            raise UsageError("--pois is required unless --spec is given")
        spec = GenSpec(seed=args.seed, n_pois=args.pois, multiplier=args.mult, n_stations=args.stations,
                       integer_costs=args.integer_costs)
    inst = generate_instance(spec)
    out = Path(args.out or f"instance_p{spec.n_pois}_m{spec.multiplier:g}_s{spec.seed}.json")
    io.write_json(io.instance_to_dict(inst), out)
    print(f"lambda {max_pairwise_distance(inst):.6g}")
    print("F " + " ".join(f"{c:.6g}" for c in inst.fuel_capacity))
    print(out)
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = io.read_json(args.instance, "instance")
    scen = _scenarios(args, inst.num_uvs)
    log = open(args.log, "w") if args.log else None
    try:
        outcome = solve(inst, scen, args.mode, eps=args.eps, time_limit=args.time_limit, engine=args.engine,
                        strengthen=not args.no_strengthen, multi_cut=args.multi_cut, jobs=args.jobs,
                        log_sink=(lambda line: log.write(line + "\n")) if log else None)
    finally:
        if log:
            log.close()
    summary = outcome.summary()
    out = Path(args.out or Path(args.instance).with_suffix(f".{args.mode}.solution.json"))
    io.write_json(io.solution_to_dict(outcome.plan, summary, scen), out)
    print(json.dumps(io.clean(summary)))
    print(out)
    return _code(outcome)


def cmd_simulate(args) -> int:
    inst = io.read_json(args.instance, "instance")
    plan = io.plan_from_file(args.plan)
    if args.failure is not None:
        prob = args.failure
    else:
        prob = [1.0 - p / 100.0 for p in (args.availability or [100.0] * inst.num_uvs)]
    if len(prob) != inst.num_uvs:
        raise UsageError(f"need one failure probability per UV ({inst.num_uvs})")
    cfg = SimConfig(tuple(prob), args.reps, args.seed, args.semantics)
    rep = simulate_mission(inst, plan, cfg, args.provenance, jobs=args.jobs)
    if args.out:
        io.write_json(io.report_to_dict("sim_report", rep.to_dict()), args.out)
    print(f"mean {rep.mean:.4f}  std {rep.std:.4f}  stderr {rep.stderr:.4f}  per-UV "
          + " ".join(f"{v:.4f}" for v in rep.per_uv))
    return EXIT_OK


def cmd_vss(args) -> int:
    inst = io.read_json(args.instance, "instance")
    common = dict(mode=args.mode, eps=args.eps, time_limit=args.time_limit, engine=args.engine, jobs=args.jobs)
    if args.sweep:
        reports = vss_sweep(inst, SWEEP_LEVELS, replications=args.reps, seed=args.seed, semantics=args.semantics,
                            **common)
    else:
        scen = _scenarios(args, inst.num_uvs)
        cfg = SimConfig.from_scenarios(scen, replications=args.reps, seed=args.seed, semantics=args.semantics)
        reports = [compute_vss(inst, scen, cfg, label="S", **common)]
    if args.out:
        io.write_json(io.report_to_dict("vss_report", {"reports": [r.to_dict() for r in reports]}), args.out)
    print(format_sweep_table(reports))
    codes = [_code(r.stochastic) for r in reports] + [_code(r.deterministic) for r in reports]
    return max(codes)


def cmd_export(args) -> int:
    inst = io.read_json(args.instance, "instance")
    plan = io.plan_from_file(args.plan)
    text = io.export_routes(inst, plan, args.format)
    if args.out:
        Path(args.out).write_text(text)
        print(args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


BENCH_FIELDS = ("n_pois", "multiplier", "instance", "seed", "availability", "mode", "status", "objective", "bound",
                "gap_pct", "runtime", "nodes", "bd_cuts", "sec_cuts", "iterations")


def cmd_bench(args) -> int:
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.DictWriter(out, BENCH_FIELDS)
    writer.writeheader()
    try:
        for n in args.sizes:
            for k in range(args.instances):
                seed = sub_seed(args.seed, n, k)
                for mult in args.mults:
                    inst = generate_instance(GenSpec(seed=seed, n_pois=n, multiplier=mult,
                                                     integer_costs=args.integer_costs))
                    for pct in args.availability:
                        scen = build_scenarios([100.0] * (inst.num_uvs - 1) + [pct])
                        for mode in args.modes:
                            res = solve(inst, scen, mode, eps=args.eps, time_limit=args.time_limit,
                                        engine=args.engine, jobs=args.jobs).summary()
                            row = {"n_pois": n, "multiplier": mult, "instance": k, "seed": seed,
                                   "availability": pct, **{f: res[f] for f in BENCH_FIELDS if f in res}}
                            row["gap_pct"] = 100.0 * res["gap"]
                            writer.writerow(row)
                            out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _solver_flags(p, modes=MODES):
    p.add_argument("--mode", choices=modes, default="lshaped")
    p.add_argument("--eps", type=float, default=1e-4, help="relative optimality gap for the L-shaped method")
    p.add_argument("--time-limit", type=float, default=3600.0, help="seconds")
    p.add_argument("--engine", choices=ENGINES, default="highs", help="LP engine inside branch and bound")
    p.add_argument("--jobs", type=int, default=1)


def _scenario_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--availability", type=float, nargs="+", metavar="PCT",
                   help="availability percentage per UV (default: all 100)")
    g.add_argument("--scenarios", help="scenario set JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uvplan", description="Two-stage UV mission planning under random availability.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a random benchmark instance")
    p.add_argument("--pois", type=int)
    p.add_argument("--mult", type=float, default=FUEL_MULTIPLIERS[0], help="fuel capacity as a multiple of lambda")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stations", type=int, default=4, help="refuelling stations besides the base")
    p.add_argument("--integer-costs", action="store_true", help="floor distances, then repair the metric")
    p.add_argument("--spec", help="generator settings as a genspec JSON file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="solve the two-stage model")
    p.add_argument("instance")
    _scenario_flags(p)
    _solver_flags(p)
    p.add_argument("--no-strengthen", action="store_true")
    p.add_argument("--multi-cut", action="store_true")
    p.add_argument("--log", help="write L-shaped iteration records as JSON lines")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="replay a plan under random UV failures")
    p.add_argument("instance")
    p.add_argument("plan", help="plan or solution JSON file")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--failure", type=float, nargs="+", metavar="P", help="failure probability per UV")
    g.add_argument("--availability", type=float, nargs="+", metavar="PCT")
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--semantics", choices=SEMANTICS, default="per_leg")
    p.add_argument("--provenance", default="plan", help="label stored in the report")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("vss", help="value of the stochastic solution")
    p.add_argument("instance")
    _scenario_flags(p)
    p.add_argument("--sweep", action="store_true", help="last UV at 100/75/25/0%% availability (S1-S4)")
    _solver_flags(p, ("dep", "dep-relaxed", "lshaped"))
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--semantics", choices=SEMANTICS, default=START)
    p.add_argument("--out")
    p.set_defaults(func=cmd_vss)

    p = sub.add_parser("export", help="render routes as DOT, SVG or JSON")
    p.add_argument("instance")
    p.add_argument("plan")
    p.add_argument("--format", choices=io.EXPORT_FORMATS, default="dot")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("bench", help="run the random-instance sweep and write CSV")
    p.add_argument("--sizes", type=int, nargs="+", default=list(BENCH_SIZES))
    p.add_argument("--instances", type=int, default=5, help="instances per size")
    p.add_argument("--mults", type=float, nargs="+", default=list(FUEL_MULTIPLIERS))
    p.add_argument("--availability", type=float, nargs="+", default=list(BENCH_AVAILABILITY),
                   help="availability percentages of the last UV, one run each")
    p.add_argument("--modes", choices=MODES, nargs="+", default=["lshaped"])
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--time-limit", type=float, default=3600.0)
    p.add_argument("--engine", choices=ENGINES, default="highs")
    p.add_argument("--integer-costs", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:  # usage errors and --help
        return int(stop.code or 0)
    try:
        return args.func(args)
    except (UsageError, io.SchemaError, PlanInfeasible, FileNotFoundError, ValueError) as err:
        print(f"uvplan {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

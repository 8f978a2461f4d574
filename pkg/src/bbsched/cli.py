"""Command-line front end.

Subcommands: run (one closed-loop run), experiment (seed x policy grid with
CSV + figures), nominal / oracle (reference costs), validate (theory suites),
dump (debug artifacts).  The MILP backend is chosen by BBS_SOLVER
(fallback | scipy-milp).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .disturbance import DisturbanceConfig, LookaheadWindow, generate_tape
from .dynamics import SystemState
from .harness import (
    RunConfig,
    default_run_config,
    ExperimentRow,
    nominal_cost,
    oracle_cost,
    run_closed_loop,
    run_experiment,
    write_csv,
    write_trace,
)
from .instance import InstanceError, builtin_example, load_instance
from .milp import build_model, write_lp
from .strategy import Policy, Thresholds


class CliError(Exception):
    pass


def _add_instance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--example", type=int, choices=(1, 2, 3, 4), help="built-in benchmark plant")
    p.add_argument("--instance", type=str, help="instance JSON path")
    p.add_argument("--disturbance", type=str, help="disturbance config JSON path")
    p.add_argument("--steps", type=int, default=240)
    p.add_argument("--episodes", type=int, default=None, help="Monte-Carlo episodes per relearn")
    p.add_argument("--gamma2", type=float, default=None)
    p.add_argument("--gamma3", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="real wall-clock CSV columns (nondeterministic)")


def _build_config(args) -> RunConfig:
    if bool(args.example) == bool(args.instance):
        raise CliError("give exactly one of --example N or --instance PATH")
    if args.example:
        cfg = default_run_config(args.example)
    else:
        cfg = RunConfig(instance=load_instance(args.instance))
    cfg.steps = args.steps
    if args.disturbance:
        doc = json.loads(Path(args.disturbance).read_text())
        cfg.disturbance = DisturbanceConfig.from_dict(doc)
    if args.episodes is not None:
        cfg.episodes = args.episodes
    g2 = cfg.thresholds.gamma2 if args.gamma2 is None else args.gamma2
    g3 = cfg.thresholds.gamma3 if args.gamma3 is None else args.gamma3
    cfg.thresholds = Thresholds(gamma1=cfg.thresholds.gamma1, gamma2=g2, gamma3=g3)
    cfg.validate()
    return cfg


def _policy(cfg: RunConfig, text: str) -> Policy:
    return Policy.parse(text, thresholds=cfg.thresholds, episodes=cfg.episodes)


def cmd_run(args) -> int:
    cfg = _build_config(args)
    policy = _policy(cfg, args.strategy)
    record = run_closed_loop(cfg, policy, args.seed, jobs=args.jobs, trace_states=bool(args.trace))
    row = ExperimentRow(
        example=cfg.instance.name,
        scenario_seed=args.seed,
        policy=policy.label(),
        rep=0,
        c=record.cost,
        d=record.nervousness,
        reschedules=record.reschedules,
        c_star=float("nan"),
        c_oracle=float("nan"),
        wall_ms_milp=record.wall_ms_milp,
        wall_ms_mc=record.wall_ms_mc,
        wall_ms_inference=record.wall_ms_inference,
    )
    if args.with_references:
        row.c_star = nominal_cost(cfg).value
        tape = generate_tape(cfg.disturbance, cfg.instance, args.seed, cfg.steps + cfg.h_c + 1)
        row.c_oracle = oracle_cost(cfg, tape).value
    if args.out:
        write_csv([row], args.out, with_timing=args.timing)
    if args.trace:
        write_trace(record, args.trace)
    print(
        f"{cfg.instance.name} seed={args.seed} policy={policy.label()}: "
        f"c={record.cost:.6g} d={record.nervousness} reschedules={record.reschedules}"
    )
    return 0


def cmd_experiment(args) -> int:
    cfg = _build_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    policies = args.strategies.split(",") if args.strategies else [args.strategy]
    rows = run_experiment(
        cfg,
        seeds,
        policies,
        reps=args.reps,
        jobs=args.jobs,
        out_csv=args.out,
        with_timing=args.timing,
        write_figures=not args.no_figures,
    )
    failed = [r for r in rows if r.error]
    print(f"{len(rows)} rows written to {args.out}" + (f" ({len(failed)} failed)" if failed else ""))
    for r in failed:
        print(f"  FAILED {r.policy} seed={r.scenario_seed}: {r.error}", file=sys.stderr)
    return 0 if not failed else 2


def cmd_nominal(args) -> int:
    cfg = _build_config(args)
    ref = nominal_cost(cfg)
    print(f"nominal cost c* = {ref.value:.6g} (bound {ref.bound:.6g}"
          + (", timed out)" if ref.timed_out else ")"))
    return 0


def cmd_oracle(args) -> int:
    cfg = _build_config(args)
    tape = generate_tape(cfg.disturbance, cfg.instance, args.seed, cfg.steps + cfg.h_c + 1)
    ref = oracle_cost(cfg, tape)
    print(f"oracle cost c_inf(seed={args.seed}) = {ref.value:.6g} (bound {ref.bound:.6g}"
          + (", timed out)" if ref.timed_out else ")"))
    return 0


def cmd_validate(args) -> int:
    from . import validation

    if args.suite == "theory":
        results = validation.theory_suites()
    elif args.suite == "ve":
        results = [validation.ve_suite()]
    elif args.suite == "corollary1":
        results = [validation.corollary1_suite()]
    elif args.suite == "theorem1":
        results = [validation.theorem1_suite()]
    else:
        raise CliError(f"unknown suite {args.suite!r}")
    ok = True
    for r in results:
        print(r.line())
        ok = ok and r.passed
    return 0 if ok else 2


def cmd_dump(args) -> int:
    cfg = _build_config(args)
    outdir = Path(args.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    inst = cfg.instance
    tape = generate_tape(cfg.disturbance, inst, args.seed, cfg.steps + cfg.h_c + 1)
    window = LookaheadWindow(tape=tape, t=0, h_c=cfg.h_c)
    horizon = cfg.h_min + cfg.h_c

    if args.dump_lp or args.all:
        model = build_model(SystemState.initial(inst), window, inst, horizon)
        write_lp(model, outdir / f"{inst.name}_t0.lp")
        print(f"wrote {outdir / (inst.name + '_t0.lp')}")
    if args.dump_dag or args.dump_bn or args.all:
        from .impact import ALL_TYPES, parameter_learning, specs_for, structure_learning
        from .milp import SolveLimits, get_backend
        from .strategy import generate_schedule

        backend = get_backend(cfg.solver)
        plan, _, _, _ = generate_schedule(
            SystemState.initial(inst), window, inst, horizon, backend, cfg.limits()
        )
        specs = specs_for(inst, cfg.disturbance, cfg.chain_cap)
        for ltype in ALL_TYPES:
            spec = specs[ltype]
            dag = structure_learning(list(plan.operations), spec.chi_temporal, spec.chi_spatial, inst)
            if args.dump_dag or args.all:
                (outdir / f"{inst.name}_{ltype}.dot").write_text(dag.to_dot())
                print(f"wrote {outdir / f'{inst.name}_{ltype}.dot'}")
            if args.dump_bn or args.all:
                bn = parameter_learning(
                    min(cfg.episodes, 200), dag, ltype, cfg.disturbance, inst, spec,
                    seed=(args.seed, "dump", ltype),
                )
                doc = {
                    "nodes": [list(v.id) for v in bn.variables],
                    "arcs": [[list(a.id), list(b.id)] for a, b in bn.structure.arcs],
                    "cpds": {
                        str(v.id): {str(k): list(row) for k, row in bn.cpds[v.id].table.items()}
                        for v in bn.variables
                    },
                }
                (outdir / f"{inst.name}_{ltype}_bn.json").write_text(json.dumps(doc, indent=1))
                print(f"wrote {outdir / f'{inst.name}_{ltype}_bn.json'}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bbsched",
        description="Closed-loop Bayesian dynamic scheduling for multipurpose batch plants",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one closed-loop run")
    _add_instance_flags(p)
    p.add_argument("--strategy", required=True, help="bayes or periodic:K")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=str, help="CSV output path")
    p.add_argument("--trace", type=str, help="JSON-lines step trace path")
    p.add_argument("--with-references", action="store_true", help="also compute c*, c_inf")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("experiment", help="grid of runs, CSV + figures")
    _add_instance_flags(p)
    p.add_argument("--strategy", default="bayes")
    p.add_argument("--strategies", type=str, help="comma-separated policy list")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--seeds", type=str, help="comma-separated scenario seeds")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("nominal", help="disturbance-free full-horizon optimum")
    _add_instance_flags(p)
    p.set_defaults(func=cmd_nominal)

    p = sub.add_parser("oracle", help="clairvoyant full-horizon optimum for one scenario")
    _add_instance_flags(p)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("validate", help="run the theory validation suites")
    p.add_argument("--suite", default="theory", help="theory | ve | corollary1 | theorem1")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("dump", help="debug artifacts (LP file, dependence DAGs, BN tables)")
    _add_instance_flags(p)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--dir", type=str, required=True)
    p.add_argument("--dump-lp", action="store_true")
    p.add_argument("--dump-dag", action="store_true")
    p.add_argument("--dump-bn", action="store_true")
    p.add_argument("--all", action="store_true")
    p.set_defaults(func=cmd_dump)

    return ap


def main(argv: list[str] | None = None) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (CliError, InstanceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

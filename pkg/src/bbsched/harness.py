"""Closed-loop driver, reference costs, and the multi-seed experiment runner.

One run walks the plant through `steps` one-hour intervals.  Each step the
policy decides whether to reschedule (the Bayesian policy from realised and
posterior impacts, the periodic baseline from its calendar), the standing
plan's action for the step is reconciled against the realised state and
executed, and cost/nervousness accumulate.  Reference costs solve one MILP
over the whole span: nominal with every disturbance off, oracle with the
scenario tape injected as known data.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from pathlib import Path

from .disturbance import DisturbanceConfig, LookaheadWindow, ScenarioTape, advance, generate_tape
from .dynamics import SystemState, reconcile, step_cost, step_nervousness, transition
from .impact import (
    ALL_TYPES,
    TapeInfo,
    bn_structure_for,
    impact_propagation,
    parameter_learning,
    specs_for,
    structure_learning,
)
from .instance import StnInstance, builtin_example
from .milp import SolveLimits, build_model, demand_over, get_backend
from .schedule import Schedule
from .strategy import (
    Policy,
    Thresholds,
    generate_schedule,
    how_to_reschedule,
    identify_eu,
    identify_pu,
    periodic_due,
    posterior_unrecoverability,
    when_to_reschedule,
)

DEFAULT_STEPS = 240
DEFAULT_H_C = 12
DEFAULT_H_MIN = 48

# Per-example algorithm defaults: Monte-Carlo episodes, gamma2, gamma3.
EXAMPLE_DEFAULTS = {
    1: (1000, 0.5, 0.5),
    2: (1000, 0.5, 0.5),
    3: (2500, 0.5, 0.5),
    4: (4000, 0.4, 0.6),
}


class HarnessError(Exception):
    pass


@dataclass
class RunConfig:
    instance: StnInstance
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    steps: int = DEFAULT_STEPS
    h_c: int = DEFAULT_H_C
    h_min: int = DEFAULT_H_MIN
    episodes: int = 1000
    thresholds: Thresholds = field(default_factory=Thresholds)
    chain_cap: int = 8
    solver: str | None = None
    time_limit_s: float = 300.0
    rel_gap: float = 0.01
    example: int | None = None

    def validate(self) -> None:
        if self.h_c > self.h_min:
            raise HarnessError("certainty horizon must not exceed the minimum horizon")
        if self.steps <= 0:
            return
        if self.steps <= self.h_min:
            raise HarnessError("steps must exceed the minimum horizon")

    def limits(self) -> SolveLimits:
        return SolveLimits(time_limit_s=self.time_limit_s, rel_gap=self.rel_gap)


def default_run_config(example: int, **overrides) -> RunConfig:
    episodes, g2, g3 = EXAMPLE_DEFAULTS[example]
    cfg = RunConfig(
        instance=builtin_example(example),
        episodes=episodes,
        thresholds=Thresholds(gamma2=g2, gamma3=g3),
        example=example,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


@dataclass
class StepRecord:
    t: int
    cost: float
    nervousness: int
    rescheduled: bool
    eu: int
    pu: int
    reconcile_notes: list[str]
    state_digest: dict


@dataclass
class RunRecord:
    policy: str
    scenario_seed: int
    rep: int
    cost: float
    nervousness: int
    reschedules: int
    fallbacks: int
    wall_ms_milp: float
    wall_ms_mc: float
    wall_ms_inference: float
    trace: list[StepRecord] = field(default_factory=list)

    def recompute_totals(self) -> tuple[float, int]:
        """Accounting closure: re-sum the trace independently."""
        return (
            float(sum(Fraction(str(r.cost)) for r in self.trace)),
            sum(r.nervousness for r in self.trace),
        )


def _state_digest(state: SystemState) -> dict:
    return {
        "inventory": {k: float(v) for k, v in state.inventory.items()},
        "backlog": {k: float(v) for k, v in state.backlog.items()},
        "running": {
            f"{i}@{j}": [r, float(state.batch_size[(i, j)])]
            for (i, j), r in state.elapsed.items()
            if r > 0
        },
    }


def run_closed_loop(
    config: RunConfig,
    policy: Policy,
    scenario_seed: int,
    rep: int = 0,
    jobs: int = 1,
    trace_states: bool = False,
) -> RunRecord:
    config.validate()
    inst = config.instance
    if config.steps == 0:
        return RunRecord(
            policy=policy.label(), scenario_seed=scenario_seed, rep=rep,
            cost=0.0, nervousness=0, reschedules=0, fallbacks=0,
            wall_ms_milp=0.0, wall_ms_mc=0.0, wall_ms_inference=0.0,
        )

    backend = get_backend(config.solver)
    limits = config.limits()
    tape = generate_tape(config.disturbance, inst, scenario_seed, config.steps + config.h_c + 1)
    window = LookaheadWindow(tape=tape, t=0, h_c=config.h_c)
    state = SystemState.initial(inst)
    specs = specs_for(inst, config.disturbance, config.chain_cap)
    gamma1 = dict(policy.thresholds.gamma1)

    plan: Schedule | None = None
    op_dags: dict[str, object] = {}
    bns: dict[str, object] = {}

    cost = Fraction(0)
    nervousness = 0
    reschedules = 0
    fallbacks = 0
    wall_milp = 0.0
    wall_mc = 0.0
    wall_inf = 0.0
    trace: list[StepRecord] = []

    for t in range(config.steps):
        eu: set = set()
        pu: set = set()
        trigger = plan is None
        h_t = plan.end - t if plan is not None else 0

        if plan is not None and policy.kind == "bayes":
            t_inf = time.perf_counter()
            window_ops = plan.slice(t, t + config.h_c)
            beyond_ops = plan.slice(t + config.h_c, plan.end)
            evidence: dict[str, dict] = {}
            realized: dict[str, dict] = {}
            info_view = TapeInfo(window)
            for ltype in ALL_TYPES:
                dag = op_dags.get(ltype)
                if dag is None:
                    continue
                sub = dag.restricted_to(window_ops)
                assignment = impact_propagation(ltype, sub, info_view, inst, specs[ltype])
                realized[ltype] = assignment.impact
                evidence[ltype] = assignment.impact
            eu = identify_eu(realized, window_ops, gamma1)
            posteriors, _surprises = posterior_unrecoverability(
                bns, evidence, beyond_ops, specs
            )
            pu = identify_pu(posteriors, specs, gamma1, policy.thresholds.gamma2)
            remaining = plan.slice(t, plan.end)
            trigger = when_to_reschedule(remaining, eu, pu, policy.thresholds.gamma3)
            if h_t <= config.h_min:
                trigger = True
            wall_inf += time.perf_counter() - t_inf
        elif plan is not None and policy.kind == "periodic":
            trigger = periodic_due(t, 0, policy.period, plan, config.h_min)

        rescheduled = False
        if trigger:
            horizon = min(h_t + config.h_c, config.h_min + config.h_c)
            if plan is None:
                horizon = config.h_min + config.h_c
            t_milp = time.perf_counter()
            if policy.kind == "bayes" and plan is not None:
                new_plan, _action, _result, fell_back = how_to_reschedule(
                    state, plan, window, eu, pu, horizon, inst, backend, limits
                )
            else:
                new_plan, _action, _result, fell_back = generate_schedule(
                    state, window, inst, horizon, backend, limits, old_plan=plan
                )
            wall_milp += time.perf_counter() - t_milp
            d_step = step_nervousness(new_plan, plan, t) if plan is not None else 0
            nervousness += d_step
            plan = new_plan
            reschedules += 1
            fallbacks += int(fell_back)
            rescheduled = True
            if policy.kind == "bayes":
                t_mc = time.perf_counter()
                plan_ops = plan.slice(t, plan.end)
                for ltype in ALL_TYPES:
                    spec = specs[ltype]
                    dag = structure_learning(
                        plan_ops, spec.chi_temporal, spec.chi_spatial, inst
                    )
                    op_dags[ltype] = dag
                    bns[ltype] = parameter_learning(
                        policy.episodes,
                        dag,
                        ltype,
                        config.disturbance,
                        inst,
                        spec,
                        seed=(scenario_seed, rep, "mc", t, ltype),
                        jobs=jobs,
                    )
                wall_mc += time.perf_counter() - t_mc
        else:
            d_step = 0

        info = tape.info_at(t)
        planned = plan_action(plan, t, inst)
        executed, notes = reconcile(state, planned, info, inst)
        c_step = step_cost(state, executed, inst)
        cost += c_step
        trace.append(
            StepRecord(
                t=t,
                cost=float(c_step),
                nervousness=d_step if rescheduled else 0,
                rescheduled=rescheduled,
                eu=len(eu),
                pu=len(pu),
                reconcile_notes=notes,
                state_digest=_state_digest(state) if trace_states else {},
            )
        )
        state = transition(state, executed, info, inst)
        window = advance(window)

    return RunRecord(
        policy=policy.label(),
        scenario_seed=scenario_seed,
        rep=rep,
        cost=float(cost),
        nervousness=nervousness,
        reschedules=reschedules,
        fallbacks=fallbacks,
        wall_ms_milp=wall_milp * 1e3,
        wall_ms_mc=wall_mc * 1e3,
        wall_ms_inference=wall_inf * 1e3,
        trace=trace,
    )


def plan_action(plan: Schedule | None, t: int, inst: StnInstance):
    from .dynamics import ActionVector

    if plan is None:
        return ActionVector.empty(inst)
    action = ActionVector(
        initiate={(p.task, p.machine): 0 for p in inst.pairs},
        input_size={(p.task, p.machine): Fraction(0) for p in inst.pairs},
        purchase={k: plan.purchase_at(k, t) for k in inst.raw_materials()},
        ship={k: plan.shipment_at(k, t) for k in inst.products()},
    )
    for op in plan.initiations_at(t):
        action.initiate[(op.task, op.machine)] = 1
        action.input_size[(op.task, op.machine)] = op.size
    return action


# -- reference costs ---------------------------------------------------------


@dataclass
class ReferenceCost:
    value: float
    bound: float
    timed_out: bool

    @property
    def lower_bound(self) -> float:
        return min(self.value, self.bound)


def _full_span_cost(
    instance: StnInstance, window: LookaheadWindow, steps: int, limits: SolveLimits, solver
) -> ReferenceCost:
    model = build_model(
        SystemState.initial(instance),
        window,
        instance,
        horizon=steps,
        backlog_demands=demand_over(window, instance, 0, steps),
        objective_end=steps - 1,
    )
    backend = get_backend(solver)
    sol = backend.solve(model, "f1", limits)
    if not sol.ok:
        raise HarnessError(f"reference MILP failed: {sol.status}")
    return ReferenceCost(
        value=sol.objective, bound=sol.bound, timed_out=(sol.status == "timeout")
    )


def nominal_cost(config: RunConfig) -> ReferenceCost:
    """Full-horizon optimum with every disturbance at nominal (baseline demand only)."""
    inst = config.instance
    quiet = DisturbanceConfig.disabled()
    tape = generate_tape(quiet, inst, seed=0, steps=config.steps + 1)
    window = LookaheadWindow(tape=tape, t=0, h_c=config.steps)
    return _full_span_cost(inst, window, config.steps, config.limits(), config.solver)


def oracle_cost(config: RunConfig, tape: ScenarioTape) -> ReferenceCost:
    """Full-horizon optimum with the tape's realisations known in advance."""
    window = LookaheadWindow(tape=tape, t=0, h_c=tape.length - 1)
    return _full_span_cost(config.instance, window, config.steps, config.limits(), config.solver)


# -- experiments -------------------------------------------------------------

CSV_HEADER = (
    "example,scenario_seed,policy,rep,c,d,reschedules,c_star,c_oracle,"
    "wall_ms_milp,wall_ms_mc,wall_ms_inference"
)


@dataclass
class ExperimentRow:
    example: str
    scenario_seed: int
    policy: str
    rep: int
    c: float
    d: int
    reschedules: int
    c_star: float
    c_oracle: float
    wall_ms_milp: float
    wall_ms_mc: float
    wall_ms_inference: float
    error: str = ""

    def csv(self, with_timing: bool) -> str:
        walls = (
            (self.wall_ms_milp, self.wall_ms_mc, self.wall_ms_inference)
            if with_timing
            else (0.0, 0.0, 0.0)
        )
        cells = [
            self.example,
            str(self.scenario_seed),
            self.policy,
            str(self.rep),
            repr(self.c),
            str(self.d),
            str(self.reschedules),
            repr(self.c_star),
            repr(self.c_oracle),
            f"{walls[0]:.0f}",
            f"{walls[1]:.0f}",
            f"{walls[2]:.0f}",
        ]
        return ",".join(cells)


def _run_cell(args) -> tuple[tuple, RunRecord | str]:
    config, policy_text, seed, rep, jobs = args
    try:
        policy = Policy.parse(
            policy_text, thresholds=config.thresholds, episodes=config.episodes
        )
        record = run_closed_loop(config, policy, seed, rep=rep, jobs=1)
        return (seed, policy_text, rep), record
    except Exception as exc:  # per-cell failures recorded, table still emitted
        return (seed, policy_text, rep), f"{type(exc).__name__}: {exc}"


def run_experiment(
    config: RunConfig,
    seeds: list[int],
    policies: list[str],
    reps: int = 1,
    jobs: int = 1,
    out_csv: str | Path | None = None,
    with_timing: bool = False,
    write_figures: bool = True,
) -> list[ExperimentRow]:
    """Grid of (scenario seed) x (policy) x (rep) runs plus reference costs."""
    if not seeds:
        raise HarnessError("need at least one scenario seed")
    if not policies:
        raise HarnessError("need at least one policy")
    inst_name = config.instance.name

    c_star = nominal_cost(config)
    oracles: dict[int, ReferenceCost] = {}
    for seed in seeds:
        tape = generate_tape(
            config.disturbance, config.instance, seed, config.steps + config.h_c + 1
        )
        oracles[seed] = oracle_cost(config, tape)

    cells = [
        (config, policy, seed, rep, 1)
        for seed in seeds
        for policy in policies
        for rep in range(reps)
    ]
    if jobs > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_run_cell, cells))
    else:
        results = dict(map(_run_cell, cells))

    rows: list[ExperimentRow] = []
    for seed in seeds:
        for policy in policies:
            for rep in range(reps):
                key = (seed, policy, rep)
                outcome = results[key]
                if isinstance(outcome, str):
                    rows.append(
                        ExperimentRow(
                            example=inst_name, scenario_seed=seed, policy=policy,
                            rep=rep, c=float("nan"), d=0, reschedules=0,
                            c_star=c_star.value, c_oracle=oracles[seed].value,
                            wall_ms_milp=0, wall_ms_mc=0, wall_ms_inference=0,
                            error=outcome,
                        )
                    )
                    continue
                rows.append(
                    ExperimentRow(
                        example=inst_name,
                        scenario_seed=seed,
                        policy=policy,
                        rep=rep,
                        c=outcome.cost,
                        d=outcome.nervousness,
                        reschedules=outcome.reschedules,
                        c_star=c_star.value,
                        c_oracle=oracles[seed].value,
                        wall_ms_milp=outcome.wall_ms_milp,
                        wall_ms_mc=outcome.wall_ms_mc,
                        wall_ms_inference=outcome.wall_ms_inference,
                    )
                )

    if out_csv is not None:
        write_csv(rows, out_csv, with_timing=with_timing)
        if write_figures:
            from .report import render_experiment_figures

            render_experiment_figures(rows, Path(out_csv))
    return rows


def write_csv(rows: list[ExperimentRow], path: str | Path, with_timing: bool = False) -> None:
    """Atomic CSV emission (write then rename)."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    body = "\n".join([CSV_HEADER] + [r.csv(with_timing) for r in rows]) + "\n"
    tmp.write_text(body)
    tmp.replace(path)


def write_trace(record: RunRecord, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w") as fh:
        for rec in record.trace:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
    tmp.replace(path)

"""Rescheduling policies.

An operation is *evidentially* unrecoverable when its realised impact within
the certainty horizon reaches the per-type threshold, and *probabilistically*
unrecoverable when the posterior chance that any disturbance type pushes it
over its threshold reaches gamma2.  Rescheduling triggers when the
unrecoverable fraction of the schedule reaches gamma3; the new schedule comes
from a warm-started hierarchical MILP solve that keeps every still-sound
start time fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .bn import DiscreteBn, ZeroEvidenceError, variable_elimination
from .disturbance import LookaheadWindow
from .dynamics import SystemState
from .instance import StnInstance
from .impact import ALL_TYPES, ImpactSpec
from .milp import (
    MilpInfeasible,
    SolveLimits,
    apply_fixings,
    build_model,
    decode,
    plan_assignment,
    solve_hierarchical,
)
from .schedule import Operation, Schedule


@dataclass(frozen=True)
class Thresholds:
    gamma1: dict[str, int] = field(
        default_factory=lambda: {"breakdown": 1, "delay": 1, "yield": 100}
    )
    gamma2: float = 0.5
    gamma3: float = 0.5

    def validate(self) -> None:
        if not (0 <= self.gamma2 <= 1):
            raise ValueError("gamma2 must be in [0,1]")
        if self.gamma3 < 0:
            raise ValueError("gamma3 must be >= 0")


@dataclass(frozen=True)
class Policy:
    kind: str  # "bayes" | "periodic"
    period: int = 0  # periodic only
    thresholds: Thresholds = field(default_factory=Thresholds)
    episodes: int = 1000

    @staticmethod
    def parse(text: str, thresholds: Thresholds | None = None, episodes: int = 1000) -> "Policy":
        th = thresholds or Thresholds()
        if text == "bayes":
            return Policy(kind="bayes", thresholds=th, episodes=episodes)
        if text.startswith("periodic:"):
            k = int(text.split(":", 1)[1])
            if k < 1:
                raise ValueError("periodic frequency must be >= 1")
            return Policy(kind="periodic", period=k, thresholds=th, episodes=episodes)
        raise ValueError(f"unknown policy {text!r} (use 'bayes' or 'periodic:K')")

    def label(self) -> str:
        return "bayes" if self.kind == "bayes" else f"periodic:{self.period}"


def identify_eu(
    realized: dict[str, dict[Operation, int]],
    ops: list[Operation],
    gamma1: dict[str, int],
) -> set[Operation]:
    """Operations whose realised impact reaches the threshold for any type."""
    out: set[Operation] = set()
    for op in ops:
        for ltype, impacts in realized.items():
            if op in impacts and impacts[op] >= gamma1[ltype]:
                out.add(op)
                break
    return out


def unrecoverable_probability(
    posterior: tuple[float, ...], spec: ImpactSpec, gamma1: int
) -> float:
    return sum(p for value, p in zip(spec.support, posterior) if value >= gamma1)


def identify_pu(
    posteriors: dict[str, dict[Operation, tuple[float, ...]]],
    specs: dict[str, ImpactSpec],
    gamma1: dict[str, int],
    gamma2: float,
) -> set[Operation]:
    """Threshold the combined chance that at least one type is unrecoverable.

    Mutual independence of the disturbance types gives
    1 - prod_l (1 - P(Z_l >= gamma1_l | evidence)).
    """
    ops: set[Operation] = set()
    for op_map in posteriors.values():
        ops.update(op_map)
    out: set[Operation] = set()
    for op in ops:
        survive = 1.0
        for ltype, op_map in posteriors.items():
            if op not in op_map:
                continue
            p_bad = unrecoverable_probability(op_map[op], specs[ltype], gamma1[ltype])
            survive *= 1.0 - p_bad
        if 1.0 - survive >= gamma2:
            out.add(op)
    return out


def when_to_reschedule(
    ops: list[Operation], eu: set[Operation], pu: set[Operation], gamma3: float
) -> bool:
    if not ops:
        return True  # nothing scheduled: force regeneration
    return len(eu | pu) / len(ops) >= gamma3


def generate_schedule(
    state: SystemState,
    window: LookaheadWindow,
    instance: StnInstance,
    horizon: int,
    backend,
    limits: SolveLimits,
    old_plan: Schedule | None = None,
    keep: set[Operation] | None = None,
):
    """One (possibly warm-started) hierarchical solve, decoded to a schedule.

    Returns (schedule, first-step action, result, fell_back): if the fixings
    make the model infeasible, retries once as a complete reschedule.
    """
    previous = set()
    if old_plan is not None:
        previous = {
            (o.task, o.machine, o.start)
            for o in old_plan.operations
            if window.t <= o.start <= window.t + horizon
        }

    def attempt(fix_ops: set[Operation]):
        model = build_model(
            state, window, instance, horizon, previous_starts=previous
        )
        if fix_ops:
            apply_fixings(model, {(o.task, o.machine, o.start) for o in fix_ops})
        hint = plan_assignment(model, old_plan) if old_plan is not None else None
        result = solve_hierarchical(model, backend, limits, hint=hint)
        schedule, action = decode(result.solution.values, model)
        return schedule, action, result

    keep = keep or set()
    fell_back = False
    try:
        schedule, action, result = attempt(keep)
    except MilpInfeasible:
        if not keep:
            raise
        fell_back = True
        schedule, action, result = attempt(set())
    return schedule, action, result, fell_back


def how_to_reschedule(
    state: SystemState,
    old_plan: Schedule | None,
    window: LookaheadWindow,
    eu: set[Operation],
    pu: set[Operation],
    horizon: int,
    instance: StnInstance,
    backend,
    limits: SolveLimits,
):
    """Warm-started rescheduling: fix starts of sound operations, re-solve."""
    keep: set[Operation] = set()
    if old_plan is not None:
        bad = eu | pu
        keep = {
            o
            for o in old_plan.operations
            if o not in bad and window.t <= o.start <= window.t + horizon
        }
    return generate_schedule(
        state, window, instance, horizon, backend, limits, old_plan=old_plan, keep=keep
    )


def periodic_due(t: int, t0: int, period: int, plan: Schedule | None, h_min: int) -> bool:
    """Complete-reschedule trigger: every K steps, or when the horizon runs low."""
    if plan is None:
        return True
    if (t - t0) % period == 0:
        return True
    return plan.end - t < h_min


def posterior_unrecoverability(
    bns: dict[str, DiscreteBn],
    evidence: dict[str, dict[Operation, int]],
    query_ops: list[Operation],
    specs: dict[str, ImpactSpec],
) -> tuple[dict[str, dict[Operation, tuple[float, ...]]], list[str]]:
    """Per-type posteriors for every queried operation.

    Evidence the learned network considers impossible (a finite-sample
    artifact) makes that type maximally suspicious: every queried operation
    gets a point mass on the support top for that type.
    """
    posteriors: dict[str, dict[Operation, tuple[float, ...]]] = {}
    surprises: list[str] = []
    for ltype in ALL_TYPES:
        bn = bns.get(ltype)
        if bn is None:
            continue
        spec = specs[ltype]
        ev = {op.key: z for op, z in evidence.get(ltype, {}).items()}
        op_map: dict[Operation, tuple[float, ...]] = {}
        worst = tuple(
            1.0 if i == len(spec.support) - 1 else 0.0 for i in range(len(spec.support))
        )
        for op in query_ops:
            try:
                op_map[op] = variable_elimination(bn, op.key, ev)
            except ZeroEvidenceError:
                surprises.append(ltype)
                op_map = {op: worst for op in query_ops}
                break
        posteriors[ltype] = op_map
    return posteriors, surprises

"""Three-stage lexicographic solve: min cost, then max consistency with the
previous schedule, then min exponentially weighted initiation lateness.

Each stage seeds the next with its own solution as a warm-start incumbent and
locks in the achieved value with a cut (small slack for float safety), so the
final answer never degrades an earlier objective beyond the solver gap.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backends import MilpInfeasible, Solution, SolveLimits
from .model import MilpModel


@dataclass
class HierarchicalResult:
    solution: Solution
    f1: float
    f2: float
    f3: float
    timed_out: bool
    stages: list[Solution]


def _cut_slack(value: float) -> float:
    return 1e-6 * max(1.0, abs(value))


def _diagnose(model: MilpModel, backend, limits) -> str:
    """Cheap infeasibility probe: is it the warm-start fixings or the core rows?"""
    relaxed = False
    for idx, name in enumerate(model.names):
        if name[0] == "x" and model.lb[idx] == 1.0:
            model.lb[idx] = 0.0
            relaxed = True
    if not relaxed:
        return "core constraints (initial state / occupancy / balances)"
    probe = backend.solve(model, "f1", SolveLimits(time_limit_s=min(30.0, limits.time_limit_s), rel_gap=0.5))
    if probe.ok:
        return "warm-start fixings conflict with observed disturbances"
    return "core constraints (initial state / occupancy / balances)"


def solve_hierarchical(
    model: MilpModel,
    backend,
    limits: SolveLimits = SolveLimits(),
    hint: dict[tuple, float] | None = None,
) -> HierarchicalResult:
    stages: list[Solution] = []

    s1 = backend.solve(model, "f1", limits, hint=hint)
    stages.append(s1)
    if not s1.ok:
        hint_msg = _diagnose(model, backend, limits)
        raise MilpInfeasible("cost stage found no feasible schedule", hint=hint_msg)
    model.add_objective_cut("f1", "<=", s1.objective + _cut_slack(s1.objective), "cut-f1")

    s2 = backend.solve(model, "f2", limits, hint=s1.values)
    stages.append(s2)
    if not s2.ok:  # the f1 cut admits s1 itself, so this cannot trigger in practice
        s2 = s1
    model.add_objective_cut("f2", ">=", s2.objective - _cut_slack(s2.objective), "cut-f2")

    s3 = backend.solve(model, "f3", limits, hint=s2.values)
    stages.append(s3)
    if not s3.ok:
        s3 = s2

    def value_of(name: str, sol: Solution) -> float:
        sense, terms, const = model.objectives[name]
        return const + sum(coef * sol.values.get(model.names[i], 0.0) for i, coef in terms.items())

    return HierarchicalResult(
        solution=s3,
        f1=value_of("f1", s3),
        f2=value_of("f2", s3),
        f3=value_of("f3", s3),
        timed_out=any(s.status == "timeout" for s in stages),
        stages=stages,
    )

"""Discrete-time plant simulator.

State, action and information vectors follow the dynamic-system view of the
plant; `transition` advances one step with exact fraction arithmetic.  The
rules, per machine-task pair:

* idle, no initiation            -> stays idle
* initiation (always allowed unless a batch keeps running) -> elapsed 1
* breakdown during the last interval kills the running batch, yield zero
* a batch whose varied duration is reached completes and pays out
  size * yield_factor into the produced materials
* otherwise the batch continues unchanged; a running, continuing batch takes
  priority and initiation on that machine is infeasible

Infeasible actions raise; they are never silently repaired here.  The
closed-loop harness reconciles stale plans explicitly before calling in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .instance import StnInstance
from .schedule import Schedule

ZERO = Fraction(0)


class TransitionError(Exception):
    """Action infeasible against the current state."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def frac_ceil(x: Fraction) -> int:
    return -((-x.numerator) // x.denominator)


@dataclass(frozen=True)
class SystemState:
    elapsed: dict[tuple[str, str], int]
    batch_size: dict[tuple[str, str], Fraction]
    inventory: dict[str, Fraction]
    backlog: dict[str, Fraction]

    @staticmethod
    def initial(instance: StnInstance) -> "SystemState":
        return SystemState(
            elapsed={(p.task, p.machine): 0 for p in instance.pairs},
            batch_size={(p.task, p.machine): ZERO for p in instance.pairs},
            inventory={k: m.initial_inventory for k, m in instance.materials.items()},
            backlog={k: ZERO for k in instance.products()},
        )

    def running_on(self, machine: str) -> tuple[str, str] | None:
        for (i, j), r in self.elapsed.items():
            if j == machine and r > 0:
                return (i, j)
        return None


@dataclass(frozen=True)
class ActionVector:
    initiate: dict[tuple[str, str], int]
    input_size: dict[tuple[str, str], Fraction]
    purchase: dict[str, Fraction]
    ship: dict[str, Fraction]

    @staticmethod
    def empty(instance: StnInstance) -> "ActionVector":
        return ActionVector(
            initiate={(p.task, p.machine): 0 for p in instance.pairs},
            input_size={(p.task, p.machine): ZERO for p in instance.pairs},
            purchase={k: ZERO for k in instance.raw_materials()},
            ship={k: ZERO for k in instance.products()},
        )


@dataclass(frozen=True)
class InfoVector:
    """Realised disturbances over one interval.

    time_factor/yield_factor are keyed (task, machine, elapsed) and already
    carry the diagonal propagation: the factor seen at elapsed n equals the
    factor drawn when the batch started n steps earlier.  baseline_demand and
    intermittent_demand ride along because the transition has no time index
    of its own.
    """

    urgent_demand: dict[str, Fraction]
    breakdown: dict[str, int]
    time_factor: dict[tuple[str, str, int], Fraction]
    yield_factor: dict[tuple[str, str, int], Fraction]
    baseline_demand: dict[str, Fraction] = field(default_factory=dict)
    intermittent_demand: dict[str, Fraction] = field(default_factory=dict)

    @staticmethod
    def quiet(instance: StnInstance, max_elapsed: int = 12) -> "InfoVector":
        one = Fraction(1)
        tf = {}
        for p in instance.pairs:
            for n in range(max_elapsed + 1):
                tf[(p.task, p.machine, n)] = one
        return InfoVector(
            urgent_demand={k: ZERO for k in instance.products()},
            breakdown={j: 0 for j in instance.machines},
            time_factor=dict(tf),
            yield_factor=dict(tf),
        )


def varied_duration(instance: StnInstance, info: InfoVector, i: str, j: str, n: int) -> int:
    tau = instance.pair(i, j).nominal_time
    v = info.time_factor[(i, j, n)]
    return frac_ceil(tau * v)


def feasibility_check(
    state: SystemState, action: ActionVector, info: InfoVector, instance: StnInstance
) -> list[str]:
    """Return the list of violated rules (empty when the action is executable)."""
    violations: list[str] = []
    pairs = [(p.task, p.machine) for p in instance.pairs]

    starts_per_machine: dict[str, list[str]] = {}
    for (i, j) in pairs:
        x = action.initiate.get((i, j), 0)
        y = action.input_size.get((i, j), ZERO)
        if x not in (0, 1):
            violations.append(f"initiate[{i},{j}] must be binary")
            continue
        if x == 1:
            starts_per_machine.setdefault(j, []).append(i)
            pair = instance.pair(i, j)
            if not (pair.batch_min <= y <= pair.batch_max):
                violations.append(
                    f"batch bounds: input_size[{i},{j}]={float(y):g} outside "
                    f"[{float(pair.batch_min):g},{float(pair.batch_max):g}]"
                )
        elif y != 0:
            violations.append(f"input_size[{i},{j}] nonzero without initiation")

    for j, tasks in starts_per_machine.items():
        if len(tasks) > 1:
            violations.append(f"occupancy: machine {j} gets {len(tasks)} initiations")
        running = state.running_on(j)
        if running is not None:
            ri, rj = running
            r = state.elapsed[running]
            u = info.breakdown[j]
            dur = varied_duration(instance, info, ri, rj, r)
            if u == 0 and dur > r:
                # the running batch takes priority over any new initiation
                violations.append(
                    f"occupancy: machine {j} busy with {ri} (elapsed {r} of {dur})"
                )

    # Material balance: completions pay in, initiations and shipments draw out.
    inflow: dict[str, Fraction] = {k: ZERO for k in instance.materials}
    for (i, j) in pairs:
        r = state.elapsed[(i, j)]
        if r > 0 and info.breakdown[j] == 0:
            dur = varied_duration(instance, info, i, j, r)
            if dur == r:
                w = info.yield_factor[(i, j, r)]
                for k, rho in instance.recipes[i].produced().items():
                    inflow[k] += rho * state.batch_size[(i, j)] * w
    for k in instance.raw_materials():
        p = action.purchase.get(k, ZERO)
        if p < 0:
            violations.append(f"purchase[{k}] must be >= 0")
        bound = instance.supply_bound(k)
        if bound is not None and p > bound:
            violations.append(f"purchase[{k}]={float(p):g} exceeds supply bound {float(bound):g}")
        inflow[k] += p
    for k in instance.products():
        q = action.ship.get(k, ZERO)
        if q < 0:
            violations.append(f"ship[{k}] must be >= 0")

    for k in instance.materials:
        outflow = ZERO
        for (i, j) in pairs:
            if action.initiate.get((i, j), 0) == 1:
                rho = instance.recipes[i].consumed().get(k)
                if rho is not None:
                    outflow += -rho * action.input_size[(i, j)]
        available = state.inventory[k] + inflow[k]
        if outflow > available:
            violations.append(
                f"inventory: consuming {float(outflow):g} of {k} "
                f"with only {float(available):g} available"
            )
            continue
        q = action.ship.get(k, ZERO)
        if q > available - outflow:
            violations.append(
                f"shipment: shipping {float(q):g} of {k} "
                f"with only {float(available - outflow):g} available"
            )
    for k in instance.products():
        q = action.ship.get(k, ZERO)
        owed = (
            state.backlog[k]
            + info.baseline_demand.get(k, ZERO)
            + info.intermittent_demand.get(k, ZERO)
            + info.urgent_demand.get(k, ZERO)
        )
        if q > owed:
            violations.append(
                f"shipment: shipping {float(q):g} of {k} exceeds owed {float(owed):g}"
            )
    return violations


def transition(
    state: SystemState, action: ActionVector, info: InfoVector, instance: StnInstance
) -> SystemState:
    violations = feasibility_check(state, action, info, instance)
    if violations:
        raise TransitionError(violations)

    pairs = [(p.task, p.machine) for p in instance.pairs]
    elapsed: dict[tuple[str, str], int] = {}
    batch: dict[tuple[str, str], Fraction] = {}
    payout: dict[tuple[str, str], Fraction] = {}

    for (i, j) in pairs:
        r = state.elapsed[(i, j)]
        x = action.initiate.get((i, j), 0)
        u = info.breakdown[j]
        continuing = False
        payout[(i, j)] = ZERO
        if r > 0:
            dur = varied_duration(instance, info, i, j, r)
            if u == 0 and dur > r:
                continuing = True
            elif u == 0 and dur == r:
                payout[(i, j)] = state.batch_size[(i, j)] * info.yield_factor[(i, j, r)]
            # u == 1: batch killed, payout stays zero
        if continuing:
            elapsed[(i, j)] = r + 1
            batch[(i, j)] = state.batch_size[(i, j)]
        elif x == 1:
            elapsed[(i, j)] = 1
            batch[(i, j)] = action.input_size[(i, j)]
        else:
            elapsed[(i, j)] = 0
            batch[(i, j)] = ZERO

    inventory: dict[str, Fraction] = {}
    for k in instance.materials:
        s = state.inventory[k]
        for (i, j) in pairs:
            if payout[(i, j)] > 0:
                rho = instance.recipes[i].produced().get(k)
                if rho is not None:
                    s += rho * payout[(i, j)]
            if action.initiate.get((i, j), 0) == 1:
                rho = instance.recipes[i].consumed().get(k)
                if rho is not None:
                    s += rho * action.input_size[(i, j)]
        s += action.purchase.get(k, ZERO)
        s -= action.ship.get(k, ZERO)
        inventory[k] = s

    backlog: dict[str, Fraction] = {}
    for k in instance.products():
        backlog[k] = (
            state.backlog[k]
            + info.baseline_demand.get(k, ZERO)
            + info.intermittent_demand.get(k, ZERO)
            + info.urgent_demand.get(k, ZERO)
            - action.ship.get(k, ZERO)
        )

    return SystemState(elapsed=elapsed, batch_size=batch, inventory=inventory, backlog=backlog)


def step_cost(state: SystemState, action: ActionVector, instance: StnInstance) -> Fraction:
    """Setup + inventory holding + backlog cost for one interval."""
    c = ZERO
    for p in instance.pairs:
        if action.initiate.get((p.task, p.machine), 0) == 1:
            c += p.start_cost
    for k, m in instance.materials.items():
        c += m.inventory_cost * state.inventory[k]
        if m.backlog_cost is not None:
            c += m.backlog_cost * state.backlog[k]
    return c


def step_nervousness(new_plan: Schedule, old_plan: Schedule, t: int) -> int:
    """Bidirectional count of batch-initiation differences over the overlap.

    The overlap runs from t to the earlier of the two plan ends; a plan
    advanced one step without rescheduling therefore scores zero against its
    predecessor.
    """
    lo = max(t, new_plan.start, old_plan.start)
    hi = min(new_plan.end, old_plan.end)
    new_keys = {k for k in new_plan.starts() if lo <= k[0] <= hi}
    old_keys = {k for k in old_plan.starts() if lo <= k[0] <= hi}
    return len(new_keys ^ old_keys)


def reconcile(
    state: SystemState, planned: ActionVector, info: InfoVector, instance: StnInstance
) -> tuple[ActionVector, list[str]]:
    """Convert a possibly stale planned action into the executable one.

    Plant priority rules: initiations on busy machines or without input
    material are dropped; shipments and purchases are clipped to what
    physically exists / is owed.  Every adjustment is reported.
    """
    notes: list[str] = []
    initiate = dict(planned.initiate)
    input_size = dict(planned.input_size)
    purchase = dict(planned.purchase)
    ship = dict(planned.ship)
    pairs = [(p.task, p.machine) for p in instance.pairs]

    for (i, j) in pairs:
        initiate.setdefault((i, j), 0)
        input_size.setdefault((i, j), ZERO)

    # running batches take priority
    for (i, j) in pairs:
        if initiate[(i, j)] != 1:
            continue
        running = state.running_on(j)
        if running is None:
            continue
        ri, rj = running
        r = state.elapsed[running]
        if info.breakdown[j] == 0 and varied_duration(instance, info, ri, rj, r) > r:
            initiate[(i, j)] = 0
            input_size[(i, j)] = ZERO
            notes.append(f"dropped initiation {i}@{j}: machine busy")

    # completions paying in this step (after kills)
    inflow: dict[str, Fraction] = {k: ZERO for k in instance.materials}
    for (i, j) in pairs:
        r = state.elapsed[(i, j)]
        if r > 0 and info.breakdown[j] == 0:
            if varied_duration(instance, info, i, j, r) == r:
                w = info.yield_factor[(i, j, r)]
                for k, rho in instance.recipes[i].produced().items():
                    inflow[k] += rho * state.batch_size[(i, j)] * w
    for k in instance.raw_materials():
        p = max(ZERO, purchase.get(k, ZERO))
        bound = instance.supply_bound(k)
        if bound is not None and p > bound:
            notes.append(f"clipped purchase of {k} to supply bound")
            p = bound
        purchase[k] = p
        inflow[k] += p

    # drop initiations whose inputs are not all available (deterministic order)
    available = {k: state.inventory[k] + inflow[k] for k in instance.materials}
    for (i, j) in sorted(pairs):
        if initiate[(i, j)] != 1:
            continue
        need = {k: -rho * input_size[(i, j)] for k, rho in instance.recipes[i].consumed().items()}
        if any(available[k] < amt for k, amt in need.items()):
            initiate[(i, j)] = 0
            input_size[(i, j)] = ZERO
            notes.append(f"dropped initiation {i}@{j}: insufficient input inventory")
        else:
            for k, amt in need.items():
                available[k] -= amt

    for k in instance.products():
        q = max(ZERO, ship.get(k, ZERO))
        owed = (
            state.backlog[k]
            + info.baseline_demand.get(k, ZERO)
            + info.intermittent_demand.get(k, ZERO)
            + info.urgent_demand.get(k, ZERO)
        )
        cap = min(available.get(k, ZERO), owed)
        if q > cap:
            notes.append(f"clipped shipment of {k} from {float(q):g} to {float(cap):g}")
            q = max(ZERO, cap)
        ship[k] = q
        available[k] -= q

    executed = ActionVector(
        initiate=initiate, input_size=input_size, purchase=purchase, ship=ship
    )
    return executed, notes

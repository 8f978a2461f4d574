"""Discrete-time scheduling MILP: variables, constraints, objectives, decode.

The model mirrors the plant dynamics over a virtual-time horizon [t0, t0+h]:

* x[i,j,t'] / y[i,j,t']   batch initiations and their input sizes
* r[i,j,n,t'] / b[i,j,n,t']  elapsed-time indicators and carried batch sizes
* s[k,t'] / l[k,t']       inventory and backlog levels
* p[k,t'] / q[k,t']       raw purchases and product shipments

r and b are *definitional*: the lifting and logic-link equalities pin each of
them to a single initiation variable scaled by observed breakdown survival,
so the solver eliminates them by substitution while the model surface (rows,
LP export) keeps the full formulation.  Inside the certainty horizon the
adjusted durations/conversion factors and breakdown flags are realised data;
beyond it everything reverts to nominal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from ..disturbance import LookaheadWindow
from ..dynamics import SystemState
from ..instance import StnInstance
from ..schedule import Operation, Schedule, make_operation

INF = math.inf

BINARY = "binary"
CONTINUOUS = "continuous"


class ModelError(Exception):
    pass


@dataclass
class Row:
    terms: list[tuple[int, float]]
    sense: str  # "<=", ">=", "=="
    rhs: float
    tag: str


@dataclass
class Definition:
    """var = const + sum(coef * other); dependency order is list order."""

    var: int
    const: float
    terms: list[tuple[int, float]]
    tag: str


@dataclass
class MilpModel:
    instance: StnInstance
    t0: int
    horizon: int
    certainty_end: int
    params: "AdjustedParams"
    names: list[tuple] = field(default_factory=list)
    index: dict[tuple, int] = field(default_factory=dict)
    lb: list[float] = field(default_factory=list)
    ub: list[float] = field(default_factory=list)
    kind: list[str] = field(default_factory=list)
    rows: list[Row] = field(default_factory=list)
    definitions: list[Definition] = field(default_factory=list)
    objectives: dict[str, tuple[str, dict[int, float], float]] = field(default_factory=dict)

    # -- construction helpers -------------------------------------------

    def add_var(self, name: tuple, lb: float, ub: float, kind: str) -> int:
        if name in self.index:
            raise ModelError(f"duplicate variable {name}")
        idx = len(self.names)
        self.names.append(name)
        self.index[name] = idx
        self.lb.append(lb)
        self.ub.append(ub)
        self.kind.append(kind)
        return idx

    def add_row(self, terms, sense: str, rhs: float, tag: str) -> None:
        self.rows.append(Row(terms=list(terms), sense=sense, rhs=float(rhs), tag=tag))

    def define(self, var: int, const: float, terms, tag: str) -> None:
        self.definitions.append(
            Definition(var=var, const=float(const), terms=list(terms), tag=tag)
        )

    def set_objective(self, name: str, sense: str, terms: dict[int, float], const: float = 0.0):
        self.objectives[name] = (sense, dict(terms), const)

    def add_objective_cut(self, name: str, sense: str, bound: float, tag: str = "") -> None:
        obj_sense, terms, const = self.objectives[name]
        self.add_row(
            list(terms.items()), sense, bound - const, tag or f"cut-{name}"
        )

    # -- inspection ------------------------------------------------------

    def var(self, *name) -> int:
        return self.index[tuple(name)]

    def has_var(self, *name) -> bool:
        return tuple(name) in self.index

    def rows_by_tag(self, prefix: str) -> list[Row]:
        return [r for r in self.rows if r.tag.startswith(prefix)]

    def fixed_value(self, *name) -> float | None:
        """Constant value of a variable pinned by bounds or a constant definition."""
        idx = self.index[tuple(name)]
        if self.lb[idx] == self.ub[idx]:
            return self.lb[idx]
        for d in self.definitions:
            if d.var == idx and not d.terms:
                return d.const
        return None

    def fix(self, name: tuple, value: float, force: bool = False) -> None:
        idx = self.index[name]
        for d in self.definitions:
            if d.var == idx:
                raise ModelError(f"cannot fix definitional variable {name}")
        if not force and not (self.lb[idx] - 1e-9 <= value <= self.ub[idx] + 1e-9):
            raise ModelError(f"fixing {name} to {value} violates its bounds")
        self.lb[idx] = value
        self.ub[idx] = value


@dataclass(frozen=True)
class AdjustedParams:
    """Durations and producing-side conversion factors over the model horizon.

    duration(i,j,s) is the processing time of a batch started at step s:
    observed (ceil of nominal time scaled by the realised factor) when s lies
    inside the certainty horizon, nominal beyond; cell views at elapsed n
    simply dereference the start step t'-n.
    """

    instance: StnInstance
    t0: int
    horizon: int
    certainty_end: int
    durations: dict[tuple[str, str, int], int]
    yield_factors: dict[tuple[str, str, int], Fraction]
    n_max: dict[tuple[str, str], int]

    def duration(self, task: str, machine: str, start: int) -> int:
        key = (task, machine, start)
        if key in self.durations:
            return self.durations[key]
        return self.instance.pair(task, machine).nominal_time

    def tau_cell(self, task: str, machine: str, n: int, t_virtual: int) -> int:
        return self.duration(task, machine, t_virtual - n)

    def yield_factor(self, task: str, machine: str, start: int) -> Fraction:
        return self.yield_factors.get((task, machine, start), Fraction(1))

    def rho_cell(self, task: str, machine: str, material: str, n: int, t_virtual: int) -> Fraction:
        rho = self.instance.recipes[task].coefficients.get(material, Fraction(0))
        if rho <= 0:
            return rho  # consumption side stays nominal
        return rho * self.yield_factor(task, machine, t_virtual - n)


def compute_adjusted_params(
    instance: StnInstance, window: LookaheadWindow, horizon: int
) -> AdjustedParams:
    from ..dynamics import frac_ceil

    t0 = window.t
    v_max = window.tape.config.max_time_factor
    durations: dict[tuple[str, str, int], int] = {}
    yields: dict[tuple[str, str, int], Fraction] = {}
    n_max: dict[tuple[str, str], int] = {}
    for p in instance.pairs:
        longest = frac_ceil(p.nominal_time * v_max)
        # past starts matter for batches already running at t0
        for s in range(max(0, t0 - longest), min(window.horizon_end, t0 + horizon) + 1):
            durations[(p.task, p.machine, s)] = window.duration(p.task, p.machine, s)
            yields[(p.task, p.machine, s)] = window.yield_factor(p.task, p.machine, s)
        n_max[(p.task, p.machine)] = max(p.nominal_time, longest)
    return AdjustedParams(
        instance=instance,
        t0=t0,
        horizon=horizon,
        certainty_end=window.horizon_end,
        durations=durations,
        yield_factors=yields,
        n_max=n_max,
    )


def demand_over(
    window: LookaheadWindow, instance: StnInstance, t0: int, horizon: int
) -> dict[tuple[str, int], Fraction]:
    """Backlog inflow per (product, t'): baseline + intermittent + observed urgent.

    Urgent demand is only included inside the certainty horizon (it is
    observed data there; unobservable beyond).
    """
    out: dict[tuple[str, int], Fraction] = {}
    for k in instance.products():
        for t in range(t0, t0 + horizon + 1):
            out[(k, t)] = (
                window.baseline(k, t)
                + window.intermittent(k, t)
                + window.urgent(k, t)
            )
    return out


def build_model(
    state: SystemState,
    window: LookaheadWindow,
    instance: StnInstance,
    horizon: int,
    backlog_demands: dict[tuple[str, int], Fraction] | None = None,
    previous_starts: set[tuple[str, str, int]] | None = None,
    objective_end: int | None = None,
) -> MilpModel:
    t0 = window.t
    t_end = t0 + horizon
    obj_end = t_end if objective_end is None else objective_end
    hc_end = window.horizon_end
    params = compute_adjusted_params(instance, window, horizon)
    if backlog_demands is None:
        backlog_demands = demand_over(window, instance, t0, horizon)
    previous_starts = previous_starts or set()

    m = MilpModel(
        instance=instance, t0=t0, horizon=horizon, certainty_end=hc_end, params=params
    )
    pairs = [(p.task, p.machine) for p in instance.pairs]
    pair_by = {(p.task, p.machine): p for p in instance.pairs}
    products = instance.products()
    raws = instance.raw_materials()
    trange = range(t0, t_end + 1)

    def u_at(j: str, t: int) -> int:
        return window.breakdown(j, t) if t0 <= t <= hc_end else 0

    # ---- variables ----
    for (i, j) in pairs:
        for t in trange:
            m.add_var(("x", i, j, t), 0.0, 1.0, BINARY)
        for t in trange:
            m.add_var(("y", i, j, t), 0.0, float(pair_by[(i, j)].batch_max), CONTINUOUS)
    for (i, j) in pairs:
        for n in range(1, params.n_max[(i, j)] + 1):
            for t in trange:
                m.add_var(("r", i, j, n, t), 0.0, 1.0, BINARY)
                m.add_var(("b", i, j, n, t), 0.0, float(pair_by[(i, j)].batch_max), CONTINUOUS)
    for k in instance.materials:
        cap = instance.materials[k].storage_limit
        for t in trange:
            m.add_var(("s", k, t), 0.0, float(cap) if cap is not None else INF, CONTINUOUS)
    for k in products:
        for t in trange:
            m.add_var(("l", k, t), 0.0, INF, CONTINUOUS)
    for k in raws:
        bound = instance.supply_bound(k)
        for t in trange:
            m.add_var(("p", k, t), 0.0, float(bound) if bound is not None else INF, CONTINUOUS)
    for k in products:
        for t in trange:
            m.add_var(("q", k, t), 0.0, INF, CONTINUOUS)

    # ---- initial state ----
    for (i, j) in pairs:
        r0 = state.elapsed[(i, j)]
        b0 = float(state.batch_size[(i, j)])
        for n in range(1, params.n_max[(i, j)] + 1):
            m.define(m.var("r", i, j, n, t0), 1.0 if n == r0 else 0.0, [], "initial-r")
            m.define(m.var("b", i, j, n, t0), b0 if n == r0 else 0.0, [], "initial-b")
    for k in instance.materials:
        m.fix(("s", k, t0), float(state.inventory[k]), force=True)
    for k in products:
        m.fix(("l", k, t0), float(state.backlog[k]), force=True)

    # ---- lifting / logic-link definitions ----
    # A batch started at s = t'-n survives to elapsed n at t' only if no
    # observed breakdown hits any traversed interval (sources s+1 .. t'-1).
    def survival(j: str, s_from: int, s_to: int) -> float:
        # breakdown sources act on lift steps with source time in [t0, hc_end-1]
        for t in range(max(s_from, t0), min(s_to, hc_end - 1) + 1):
            if u_at(j, t) == 1:
                return 0.0
        return 1.0

    initial_chain: set[int] = set()  # r-variable indices fed by the pre-existing batch
    for (i, j) in pairs:
        r0 = state.elapsed[(i, j)]
        dur0 = params.duration(i, j, t0 - r0) if r0 > 0 else 0
        for t in range(t0 + 1, t_end + 1):
            for n in range(1, params.n_max[(i, j)] + 1):
                ridx = m.var("r", i, j, n, t)
                bidx = m.var("b", i, j, n, t)
                start = t - n
                if n == 1:
                    if start >= t0:
                        m.define(ridx, 0.0, [(m.var("x", i, j, start), 1.0)], "logic-link-r")
                        m.define(bidx, 0.0, [(m.var("y", i, j, start), 1.0)], "logic-link-b")
                    else:
                        m.define(ridx, 0.0, [], "logic-link-r")
                        m.define(bidx, 0.0, [], "logic-link-b")
                    continue
                if start >= t0:
                    # planned batch: alive iff within its adjusted duration
                    alive = n <= params.duration(i, j, start)
                    surv = survival(j, start + 1, t - 1) if alive else 0.0
                    if alive and surv > 0.0:
                        m.define(ridx, 0.0, [(m.var("x", i, j, start), 1.0)], "lifting-r")
                        m.define(bidx, 0.0, [(m.var("y", i, j, start), 1.0)], "lifting-b")
                    else:
                        m.define(ridx, 0.0, [], "lifting-r")
                        m.define(bidx, 0.0, [], "lifting-b")
                else:
                    # continuation of the batch already running at t0
                    alive = (
                        r0 > 0
                        and start == t0 - r0
                        and n <= dur0
                        and survival(j, t0, t - 1) > 0.0
                    )
                    if alive:
                        m.define(ridx, 1.0, [], "lifting-r")
                        m.define(bidx, float(state.batch_size[(i, j)]), [], "lifting-b")
                        initial_chain.add(ridx)
                    else:
                        m.define(ridx, 0.0, [], "lifting-r")
                        m.define(bidx, 0.0, [], "lifting-b")
    # the t0 cells of a pre-existing batch also belong to the initial chain
    for (i, j) in pairs:
        r0 = state.elapsed[(i, j)]
        if r0 > 0:
            initial_chain.add(m.var("r", i, j, r0, t0))

    # ---- machine occupancy ----
    # Start, mid-flight continuation, and (inside the certainty horizon) an
    # observed breakdown are mutually exclusive per machine and step.  The
    # pre-existing batch's own cells are exempt at breakdown steps: they are
    # killed by the lifting equalities and cannot be unscheduled.
    for j in instance.machines:
        for t in trange:
            u = u_at(j, t)
            terms = [(m.var("x", i, j2, t), 1.0) for (i, j2) in pairs if j2 == j]
            for (i, j2) in pairs:
                if j2 != j:
                    continue
                for n in range(1, params.n_max[(i, j2)] + 1):
                    if n <= params.tau_cell(i, j2, n, t) - 1:
                        ridx = m.var("r", i, j2, n, t)
                        if u == 1 and ridx in initial_chain:
                            continue
                        terms.append((ridx, 1.0))
            m.add_row(terms, "<=", 1.0 - u, f"occupancy[{j},{t}]")

    # ---- batch input bounds (semi-continuous linearisation) ----
    for (i, j) in pairs:
        pr = pair_by[(i, j)]
        for t in trange:
            x = m.var("x", i, j, t)
            y = m.var("y", i, j, t)
            m.add_row([(y, 1.0), (x, -float(pr.batch_max))], "<=", 0.0, f"ybound-hi[{i},{j},{t}]")
            m.add_row([(y, -1.0), (x, float(pr.batch_min))], "<=", 0.0, f"ybound-lo[{i},{j},{t}]")

    # ---- inventory balance ----
    for k in instance.materials:
        producers = [(i, j) for (i, j) in pairs if k in instance.recipes[i].produced()]
        consumers = [(i, j) for (i, j) in pairs if k in instance.recipes[i].consumed()]
        for t in range(t0, t_end):
            terms: list[tuple[int, float]] = [
                (m.var("s", k, t + 1), 1.0),
                (m.var("s", k, t), -1.0),
            ]
            for (i, j) in producers:
                u_term = (1 - u_at(j, t)) if t <= hc_end else 1
                if u_term == 0:
                    continue
                for n in range(1, params.n_max[(i, j)] + 1):
                    if params.tau_cell(i, j, n, t) == n:
                        rho = float(params.rho_cell(i, j, k, n, t))
                        terms.append((m.var("b", i, j, n, t), -rho))
            for (i, j) in consumers:
                rho = float(instance.recipes[i].coefficients[k])  # negative
                terms.append((m.var("y", i, j, t), -rho))
            if k in raws:
                terms.append((m.var("p", k, t), -1.0))
            if k in products:
                terms.append((m.var("q", k, t), 1.0))
            m.add_row(terms, "==", 0.0, f"inventory[{k},{t}]")

    # ---- backlog balance ----
    for k in products:
        for t in range(t0, t_end):
            m.add_row(
                [
                    (m.var("l", k, t + 1), 1.0),
                    (m.var("l", k, t), -1.0),
                    (m.var("q", k, t), 1.0),
                ],
                "==",
                float(backlog_demands.get((k, t), 0)),
                f"backlog[{k},{t}]",
            )

    # ---- objectives ----
    f1: dict[int, float] = {}
    for (i, j) in pairs:
        c = float(pair_by[(i, j)].start_cost)
        for t in range(t0, obj_end + 1):
            f1[m.var("x", i, j, t)] = f1.get(m.var("x", i, j, t), 0.0) + c
    for k, mat in instance.materials.items():
        for t in range(t0, obj_end + 1):
            f1[m.var("s", k, t)] = f1.get(m.var("s", k, t), 0.0) + float(mat.inventory_cost)
            if mat.backlog_cost is not None:
                f1[m.var("l", k, t)] = f1.get(m.var("l", k, t), 0.0) + float(mat.backlog_cost)
    m.set_objective("f1", "min", f1)

    f2: dict[int, float] = {}
    for (i, j, t) in previous_starts:
        if t0 <= t <= t_end and m.has_var("x", i, j, t):
            f2[m.var("x", i, j, t)] = 1.0
    m.set_objective("f2", "max", f2)

    f3: dict[int, float] = {}
    span = max(1, horizon)
    for (i, j) in pairs:
        for t in trange:
            f3[m.var("x", i, j, t)] = math.exp((t - t0) / span)
    m.set_objective("f3", "min", f3)

    return m


def apply_fixings(model: MilpModel, keep: set[tuple[str, str, int]]) -> MilpModel:
    """Fix x=1 at each kept operation's (task, machine, start)."""
    for (i, j, t) in sorted(keep):
        if t < model.t0 or t > model.t0 + model.horizon or not model.has_var("x", i, j, t):
            raise ModelError(f"kept operation ({i},{j},{t}) outside the model horizon")
        model.fix(("x", i, j, t), 1.0)
    return model


# -- decoding ---------------------------------------------------------------


def _snap(value: float) -> Fraction:
    """Quantise a solver value onto the 1e-6 grid, preferring the nearest cell."""
    scaled = value * 1e6
    nearest = round(scaled)
    if abs(scaled - nearest) <= 1e-3:
        return Fraction(int(nearest), 10**6)
    return Fraction(math.floor(scaled), 10**6)


def decode(solution_values: dict[tuple, float], model: MilpModel):
    """Solution -> (Schedule, first-step ActionVector)."""
    from ..dynamics import ActionVector

    inst = model.instance
    t0, t_end = model.t0, model.t0 + model.horizon
    ops: list[Operation] = []
    purchases: dict[tuple[str, int], Fraction] = {}
    shipments: dict[tuple[str, int], Fraction] = {}
    for (i, j) in [(p.task, p.machine) for p in inst.pairs]:
        pr = inst.pair(i, j)
        for t in range(t0, t_end + 1):
            if solution_values.get(("x", i, j, t), 0.0) > 0.5:
                size = _snap(max(0.0, solution_values.get(("y", i, j, t), 0.0)))
                size = min(max(size, pr.batch_min), pr.batch_max)
                dur = model.params.duration(i, j, t)
                ops.append(make_operation(inst, i, j, size, t, t + dur))
    for k in inst.raw_materials():
        for t in range(t0, t_end + 1):
            v = solution_values.get(("p", k, t), 0.0)
            if v > 1e-9:
                scaled = math.ceil(v * 1e6 - 1e-3)  # round purchases up: extra raw is safe
                purchases[(k, t)] = Fraction(scaled, 10**6)
    for k in inst.products():
        for t in range(t0, t_end + 1):
            v = solution_values.get(("q", k, t), 0.0)
            if v > 1e-9:
                shipments[(k, t)] = _snap(v)

    schedule = Schedule(
        start=t0,
        end=t_end,
        operations=tuple(sorted(ops)),
        purchases=purchases,
        shipments=shipments,
    )
    action = ActionVector(
        initiate={(p.task, p.machine): 0 for p in inst.pairs},
        input_size={(p.task, p.machine): Fraction(0) for p in inst.pairs},
        purchase={k: schedule.purchase_at(k, t0) for k in inst.raw_materials()},
        ship={k: schedule.shipment_at(k, t0) for k in inst.products()},
    )
    for op in schedule.initiations_at(t0):
        action.initiate[(op.task, op.machine)] = 1
        action.input_size[(op.task, op.machine)] = op.size
    return schedule, action


def plan_assignment(model: MilpModel, plan: Schedule) -> dict[tuple, float] | None:
    """Free-variable assignment replaying a plan inside the model, or None.

    Used as a warm-start incumbent hint; the backend re-checks feasibility, so
    a mismatch only costs the hint.
    """
    values: dict[tuple, float] = {}
    t0, t_end = model.t0, model.t0 + model.horizon
    inst = model.instance
    starts = {op.key: op for op in plan.operations if t0 <= op.start <= t_end}
    for (i, j) in [(p.task, p.machine) for p in inst.pairs]:
        for t in range(t0, t_end + 1):
            op = starts.get((t, j, i))
            values[("x", i, j, t)] = 1.0 if op else 0.0
            values[("y", i, j, t)] = float(op.size) if op else 0.0
    for k in inst.raw_materials():
        for t in range(t0, t_end + 1):
            values[("p", k, t)] = float(plan.purchase_at(k, t))
    for k in inst.products():
        for t in range(t0, t_end + 1):
            values[("q", k, t)] = float(plan.shipment_at(k, t))
    return values


# -- LP export ---------------------------------------------------------------


def _lp_name(name: tuple) -> str:
    return "_".join(str(part) for part in name).replace("-", "m")


def write_lp(model: MilpModel, path) -> None:
    """CPLEX-LP dump of the full formulation (definitional rows included)."""
    lines = ["\\ scheduling model", "Minimize", " obj:"]
    sense, terms, _const = model.objectives["f1"]
    chunk = []
    for idx, coef in sorted(terms.items()):
        chunk.append(f" {'+' if coef >= 0 else '-'} {abs(coef):.12g} {_lp_name(model.names[idx])}")
    lines.append("".join(chunk) if chunk else " 0 dummy")
    lines.append("Subject To")
    counter = 0

    def emit(terms, sense_str, rhs):
        nonlocal counter
        counter += 1
        body = "".join(
            f" {'+' if coef >= 0 else '-'} {abs(coef):.12g} {_lp_name(model.names[idx])}"
            for idx, coef in terms
            if coef != 0.0
        )
        if not body:
            body = " 0 " + _lp_name(model.names[terms[0][0]]) if terms else " 0 dummy"
        op = {"<=": "<=", ">=": ">=", "==": "="}[sense_str]
        lines.append(f" c{counter}:{body} {op} {rhs:.12g}")

    for row in model.rows:
        emit(row.terms, row.sense, row.rhs)
    for d in model.definitions:
        emit([(d.var, 1.0)] + [(v, -c) for v, c in d.terms], "==", d.const)

    lines.append("Bounds")
    for idx, name in enumerate(model.names):
        lo, hi = model.lb[idx], model.ub[idx]
        hi_s = "+inf" if hi == INF else f"{hi:.12g}"
        lines.append(f" {lo:.12g} <= {_lp_name(name)} <= {hi_s}")
    lines.append("Binaries")
    bin_names = [
        _lp_name(name) for idx, name in enumerate(model.names) if model.kind[idx] == BINARY
    ]
    for i in range(0, len(bin_names), 8):
        lines.append(" " + " ".join(bin_names[i : i + 8]))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

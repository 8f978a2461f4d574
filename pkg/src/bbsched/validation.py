"""Theory validation suites: executable versions of the framework's
independence guarantees, checked on exhaustively enumerable cases.

* ve_suite: variable elimination agrees with joint enumeration on random
  networks.
* corollary1_suite: isolation variables of non-overlapping operations are
  pairwise independent in the exact joint.
* theorem1_suite: each impact variable is independent of its non-descendants
  given its parents, in the exact joint over isolation assignments.

The exact joint is built by enumerating every combination of per-operation
isolation values (they are independent across operations because their
disturbance cells are disjoint) and pushing each combination through the
propagation sweep.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

from ._rng import stream
from .bn import Cpd, DiscreteBn, DiscreteVariable, joint_enumerate, mle_fit, variable_elimination
from .dag import Dag
from .disturbance import DisturbanceConfig
from .dynamics import frac_ceil
from .impact import (
    ALL_TYPES,
    ImpactSpec,
    InfoAccess,
    impact_propagation,
    specs_for,
    structure_learning,
)
from .instance import StnInstance, builtin_example
from .schedule import Operation, make_operation


@dataclass
class SuiteResult:
    name: str
    checks: int
    failures: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: {self.checks} checks, "
            f"{self.failures} failures, max error {self.max_error:.3g}"
        )


# -- random BNs: VE vs enumeration -------------------------------------------


def random_bn(seed: int, max_nodes: int = 8, max_states: int = 3) -> DiscreteBn:
    g = stream("random-bn", seed)
    n = int(g.integers(2, max_nodes + 1))
    sizes = [int(g.integers(2, max_states + 1)) for _ in range(n)]
    variables = [
        DiscreteVariable(id=f"X{i}", support=tuple(range(sizes[i]))) for i in range(n)
    ]
    dag: Dag[DiscreteVariable] = Dag(variables)
    for j in range(1, n):
        for i in range(j):
            if g.random() < 0.35:
                dag.add_arc(variables[i], variables[j])
    cpds = {}
    for v in variables:
        parents = tuple(dag.parents(v))
        table = {}
        for pa in itertools.product(*(p.support for p in parents)):
            raw = g.random(len(v.support)) + 0.05
            total = raw.sum()
            table[pa] = tuple(float(x / total) for x in raw)
        cpds[v.id] = Cpd(child=v, parents=parents, table=table)
    bn = DiscreteBn(structure=dag, cpds=cpds)
    bn.validate()
    return bn


def _marginal_from_joint(joint: dict, variables, target_idx: int, evidence: dict[int, object]):
    num = {}
    for assignment, p in joint.items():
        if any(assignment[i] != v for i, v in evidence.items()):
            continue
        num[assignment[target_idx]] = num.get(assignment[target_idx], 0.0) + p
    total = sum(num.values())
    if total <= 0:
        return None
    support = variables[target_idx].support
    return tuple(num.get(s, 0.0) / total for s in support)


def ve_suite(n_nets: int = 100, tol: float = 1e-10) -> SuiteResult:
    checks = failures = 0
    max_err = 0.0
    for seed in range(n_nets):
        bn = random_bn(seed)
        vs = bn.variables
        joint = joint_enumerate(bn)
        g = stream("ve-evidence", seed)
        # one marginal per node, plus one random-evidence posterior per net
        queries = [(v, {}) for v in vs]
        ev_var = vs[int(g.integers(0, len(vs)))]
        others = [v for v in vs if v.id != ev_var.id]
        if others:
            target = others[int(g.integers(0, len(others)))]
            value = ev_var.support[int(g.integers(0, len(ev_var.support)))]
            queries.append((target, {ev_var.id: value}))
        for target, evidence in queries:
            idx = {v.id: i for i, v in enumerate(vs)}
            ev_idx = {idx[k]: val for k, val in evidence.items()}
            expected = _marginal_from_joint(joint, vs, idx[target.id], ev_idx)
            if expected is None:
                continue
            got = variable_elimination(bn, target, evidence)
            err = max(abs(a - b) for a, b in zip(expected, got))
            checks += 1
            max_err = max(max_err, err)
            if err > tol:
                failures += 1
    return SuiteResult("variable elimination vs enumeration", checks, failures, max_err)


# -- exact joints over isolation assignments ---------------------------------


class FixedIsolationInfo(InfoAccess):
    """Info access that realises a chosen isolation value per operation."""

    def __init__(self, ltype: str, values: dict[Operation, int], instance: StnInstance):
        self._ltype = ltype
        self._instance = instance
        self._by_cell: dict[tuple, object] = {}
        for op, iso in values.items():
            if ltype == "breakdown":
                # place the hit on the first interval of the operation
                for t in range(op.start + 1, op.end + 1):
                    self._by_cell[("u", op.machine, t)] = 1 if (iso and t == op.start + 1) else 0
            elif ltype == "delay":
                tau = instance.pair(op.task, op.machine).nominal_time
                # factor realising exactly iso extra periods: (tau + iso) / tau
                self._by_cell[("v", op.task, op.machine, op.start)] = Fraction(tau + iso, tau)
            else:
                self._by_cell[("w", op.task, op.machine, op.start)] = 1 - Fraction(iso, 100)

    def breakdown_cell(self, machine: str, t: int) -> int:
        return self._by_cell.get(("u", machine, t), 0)

    def v0_cell(self, task: str, machine: str, t: int) -> Fraction:
        return self._by_cell.get(("v", task, machine, t), Fraction(1))

    def w0_cell(self, task: str, machine: str, t: int) -> Fraction:
        return self._by_cell.get(("w", task, machine, t), Fraction(1))


def isolation_distribution(
    ltype: str, op: Operation, config: DisturbanceConfig, instance: StnInstance
) -> dict[int, float]:
    """Exact marginal of one isolation variable under the disturbance config."""
    if ltype == "breakdown":
        horizon = op.end - op.start
        p_none = (1.0 - config.breakdown_prob) ** horizon
        return {0: p_none, 1: 1.0 - p_none}
    tau = instance.pair(op.task, op.machine).nominal_time
    out: dict[int, float] = {}
    if ltype == "delay":
        for v, p in config.time_factor_support:
            value = frac_ceil(tau * v) - tau
            out[value] = out.get(value, 0.0) + p
        return out
    for w, p in config.yield_factor_support:
        value = frac_ceil((1 - w) * 100)
        out[value] = out.get(value, 0.0) + p
    return out


def exact_impact_joint(
    ltype: str,
    op_dag: Dag[Operation],
    config: DisturbanceConfig,
    instance: StnInstance,
    spec: ImpactSpec,
):
    """Joint distribution over (impact, isolation) assignments by enumeration."""
    ops = sorted(op_dag.nodes)
    iso_dists = [isolation_distribution(ltype, op, config, instance) for op in ops]
    joint: dict[tuple, float] = {}
    iso_joint: dict[tuple, float] = {}
    for combo in itertools.product(*(sorted(d.items()) for d in iso_dists)):
        iso_values = {op: val for op, (val, _) in zip(ops, combo)}
        prob = 1.0
        for _, p in combo:
            prob *= p
        if prob == 0.0:
            continue
        info = FixedIsolationInfo(ltype, iso_values, instance)
        assignment = impact_propagation(ltype, op_dag, info, instance, spec)
        z_key = tuple(assignment.impact[op] for op in ops)
        joint[z_key] = joint.get(z_key, 0.0) + prob
        iso_key = tuple(iso_values[op] for op in ops)
        iso_joint[iso_key] = iso_joint.get(iso_key, 0.0) + prob
    return ops, joint, iso_joint


def exact_cpds(ltype, op_dag, config, instance, spec) -> dict[object, dict[tuple, tuple[float, ...]]]:
    """True conditional rows P(Z_op | Z_parents) from the exact joint."""
    ops, joint, _ = exact_impact_joint(ltype, op_dag, config, instance, spec)
    pos = {op: i for i, op in enumerate(ops)}
    out: dict[object, dict[tuple, tuple[float, ...]]] = {}
    for op in ops:
        parents = sorted(op_dag.parents(op))
        rows: dict[tuple, dict[int, float]] = {}
        for z_key, p in joint.items():
            pa = tuple(z_key[pos[q]] for q in parents)
            rows.setdefault(pa, {}).setdefault(z_key[pos[op]], 0.0)
            rows[pa][z_key[pos[op]]] += p
        table: dict[tuple, tuple[float, ...]] = {}
        for pa, cell in rows.items():
            total = sum(cell.values())
            table[pa] = tuple(cell.get(v, 0.0) / total for v in spec.support)
        out[op.key] = table
    return out


def random_schedule(
    seed: int, instance: StnInstance, max_ops: int = 6, span: int = 24
) -> list[Operation]:
    """A valid (machine-disjoint) random schedule over the instance's pairs."""
    g = stream("random-schedule", seed)
    n_ops = int(g.integers(3, max_ops + 1))
    busy: dict[str, list[tuple[int, int]]] = {}
    ops: list[Operation] = []
    pairs = list(instance.pairs)
    attempts = 0
    while len(ops) < n_ops and attempts < 200:
        attempts += 1
        pr = pairs[int(g.integers(0, len(pairs)))]
        start = int(g.integers(0, span))
        end = start + pr.nominal_time
        overlap = any(not (end <= a or start >= b) for a, b in busy.get(pr.machine, []))
        if overlap:
            continue
        busy.setdefault(pr.machine, []).append((start, end))
        ops.append(
            make_operation(instance, pr.task, pr.machine, pr.batch_min, start, end)
        )
    return sorted(ops)


def cell_level_iso_joint(
    ltype: str, ops: list[Operation], config: DisturbanceConfig, instance: StnInstance
) -> dict[tuple, float]:
    """Joint of the isolation variables built from the raw disturbance cells.

    Unlike the pushforward in exact_impact_joint, nothing here assumes
    independence across operations: every underlying cell combination is
    enumerated and mapped through the isolation functions.
    """
    ops = sorted(ops)
    if ltype == "breakdown":
        blocks = [list(range(op.start + 1, op.end + 1)) for op in ops]
        cells = [(op.machine, t) for op, block in zip(ops, blocks) for t in block]
        if len(set(cells)) != len(cells):
            raise ValueError("overlapping operations share breakdown cells")
        if len(cells) > 20:
            raise ValueError("too many breakdown cells to enumerate")
        p = config.breakdown_prob
        joint: dict[tuple, float] = {}
        for combo in itertools.product((0, 1), repeat=len(cells)):
            prob = 1.0
            for bit in combo:
                prob *= p if bit else (1.0 - p)
            if prob == 0.0:
                continue
            values = dict(zip(cells, combo))
            key = tuple(
                min(1, sum(values[(op.machine, t)] for t in block))
                for op, block in zip(ops, blocks)
            )
            joint[key] = joint.get(key, 0.0) + prob
        return joint
    support = (
        config.time_factor_support if ltype == "delay" else config.yield_factor_support
    )
    joint = {}
    for combo in itertools.product(support, repeat=len(ops)):
        prob = 1.0
        for _, p in combo:
            prob *= p
        key = []
        for op, (factor, _) in zip(ops, combo):
            tau = instance.pair(op.task, op.machine).nominal_time
            if ltype == "delay":
                key.append(frac_ceil(tau * factor) - tau)
            else:
                key.append(frac_ceil((1 - factor) * 100))
        key = tuple(key)
        joint[key] = joint.get(key, 0.0) + prob
    return joint


def corollary1_suite(
    n_schedules: int = 20, tol: float = 1e-9, instance: StnInstance | None = None
) -> SuiteResult:
    """Pairwise independence of isolation variables for non-overlapping operations."""
    inst = instance or builtin_example(1)
    config = DisturbanceConfig(
        breakdown_prob=0.3,
        time_factor_support=((Fraction(1), 0.6), (Fraction(3, 2), 0.4)),
        yield_factor_support=((Fraction(1), 0.7), (Fraction(9, 10), 0.3)),
    )
    checks = failures = 0
    max_err = 0.0
    for seed in range(n_schedules):
        ops = random_schedule(seed, inst, max_ops=5, span=16)
        if sum(op.end - op.start for op in ops) > 20:
            ops = ops[:4]
        for ltype in ALL_TYPES:
            iso_joint = cell_level_iso_joint(ltype, ops, config, inst)
            n = len(sorted(ops))
            marg: list[dict[int, float]] = [{} for _ in range(n)]
            for key, p in iso_joint.items():
                for i, v in enumerate(key):
                    marg[i][v] = marg[i].get(v, 0.0) + p
            for a in range(n):
                for b in range(a + 1, n):
                    pair: dict[tuple, float] = {}
                    for key, p in iso_joint.items():
                        pair[(key[a], key[b])] = pair.get((key[a], key[b]), 0.0) + p
                    for va, pa in marg[a].items():
                        for vb, pb in marg[b].items():
                            err = abs(pair.get((va, vb), 0.0) - pa * pb)
                            checks += 1
                            max_err = max(max_err, err)
                            if err > tol:
                                failures += 1
    return SuiteResult("isolation pairwise independence", checks, failures, max_err)


def theorem1_suite(
    n_schedules: int = 20, tol: float = 1e-9, instance: StnInstance | None = None
) -> SuiteResult:
    """Z independent of its non-descendants given its parents, for every op and type."""
    inst = instance or builtin_example(1)
    config = DisturbanceConfig(
        breakdown_prob=0.3,
        time_factor_support=((Fraction(1), 0.6), (Fraction(3, 2), 0.4)),
        yield_factor_support=((Fraction(1), 0.7), (Fraction(9, 10), 0.3)),
    )
    specs = specs_for(inst, config)
    checks = failures = 0
    max_err = 0.0
    for seed in range(n_schedules):
        ops = random_schedule(seed, inst)
        for ltype in ALL_TYPES:
            spec = specs[ltype]
            dag = structure_learning(ops, spec.chi_temporal, spec.chi_spatial, inst)
            ordered, joint, _ = exact_impact_joint(ltype, dag, config, inst, spec)
            pos = {op: i for i, op in enumerate(ordered)}
            for op in ordered:
                parents = [pos[q] for q in dag.parents(op)]
                nd = [
                    pos[q]
                    for q in dag.non_descendants(op)
                    if q != op and pos[q] not in parents
                ]
                if not nd:
                    continue
                o = pos[op]
                # group joint by (parents, nd) and by parents alone
                cond: dict[tuple, dict[int, float]] = {}
                cond_pa: dict[tuple, dict[int, float]] = {}
                for key, p in joint.items():
                    pa = tuple(key[i] for i in parents)
                    ndv = tuple(key[i] for i in nd)
                    cond.setdefault((pa, ndv), {}).setdefault(key[o], 0.0)
                    cond[(pa, ndv)][key[o]] += p
                    cond_pa.setdefault(pa, {}).setdefault(key[o], 0.0)
                    cond_pa[pa][key[o]] += p
                for (pa, ndv), cell in cond.items():
                    total = sum(cell.values())
                    total_pa = sum(cond_pa[pa].values())
                    if total <= 0 or total_pa <= 0:
                        continue
                    for value in set(cell) | set(cond_pa[pa]):
                        lhs = cell.get(value, 0.0) / total
                        rhs = cond_pa[pa].get(value, 0.0) / total_pa
                        err = abs(lhs - rhs)
                        checks += 1
                        max_err = max(max_err, err)
                        if err > tol:
                            failures += 1
    return SuiteResult("impact conditional independence (given parents)", checks, failures, max_err)


def theory_suites() -> list[SuiteResult]:
    return [ve_suite(), corollary1_suite(), theorem1_suite()]

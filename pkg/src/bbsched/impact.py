"""Impact variables: how badly disturbances hit each scheduled operation.

For each endogenous disturbance type, an operation first gets an *isolated*
impact computed only from the disturbance cells over its own duration, and
then a final impact that combines the isolated value with the impacts of its
DAG parents.  Traversing the dependence graph in any topological order gives
the same result; re-running the traversal over sampled disturbances yields
the Monte-Carlo training data for the Bayesian network of a schedule.

Disturbance types and their propagation channels:

* breakdown: binary, saturating; propagates through material links only.
* delay: periods of lateness; propagates through every parent, discounted
  by the planned slack between parent and child start times.
* yield loss: rounded-up percent; propagates through material links only.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Protocol

from ._rng import stream
from .bn import DiscreteBn, DiscreteVariable, mle_fit
from .dag import Dag
from .disturbance import DisturbanceConfig, LookaheadWindow, ScenarioTape
from .dynamics import frac_ceil
from .instance import StnInstance
from .schedule import Operation

BREAKDOWN = "breakdown"
DELAY = "delay"
YIELD_LOSS = "yield"
ALL_TYPES = (BREAKDOWN, DELAY, YIELD_LOSS)


class ImpactError(Exception):
    pass


@dataclass(frozen=True)
class ImpactSpec:
    ltype: str
    support: tuple[int, ...]
    chi_temporal: int
    chi_spatial: int
    gamma1: int  # unrecoverability threshold (above the support top = never)

    @property
    def max_value(self) -> int:
        return self.support[-1]


def specs_for(
    instance: StnInstance, config: DisturbanceConfig, chain_cap: int = 8
) -> dict[str, ImpactSpec]:
    """Per-type impact supports and propagation flags.

    Delay accumulation along chains is clipped at ceil(tau_max*(v_max-1)) *
    chain_cap; the clip is monotone, so threshold comparisons at or above
    gamma1 are unaffected.  Yield percentages are exactly the values the
    finite factor support can produce.
    """
    tau_max = max(p.nominal_time for p in instance.pairs)
    one_delay = frac_ceil(tau_max * (config.max_time_factor - 1))
    z_max = max(1, one_delay) * chain_cap
    yield_values = sorted(
        {0} | {frac_ceil((1 - w) * 100) for w, _ in config.yield_factor_support}
    )
    return {
        BREAKDOWN: ImpactSpec(BREAKDOWN, (0, 1), chi_temporal=0, chi_spatial=1, gamma1=1),
        DELAY: ImpactSpec(
            DELAY, tuple(range(z_max + 1)), chi_temporal=1, chi_spatial=1, gamma1=1
        ),
        YIELD_LOSS: ImpactSpec(
            YIELD_LOSS, tuple(yield_values), chi_temporal=0, chi_spatial=1, gamma1=100
        ),
    }


# -- disturbance-cell access -------------------------------------------------


class InfoAccess(Protocol):
    """Cells the isolation functions read: breakdown flags and start factors."""

    def breakdown_cell(self, machine: str, t: int) -> int: ...
    def v0_cell(self, task: str, machine: str, t: int) -> Fraction: ...
    def w0_cell(self, task: str, machine: str, t: int) -> Fraction: ...


class TapeInfo:
    """Realised cells, either from a full tape or a look-ahead window."""

    def __init__(self, source: ScenarioTape | LookaheadWindow):
        self._tape = source.tape if isinstance(source, LookaheadWindow) else source
        self._limit = source.horizon_end if isinstance(source, LookaheadWindow) else None

    def _check(self, t: int) -> None:
        if self._limit is not None and t > self._limit:
            raise ImpactError(f"cell at t={t} not revealed yet")

    def breakdown_cell(self, machine: str, t: int) -> int:
        self._check(t)
        return self._tape.breakdown.get((machine, t), 0)

    def v0_cell(self, task: str, machine: str, t: int) -> Fraction:
        self._check(t)
        return self._tape.v0(task, machine, t)

    def w0_cell(self, task: str, machine: str, t: int) -> Fraction:
        self._check(t)
        return self._tape.w0(task, machine, t)


class EpisodeInfo:
    """Freshly sampled cells for one Monte-Carlo episode.

    All draws of an episode come from a single stream keyed (seed, episode),
    consumed in the deterministic cell-request order of the traversal; a cache
    keeps any shared cell consistent within the episode.
    """

    def __init__(self, config: DisturbanceConfig, seed: int, episode: int):
        self._config = config
        self._gen = stream(seed, "mc-episode", episode)
        self._cache: dict[tuple, object] = {}

    def breakdown_cell(self, machine: str, t: int) -> int:
        key = ("u", machine, t)
        if key not in self._cache:
            p = self._config.breakdown_prob
            self._cache[key] = int(p > 0 and self._gen.random() < p)
        return self._cache[key]  # type: ignore[return-value]

    def _factor(self, kind: str, task: str, machine: str, t: int, support) -> Fraction:
        key = (kind, task, machine, t)
        if key not in self._cache:
            if len(support) == 1:
                value = support[0][0]
            else:
                roll = self._gen.random()
                acc = 0.0
                value = support[-1][0]
                for v, prob in support:
                    acc += prob
                    if roll < acc:
                        value = v
                        break
            self._cache[key] = value
        return self._cache[key]  # type: ignore[return-value]

    def v0_cell(self, task: str, machine: str, t: int) -> Fraction:
        return self._factor("v", task, machine, t, self._config.time_factor_support)

    def w0_cell(self, task: str, machine: str, t: int) -> Fraction:
        return self._factor("w", task, machine, t, self._config.yield_factor_support)


# -- isolation functions -----------------------------------------------------


def iso_breakdown(info: InfoAccess, op: Operation) -> int:
    """1 if the machine is down for any interval in (start, end], else 0."""
    hits = 0
    for t in range(op.start + 1, op.end + 1):
        hits += info.breakdown_cell(op.machine, t)
        if hits:
            return 1
    return 0


def iso_delay(info: InfoAccess, op: Operation, instance: StnInstance) -> int:
    tau = instance.pair(op.task, op.machine).nominal_time
    v = info.v0_cell(op.task, op.machine, op.start)
    return frac_ceil(tau * v) - tau


def iso_yield(info: InfoAccess, op: Operation) -> int:
    w = info.w0_cell(op.task, op.machine, op.start)
    return frac_ceil((1 - w) * 100)


def isolated_impact(
    ltype: str, info: InfoAccess, op: Operation, instance: StnInstance
) -> int:
    if ltype == BREAKDOWN:
        return iso_breakdown(info, op)
    if ltype == DELAY:
        return iso_delay(info, op, instance)
    if ltype == YIELD_LOSS:
        return iso_yield(info, op)
    raise ImpactError(f"unknown disturbance type {ltype!r}")


# -- propagation functions ---------------------------------------------------


def _material_linked(parent: Operation, child: Operation) -> bool:
    return bool(parent.produced & child.consumed)


def prop_breakdown(iso: int, parent_impacts: list[tuple[Operation, int]], op: Operation) -> int:
    z = iso
    for parent, zp in parent_impacts:
        if _material_linked(parent, op):
            z = max(z, zp)
    return min(z, 1)


def prop_delay(
    iso: int,
    parent_impacts: list[tuple[Operation, int]],
    op: Operation,
    instance: StnInstance,
    z_max: int,
) -> int:
    z = iso
    for parent, zp in parent_impacts:
        tau_p = instance.pair(parent.task, parent.machine).nominal_time
        pushed = max(0, tau_p + zp - (op.start - parent.start))
        z = max(z, pushed)
    return min(z, z_max)


def prop_yield(iso: int, parent_impacts: list[tuple[Operation, int]], op: Operation) -> int:
    z = iso
    for parent, zp in parent_impacts:
        if _material_linked(parent, op):
            z = max(z, zp)
    return z


def propagated_impact(
    ltype: str,
    iso: int,
    parent_impacts: list[tuple[Operation, int]],
    op: Operation,
    instance: StnInstance,
    spec: ImpactSpec,
) -> int:
    if ltype == BREAKDOWN:
        return prop_breakdown(iso, parent_impacts, op)
    if ltype == DELAY:
        return prop_delay(iso, parent_impacts, op, instance, spec.max_value)
    if ltype == YIELD_LOSS:
        return prop_yield(iso, parent_impacts, op)
    raise ImpactError(f"unknown disturbance type {ltype!r}")


@dataclass(frozen=True)
class ImpactAssignment:
    impact: dict[Operation, int]
    isolated: dict[Operation, int]


def impact_propagation(
    ltype: str,
    op_dag: Dag[Operation],
    info: InfoAccess,
    instance: StnInstance,
    spec: ImpactSpec,
    choose: Callable[[list[Operation]], Operation] | None = None,
) -> ImpactAssignment:
    """Isolation-then-propagation sweep over the dependence DAG.

    Processes roots first, then repeatedly any operation all of whose parents
    are done (`choose` picks among the candidates; the result is the same for
    every valid choice).
    """
    impact: dict[Operation, int] = {}
    isolated: dict[Operation, int] = {}
    done: set[Operation] = set()

    def visit(op: Operation) -> None:
        iso = isolated_impact(ltype, info, op, instance)
        parents = [(p, impact[p]) for p in op_dag.parents(op)]
        isolated[op] = iso
        impact[op] = propagated_impact(ltype, iso, parents, op, instance, spec)
        done.add(op)

    for op in sorted(op_dag.roots()):
        visit(op)
    pending = [op for op in sorted(op_dag.nodes) if op not in done]
    while pending:
        candidates = [op for op in pending if all(p in done for p in op_dag.parents(op))]
        if not candidates:
            raise ImpactError("dependence graph is not acyclic")  # unreachable: Dag invariant
        op = choose(candidates) if choose else candidates[0]
        visit(op)
        pending.remove(op)
    return ImpactAssignment(impact=impact, isolated=isolated)


# -- structure learning (dependence DAG construction) ------------------------


def structure_learning(
    ops: list[Operation],
    chi_temporal: int,
    chi_spatial: int,
    instance: StnInstance,
) -> Dag[Operation]:
    """Dependence DAG over a schedule's operations.

    Temporal arc: from the latest-completing earlier operation on the same
    machine.  Spatial arc: from the latest-completing earlier producer of any
    input material.  Argmax ties break deterministically (machine, then task,
    then start).
    """
    ordered = sorted(ops)
    dag: Dag[Operation] = Dag(ordered)

    def latest(cands: list[Operation]) -> Operation | None:
        if not cands:
            return None
        return max(cands, key=lambda o: (o.end, _desc_key(o)))

    def _desc_key(o: Operation):
        # inverted lexicographic tie-break: max() must prefer the smallest id
        return tuple(-ord(c) for c in f"{o.machine}|{o.task}|{o.start:08d}")

    for op in ordered:
        if chi_temporal:
            cands = [
                o for o in ordered
                if o is not op and o.machine == op.machine and o.end <= op.start
            ]
            parent = latest(cands)
            if parent is not None:
                dag.add_arc(parent, op)
        if chi_spatial:
            cands = [
                o for o in ordered
                if o is not op and o.end <= op.start and _material_linked(o, op)
            ]
            parent = latest(cands)
            if parent is not None:
                dag.add_arc(parent, op)
    return dag


# -- parameter learning (Monte-Carlo CPD estimation) -------------------------


def bn_structure_for(op_dag: Dag[Operation], spec: ImpactSpec) -> Dag[DiscreteVariable]:
    """Mirror the operation DAG with one impact variable per operation."""
    vars_by_op = {
        op: DiscreteVariable(id=op.key, support=spec.support) for op in op_dag.nodes
    }
    bn_dag: Dag[DiscreteVariable] = Dag(vars_by_op[op] for op in op_dag.nodes)
    for p, c in op_dag.arcs:
        bn_dag.add_arc(vars_by_op[p], vars_by_op[c])
    return bn_dag


def sample_episode(
    ltype: str,
    op_dag: Dag[Operation],
    config: DisturbanceConfig,
    instance: StnInstance,
    spec: ImpactSpec,
    seed: int,
    episode: int,
) -> dict:
    info = EpisodeInfo(config, seed, episode)
    assignment = impact_propagation(ltype, op_dag, info, instance, spec)
    return {op.key: z for op, z in assignment.impact.items()}


def parameter_learning(
    n: int,
    op_dag: Dag[Operation],
    ltype: str,
    config: DisturbanceConfig,
    instance: StnInstance,
    spec: ImpactSpec,
    seed: int,
    jobs: int = 1,
) -> DiscreteBn:
    """Estimate the impact BN of a schedule from n simulated episodes.

    Episode k draws from the stream keyed (seed, k), so the dataset is
    independent of worker layout; samples are merged in episode order.
    """
    if n < 1:
        raise ImpactError("parameter_learning needs n >= 1 episodes")
    if jobs > 1 and n >= 64:
        samples = _parallel_episodes(n, op_dag, ltype, config, instance, spec, seed, jobs)
    else:
        samples = [
            sample_episode(ltype, op_dag, config, instance, spec, seed, k)
            for k in range(n)
        ]
    structure = bn_structure_for(op_dag, spec)
    return mle_fit(structure, samples)


def _episode_chunk(args) -> list[dict]:
    ltype, op_dag, config, instance, spec, seed, lo, hi = args
    return [
        sample_episode(ltype, op_dag, config, instance, spec, seed, k)
        for k in range(lo, hi)
    ]


def _parallel_episodes(n, op_dag, ltype, config, instance, spec, seed, jobs) -> list[dict]:
    from concurrent.futures import ProcessPoolExecutor

    bounds = [(i * n) // jobs for i in range(jobs + 1)]
    tasks = [
        (ltype, op_dag, config, instance, spec, seed, bounds[i], bounds[i + 1])
        for i in range(jobs)
        if bounds[i] < bounds[i + 1]
    ]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        chunks = list(pool.map(_episode_chunk, tasks))
    return [s for chunk in chunks for s in chunk]

"""Discrete Bayesian networks over finite-support variables.

The joint factorises as the product over nodes of P(node | parents).  Three
entry points matter here: `mle_fit` estimates every conditional row as a
ratio of indicator counts, `variable_elimination` answers posterior queries
exactly (factor products, sum-outs in a min-degree order), and
`joint_enumerate` is the brute-force oracle the tests compare against.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .dag import Dag

ROW_TOL = 1e-12


class BnError(Exception):
    pass


class ZeroEvidenceError(BnError):
    """Evidence has prior probability zero; the posterior is undefined."""


class EnumerationCapError(BnError):
    pass


@dataclass(frozen=True)
class DiscreteVariable:
    id: object
    support: tuple

    def __post_init__(self):
        if len(self.support) == 0:
            raise BnError(f"variable {self.id!r}: empty support")
        if len(set(self.support)) != len(self.support):
            raise BnError(f"variable {self.id!r}: support values must be distinct")

    def index_of(self, value) -> int:
        try:
            return self.support.index(value)
        except ValueError:
            raise BnError(f"value {value!r} not in support of {self.id!r}") from None


@dataclass
class Cpd:
    child: DiscreteVariable
    parents: tuple[DiscreteVariable, ...]
    table: dict[tuple, tuple[float, ...]]  # parent assignment -> probs over child support
    uniform_rows: frozenset[tuple] = field(default_factory=frozenset)

    def validate(self) -> None:
        n = len(self.child.support)
        expected = 1
        for p in self.parents:
            expected *= len(p.support)
        if len(self.table) != expected:
            raise BnError(
                f"cpd for {self.child.id!r}: {len(self.table)} rows, expected {expected}"
            )
        for row, probs in self.table.items():
            if len(probs) != n:
                raise BnError(f"cpd for {self.child.id!r}: bad row width at {row!r}")
            if abs(sum(probs) - 1.0) > ROW_TOL:
                raise BnError(f"cpd for {self.child.id!r}: row {row!r} does not sum to 1")
            if any(p < 0 for p in probs):
                raise BnError(f"cpd for {self.child.id!r}: negative probability at {row!r}")

    def row(self, parent_values: tuple) -> tuple[float, ...]:
        return self.table[parent_values]


@dataclass
class DiscreteBn:
    structure: Dag[DiscreteVariable]
    cpds: dict[object, Cpd]  # keyed by variable id

    @property
    def variables(self) -> list[DiscreteVariable]:
        return self.structure.nodes

    def variable(self, var_id) -> DiscreteVariable:
        for v in self.structure.nodes:
            if v.id == var_id:
                return v
        raise BnError(f"no variable {var_id!r}")

    def validate(self) -> None:
        for v in self.structure.nodes:
            cpd = self.cpds.get(v.id)
            if cpd is None:
                raise BnError(f"missing cpd for {v.id!r}")
            if set(p.id for p in cpd.parents) != set(p.id for p in self.structure.parents(v)):
                raise BnError(f"cpd parents of {v.id!r} disagree with the DAG")
            cpd.validate()


def joint_enumerate(bn: DiscreteBn, cap: int = 10**6) -> dict[tuple, float]:
    """Exhaustive joint distribution, keyed by value tuples in bn.variables order."""
    vs = bn.variables
    size = 1
    for v in vs:
        size *= len(v.support)
        if size > cap:
            raise EnumerationCapError(f"joint has more than {cap} cells")
    idx = {v.id: i for i, v in enumerate(vs)}
    out: dict[tuple, float] = {}
    for assignment in itertools.product(*(v.support for v in vs)):
        p = 1.0
        for v in vs:
            cpd = bn.cpds[v.id]
            parent_vals = tuple(assignment[idx[q.id]] for q in cpd.parents)
            p *= cpd.row(parent_vals)[v.index_of(assignment[idx[v.id]])]
            if p == 0.0:
                break
        out[assignment] = p
    return out


def mle_fit(structure: Dag[DiscreteVariable], samples: list[dict]) -> DiscreteBn:
    """Fit every conditional row as joint count / parent count.

    samples: one dict per episode mapping variable id -> value; every sample
    must assign every variable.  Parent configurations never seen in the data
    default to a uniform row and are flagged on the Cpd.
    """
    if not samples:
        raise BnError("mle_fit needs at least one sample")
    vs = structure.nodes
    for s in samples:
        for v in vs:
            if v.id not in s:
                raise BnError(f"sample missing variable {v.id!r}")

    cpds: dict[object, Cpd] = {}
    for v in vs:
        parents = tuple(structure.parents(v))
        child_n = len(v.support)
        joint_counts: dict[tuple, list[int]] = {}
        for s in samples:
            pa = tuple(s[p.id] for p in parents)
            row = joint_counts.setdefault(pa, [0] * child_n)
            row[v.index_of(s[v.id])] += 1
        table: dict[tuple, tuple[float, ...]] = {}
        uniform: set[tuple] = set()
        for pa in itertools.product(*(p.support for p in parents)):
            counts = joint_counts.get(pa)
            if counts is None:
                table[pa] = tuple(1.0 / child_n for _ in range(child_n))
                uniform.add(pa)
            else:
                total = sum(counts)
                table[pa] = tuple(c / total for c in counts)
        cpds[v.id] = Cpd(
            child=v, parents=parents, table=table, uniform_rows=frozenset(uniform)
        )
    bn = DiscreteBn(structure=structure, cpds=cpds)
    bn.validate()
    return bn


# -- variable elimination ----------------------------------------------------


class _Factor:
    __slots__ = ("vars", "values")

    def __init__(self, vars: tuple, values: np.ndarray):
        self.vars = vars  # tuple of variable ids
        self.values = values  # shape = support sizes, axis order = vars


def _cpd_factor(bn: DiscreteBn, cpd: Cpd) -> _Factor:
    axes = tuple(p.id for p in cpd.parents) + (cpd.child.id,)
    shape = tuple(len(p.support) for p in cpd.parents) + (len(cpd.child.support),)
    arr = np.empty(shape)
    for i, pa in enumerate(itertools.product(*(p.support for p in cpd.parents))):
        flat_index = np.unravel_index(i, shape[:-1]) if cpd.parents else ()
        arr[flat_index] = cpd.row(pa)
    return _Factor(axes, arr)


def _reduce(f: _Factor, var_id, index: int) -> _Factor:
    axis = f.vars.index(var_id)
    taken = np.take(f.values, index, axis=axis)
    return _Factor(f.vars[:axis] + f.vars[axis + 1:], taken)


def _multiply(f1: _Factor, f2: _Factor) -> _Factor:
    out_vars = f1.vars + tuple(v for v in f2.vars if v not in f1.vars)
    def expand(f: _Factor) -> np.ndarray:
        shape = [1] * len(out_vars)
        src = f.values
        # move axes into out_vars order, then broadcast
        perm = sorted(range(len(f.vars)), key=lambda a: out_vars.index(f.vars[a]))
        src = np.transpose(src, perm)
        it = iter(src.shape)
        for i, v in enumerate(out_vars):
            if v in f.vars:
                shape[i] = next(it)
        return src.reshape(shape)
    return _Factor(out_vars, expand(f1) * expand(f2))


def _sum_out(f: _Factor, var_id) -> _Factor:
    axis = f.vars.index(var_id)
    return _Factor(f.vars[:axis] + f.vars[axis + 1:], f.values.sum(axis=axis))


def _min_degree_order(factors: list[_Factor], hidden: list) -> list:
    """Eliminate low-degree variables first; degree read off the current scopes."""
    order = []
    scopes = [set(f.vars) for f in factors]
    remaining = list(hidden)
    while remaining:
        neighbors = {
            h: set().union(*(s for s in scopes if h in s)) - {h} for h in remaining
        }
        pick = min(remaining, key=lambda h: (len(neighbors[h]), remaining.index(h)))
        order.append(pick)
        merged = set()
        keep = []
        for s in scopes:
            if pick in s:
                merged |= s
            else:
                keep.append(s)
        merged.discard(pick)
        keep.append(merged)
        scopes = keep
        remaining.remove(pick)
    return order


def variable_elimination(bn: DiscreteBn, query, evidence: dict) -> tuple[float, ...]:
    """Exact posterior P(query | evidence), normalised over the query support.

    query: a DiscreteVariable or its id.  evidence: mapping id -> observed
    value.  Raises ZeroEvidenceError when the evidence has prior probability
    zero (conditioning would be undefined).
    """
    qvar = query if isinstance(query, DiscreteVariable) else bn.variable(query)
    if qvar.id in evidence:
        # conditioning on the query itself: point mass (still checks consistency)
        probs = [0.0] * len(qvar.support)
        probs[qvar.index_of(evidence[qvar.id])] = 1.0
        rest = {k: v for k, v in evidence.items() if k != qvar.id}
        marginal = variable_elimination(bn, qvar, rest)
        if marginal[qvar.index_of(evidence[qvar.id])] <= 0.0:
            raise ZeroEvidenceError(f"evidence on {qvar.id!r} has probability zero")
        return tuple(probs)

    by_id = {v.id: v for v in bn.variables}
    for var_id, value in evidence.items():
        by_id[var_id].index_of(value)  # raises on out-of-support evidence

    factors = [_cpd_factor(bn, bn.cpds[v.id]) for v in bn.variables]
    for var_id, value in evidence.items():
        idx = by_id[var_id].index_of(value)
        factors = [
            _reduce(f, var_id, idx) if var_id in f.vars else f for f in factors
        ]
        # fully reduced (scalar) factors stay: a zero there signals impossible evidence

    hidden = [v.id for v in bn.variables if v.id != qvar.id and v.id not in evidence]
    for h in _min_degree_order(factors, hidden):
        group = [f for f in factors if h in f.vars]
        rest = [f for f in factors if h not in f.vars]
        if not group:
            continue
        prod = group[0]
        for f in group[1:]:
            prod = _multiply(prod, f)
        factors = rest + [_sum_out(prod, h)]

    result = _Factor((), np.array(1.0))
    for f in factors:
        result = _multiply(result, f)
    vec = np.asarray(result.values, dtype=float).reshape(-1)
    total = float(vec.sum())
    if total <= 0.0:
        raise ZeroEvidenceError("evidence has probability zero")
    return tuple(float(x) for x in vec / total)

"""Exact-MILP backends behind a small common interface.

The compiler eliminates definitional variables (each is an affine function of
at most one free variable), turns the remaining rows into sparse matrices,
and exposes per-objective cost vectors.  Two backends solve the compiled
form:

* BranchBoundBackend -- the bundled fallback: best-bound branch and bound
  with LP relaxations solved by scipy's HiGHS linprog, a diving heuristic
  for the first incumbent, and optional warm-start hints.
* ScipyMilpBackend -- scipy.optimize.milp (HiGHS MIP), selected with
  BBS_SOLVER=scipy-milp.

Both honor a wall-clock limit and a relative MIP gap, and report the best
bound alongside the incumbent.
"""

from __future__ import annotations

import heapq
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .model import BINARY, INF, MilpModel

INT_TOL = 1e-6
ROW_TOL = 1e-6


class MilpInfeasible(Exception):
    def __init__(self, message: str, hint: str = ""):
        super().__init__(message + (f" ({hint})" if hint else ""))
        self.hint = hint


@dataclass(frozen=True)
class SolveLimits:
    time_limit_s: float = 300.0
    rel_gap: float = 0.01


@dataclass
class Solution:
    status: str  # optimal | feasible | infeasible | timeout
    values: dict[tuple, float]
    objective: float
    bound: float
    gap: float
    wall_s: float
    nodes: int = 0

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "feasible", "timeout") and bool(self.values)


@dataclass
class Compiled:
    model: MilpModel
    free: list[int]                      # model var index per free column
    col_of: dict[int, int]               # model var index -> column
    lb: np.ndarray
    ub: np.ndarray
    is_binary: np.ndarray
    a_ub: sp.csr_matrix
    b_ub: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    expr_const: dict[int, float] = field(default_factory=dict)   # eliminated var -> const
    expr_terms: dict[int, tuple[int, float] | None] = field(default_factory=dict)

    def objective_vector(self, name: str) -> tuple[np.ndarray, float, str]:
        sense, terms, const = self.model.objectives[name]
        c = np.zeros(len(self.free))
        extra = const
        for idx, coef in terms.items():
            if idx in self.col_of:
                c[self.col_of[idx]] += coef
            else:
                extra += coef * self.expr_const[idx]
                ref = self.expr_terms[idx]
                if ref is not None:
                    c[self.col_of[ref[0]]] += coef * ref[1]
        return c, extra, sense

    def full_values(self, x: np.ndarray) -> dict[tuple, float]:
        values = {}
        for col, idx in enumerate(self.free):
            values[self.model.names[idx]] = float(x[col])
        for idx, const in self.expr_const.items():
            v = const
            ref = self.expr_terms[idx]
            if ref is not None:
                v += ref[1] * x[self.col_of[ref[0]]]
            values[self.model.names[idx]] = float(v)
        return values

    def check_point(self, x: np.ndarray) -> bool:
        if np.any(x < self.lb - 1e-7) or np.any(x > self.ub + 1e-7):
            return False
        if self.a_ub.shape[0] and np.max(self.a_ub @ x - self.b_ub) > ROW_TOL:
            return False
        if self.a_eq.shape[0] and np.max(np.abs(self.a_eq @ x - self.b_eq)) > ROW_TOL:
            return False
        frac = x[self.is_binary]
        return bool(np.all(np.abs(frac - np.round(frac)) <= 1e-5))


def compile_model(model: MilpModel) -> Compiled:
    eliminated: dict[int, tuple[float, tuple[int, float] | None]] = {}
    for d in model.definitions:
        if len(d.terms) > 1:
            raise ValueError("definitional rows must reference at most one variable")
        if d.terms:
            ref_idx, ref_coef = d.terms[0]
            if ref_idx in eliminated:
                base_const, base_ref = eliminated[ref_idx]
                const = d.const + ref_coef * base_const
                ref = None if base_ref is None else (base_ref[0], ref_coef * base_ref[1])
            else:
                const, ref = d.const, (ref_idx, ref_coef)
        else:
            const, ref = d.const, None
        eliminated[d.var] = (const, ref)

    free = [i for i in range(len(model.names)) if i not in eliminated]
    col_of = {idx: c for c, idx in enumerate(free)}
    lb = np.array([model.lb[i] for i in free])
    ub = np.array([model.ub[i] for i in free])
    is_binary = np.array([model.kind[i] == BINARY for i in free])

    ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []

    def substitute(terms, rhs):
        combined: dict[int, float] = {}
        r = rhs
        for idx, coef in terms:
            if idx in eliminated:
                const, ref = eliminated[idx]
                r -= coef * const
                if ref is not None:
                    combined[ref[0]] = combined.get(ref[0], 0.0) + coef * ref[1]
            else:
                combined[idx] = combined.get(idx, 0.0) + coef
        return combined, r

    for row in model.rows:
        combined, rhs = substitute(row.terms, row.rhs)
        entries = [(col_of[i], c) for i, c in combined.items() if c != 0.0]
        if row.sense == "==":
            eq_rows.append(entries)
            eq_rhs.append(rhs)
        elif row.sense == "<=":
            ub_rows.append(entries)
            ub_rhs.append(rhs)
        else:
            ub_rows.append([(c, -v) for c, v in entries])
            ub_rhs.append(-rhs)

    def to_csr(rows, width):
        data, ri, ci = [], [], []
        for r, entries in enumerate(rows):
            for c, v in entries:
                ri.append(r)
                ci.append(c)
                data.append(v)
        return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), width))

    n = len(free)
    return Compiled(
        model=model,
        free=free,
        col_of=col_of,
        lb=lb,
        ub=ub,
        is_binary=is_binary,
        a_ub=to_csr(ub_rows, n),
        b_ub=np.array(ub_rhs),
        a_eq=to_csr(eq_rows, n),
        b_eq=np.array(eq_rhs),
        expr_const={i: c for i, (c, _) in eliminated.items()},
        expr_terms={i: ref for i, (_, ref) in eliminated.items()},
    )


def complete_hint(compiled: Compiled, partial: dict[tuple, float]) -> np.ndarray | None:
    """Fill a partial assignment (x/y/p/q) by solving each equality row that
    has exactly one unknown (the inventory/backlog recursions)."""
    model = compiled.model
    x = np.full(len(compiled.free), np.nan)
    for col, idx in enumerate(compiled.free):
        name = model.names[idx]
        if name in partial:
            x[col] = partial[name]
        elif compiled.lb[col] == compiled.ub[col]:
            x[col] = compiled.lb[col]
    a_eq = compiled.a_eq.tocsr()
    for _sweep in range(2):
        progress = False
        for r in range(a_eq.shape[0]):
            cols = a_eq.indices[a_eq.indptr[r] : a_eq.indptr[r + 1]]
            vals = a_eq.data[a_eq.indptr[r] : a_eq.indptr[r + 1]]
            unknown = [(c, v) for c, v in zip(cols, vals) if math.isnan(x[c])]
            if len(unknown) != 1:
                continue
            c, v = unknown[0]
            known = sum(vv * x[cc] for cc, vv in zip(cols, vals) if not math.isnan(x[cc]))
            x[c] = (compiled.b_eq[r] - known) / v
            progress = True
        if not progress:
            break
    if np.any(np.isnan(x)):
        return None
    return x


def _lp(compiled: Compiled, c: np.ndarray, lb: np.ndarray, ub: np.ndarray):
    res = linprog(
        c,
        A_ub=compiled.a_ub if compiled.a_ub.shape[0] else None,
        b_ub=compiled.b_ub if compiled.a_ub.shape[0] else None,
        A_eq=compiled.a_eq if compiled.a_eq.shape[0] else None,
        b_eq=compiled.b_eq if compiled.a_eq.shape[0] else None,
        bounds=list(zip(lb, [None if math.isinf(u) else u for u in ub])),
        method="highs",
    )
    return res


class BranchBoundBackend:
    """Bundled fallback: branch and bound over HiGHS LP relaxations."""

    name = "fallback"

    def solve(
        self,
        model: MilpModel,
        objective: str,
        limits: SolveLimits = SolveLimits(),
        hint: dict[tuple, float] | None = None,
    ) -> Solution:
        start = time.perf_counter()
        compiled = compile_model(model)
        c, const, sense = compiled.objective_vector(objective)
        sign = 1.0 if sense == "min" else -1.0
        c_int = sign * c

        incumbent: np.ndarray | None = None
        inc_val = INF
        if hint is not None:
            x0 = complete_hint(compiled, hint)
            if x0 is not None and compiled.check_point(x0):
                incumbent = x0
                inc_val = float(c_int @ x0)

        nodes_solved = 0

        def lp_solve(lb, ub):
            nonlocal nodes_solved
            nodes_solved += 1
            return _lp(compiled, c_int, lb, ub)

        root = lp_solve(compiled.lb.copy(), compiled.ub.copy())
        if root.status == 2:
            return Solution(
                status="infeasible", values={}, objective=INF, bound=INF, gap=INF,
                wall_s=time.perf_counter() - start, nodes=nodes_solved,
            )
        if root.status != 0:
            raise MilpInfeasible(f"LP relaxation failed with status {root.status}")

        def fractional(x):
            frac = np.where(compiled.is_binary, np.abs(x - np.round(x)), 0.0)
            j = int(np.argmax(frac))
            return (j, frac[j]) if frac[j] > INT_TOL else (None, 0.0)

        def timed_out() -> bool:
            return time.perf_counter() - start > limits.time_limit_s

        # diving heuristic: round the most fractional binary, re-solve, repeat
        if incumbent is None:
            lb, ub = compiled.lb.copy(), compiled.ub.copy()
            res = root
            for _ in range(2 * int(compiled.is_binary.sum()) + 1):
                j, f = fractional(res.x)
                if j is None:
                    incumbent = res.x
                    inc_val = float(c_int @ res.x)
                    break
                v = round(res.x[j])
                lb[j] = ub[j] = float(v)
                res = lp_solve(lb, ub)
                if res.status != 0 or timed_out():
                    break

        counter = 0
        heap: list = []

        def push(bound, lb, ub, x):
            nonlocal counter
            counter += 1
            heapq.heappush(heap, (bound, counter, lb, ub, x))

        push(float(root.fun), compiled.lb.copy(), compiled.ub.copy(), root.x)
        status = "optimal"

        while heap:
            best_open = heap[0][0]
            if incumbent is not None:
                if best_open >= inc_val - 1e-9:
                    heap.clear()  # everything open is dominated
                    break
                if (inc_val - best_open) / max(1.0, abs(inc_val)) <= limits.rel_gap:
                    break
            if timed_out():
                status = "timeout"
                break
            bound, _, lb, ub, x = heapq.heappop(heap)
            j, _f = fractional(x)
            if j is None:
                if bound < inc_val:
                    incumbent, inc_val = x, bound
                continue
            for branch_dir in (0, 1):
                clb, cub = lb.copy(), ub.copy()
                if branch_dir == 0:
                    cub[j] = math.floor(x[j])
                else:
                    clb[j] = math.ceil(x[j])
                res = lp_solve(clb, cub)
                if res.status != 0:
                    continue
                child_bound = float(res.fun)
                if incumbent is not None and child_bound >= inc_val - 1e-9:
                    continue
                jj, _ = fractional(res.x)
                if jj is None:
                    if child_bound < inc_val:
                        incumbent, inc_val = res.x, child_bound
                else:
                    push(child_bound, clb, cub, res.x)

        if incumbent is None:
            return Solution(
                status="timeout" if status == "timeout" else "infeasible",
                values={},
                objective=INF,
                bound=INF,
                gap=INF,
                wall_s=time.perf_counter() - start,
                nodes=nodes_solved,
            )
        best_bound = min(heap[0][0], inc_val) if heap else inc_val
        gap = (inc_val - best_bound) / max(1.0, abs(inc_val))
        return Solution(
            status=status,
            values=compiled.full_values(incumbent),
            objective=sign * inc_val + const,
            bound=sign * best_bound + const,
            gap=max(0.0, gap),
            wall_s=time.perf_counter() - start,
            nodes=nodes_solved,
        )


class ScipyMilpBackend:
    """scipy.optimize.milp (HiGHS branch-and-cut)."""

    name = "scipy-milp"

    def solve(
        self,
        model: MilpModel,
        objective: str,
        limits: SolveLimits = SolveLimits(),
        hint: dict[tuple, float] | None = None,
    ) -> Solution:
        from scipy.optimize import LinearConstraint, Bounds, milp

        start = time.perf_counter()
        compiled = compile_model(model)
        c, const, sense = compiled.objective_vector(objective)
        sign = 1.0 if sense == "min" else -1.0

        constraints = []
        if compiled.a_ub.shape[0]:
            constraints.append(
                LinearConstraint(compiled.a_ub, -np.inf, compiled.b_ub)
            )
        if compiled.a_eq.shape[0]:
            constraints.append(
                LinearConstraint(compiled.a_eq, compiled.b_eq, compiled.b_eq)
            )
        res = milp(
            sign * c,
            constraints=constraints,
            integrality=compiled.is_binary.astype(int),
            bounds=Bounds(compiled.lb, compiled.ub),
            options={
                "time_limit": limits.time_limit_s,
                "mip_rel_gap": limits.rel_gap,
                "presolve": True,
            },
        )
        wall = time.perf_counter() - start
        if res.status == 2 or res.x is None and res.status != 1:
            return Solution("infeasible", {}, INF, INF, INF, wall)
        if res.x is None:
            return Solution("timeout", {}, INF, -INF, INF, wall)
        inc = float(sign * c @ res.x)
        bound = float(res.mip_dual_bound) if res.mip_dual_bound is not None else inc
        status = "optimal" if res.status == 0 else "timeout"
        gap = abs(inc - bound) / max(1.0, abs(inc))
        return Solution(
            status=status,
            values=compiled.full_values(res.x),
            objective=sign * inc + const,
            bound=sign * bound + const,
            gap=gap,
            wall_s=wall,
        )


def get_backend(name: str | None = None):
    """Backend named by the argument or the BBS_SOLVER environment variable."""
    name = name or os.environ.get("BBS_SOLVER", "fallback")
    if name in ("fallback", "bnb", "branch-and-bound"):
        return BranchBoundBackend()
    if name in ("scipy-milp", "highs"):
        return ScipyMilpBackend()
    raise ValueError(f"unknown solver backend {name!r}")

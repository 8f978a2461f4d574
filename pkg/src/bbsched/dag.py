"""Directed acyclic graphs with the vocabulary used throughout the scheduler.

Nodes keep insertion order everywhere (parents, children, traversals), so any
computation over a Dag is bit-reproducible between runs.  Definitions:

* height of a node: length of the longest path from any root to it (roots
  have height 0); the graph height is the maximum node height.
* non-descendants of x: all nodes except descendants(x); x itself is a
  non-descendant of x.
* n-fold parents: Pa^(0)(x) = {x}, Pa^(n)(x) = Pa(Pa^(n-1)(x)).
"""

from __future__ import annotations

from typing import Generic, Hashable, Iterable, TypeVar

N = TypeVar("N", bound=Hashable)


class DagError(Exception):
    pass


class CycleError(DagError):
    pass


class UnknownNodeError(DagError):
    pass


class Dag(Generic[N]):
    def __init__(self, nodes: Iterable[N] = ()):
        self._children: dict[N, dict[N, None]] = {}
        self._parents: dict[N, dict[N, None]] = {}
        for n in nodes:
            self.add_node(n)

    # -- construction -------------------------------------------------

    def add_node(self, node: N) -> None:
        if node not in self._children:
            self._children[node] = {}
            self._parents[node] = {}

    def add_arc(self, parent: N, child: N) -> None:
        """Insert parent -> child, rejecting unknown endpoints and cycles."""
        if parent not in self._children:
            raise UnknownNodeError(f"unknown node: {parent!r}")
        if child not in self._children:
            raise UnknownNodeError(f"unknown node: {child!r}")
        if parent == child:
            raise CycleError(f"self-arc on {parent!r}")
        if child in self._children and self._reaches(child, parent):
            raise CycleError(f"arc {parent!r} -> {child!r} would close a cycle")
        self._children[parent][child] = None
        self._parents[child][parent] = None

    def _reaches(self, src: N, dst: N) -> bool:
        stack = [src]
        seen = set()
        while stack:
            n = stack.pop()
            if n == dst:
                return True
            if n in seen:
                continue
            seen.add(n)
            stack.extend(self._children[n])
        return False

    # -- accessors ----------------------------------------------------

    @property
    def nodes(self) -> list[N]:
        return list(self._children)

    @property
    def arcs(self) -> list[tuple[N, N]]:
        return [(p, c) for p in self._children for c in self._children[p]]

    def __len__(self) -> int:
        return len(self._children)

    def __contains__(self, node: N) -> bool:
        return node in self._children

    def _require(self, node: N) -> None:
        if node not in self._children:
            raise UnknownNodeError(f"unknown node: {node!r}")

    def parents(self, node: N) -> list[N]:
        self._require(node)
        return list(self._parents[node])

    def children(self, node: N) -> list[N]:
        self._require(node)
        return list(self._children[node])

    def roots(self) -> list[N]:
        return [n for n in self._children if not self._parents[n]]

    def ancestors(self, node: N) -> list[N]:
        """Nodes with a directed path to ``node``, in discovery order."""
        self._require(node)
        out: dict[N, None] = {}
        stack = list(self._parents[node])
        while stack:
            n = stack.pop(0)
            if n in out:
                continue
            out[n] = None
            stack.extend(p for p in self._parents[n] if p not in out)
        return list(out)

    def descendants(self, node: N) -> list[N]:
        self._require(node)
        out: dict[N, None] = {}
        stack = list(self._children[node])
        while stack:
            n = stack.pop(0)
            if n in out:
                continue
            out[n] = None
            stack.extend(c for c in self._children[n] if c not in out)
        return list(out)

    def non_descendants(self, node: N) -> list[N]:
        de = set(self.descendants(node))
        return [n for n in self._children if n not in de]

    def height(self, node: N) -> int:
        self._require(node)
        return self._heights()[node]

    def _heights(self) -> dict[N, int]:
        h: dict[N, int] = {}
        for n in self.topological_order():
            ps = self._parents[n]
            h[n] = 1 + max(h[p] for p in ps) if ps else 0
        return h

    def graph_height(self) -> int:
        if not self._children:
            return 0
        return max(self._heights().values())

    def height_classes(self) -> list[list[N]]:
        """Partition of the nodes by height, ascending."""
        h = self._heights()
        classes: list[list[N]] = [[] for _ in range(self.graph_height() + 1)] if h else []
        for n in self._children:
            classes[h[n]].append(n)
        return classes

    def topological_order(self) -> list[N]:
        """Kahn's algorithm with insertion-order tie-breaking."""
        indeg = {n: len(self._parents[n]) for n in self._children}
        queue = [n for n in self._children if indeg[n] == 0]
        order: list[N] = []
        while queue:
            n = queue.pop(0)
            order.append(n)
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(order) != len(self._children):
            raise CycleError("graph contains a cycle")  # unreachable by construction
        return order

    def is_topological(self, order: Iterable[N]) -> bool:
        pos = {n: i for i, n in enumerate(order)}
        if len(pos) != len(self._children) or set(pos) != set(self._children):
            return False
        return all(pos[p] < pos[c] for p, c in self.arcs)

    def n_fold_parents(self, node: N, n: int) -> list[N]:
        self._require(node)
        if n < 0:
            raise ValueError("n must be >= 0")
        current: dict[N, None] = {node: None}
        for _ in range(n):
            nxt: dict[N, None] = {}
            for x in current:
                for p in self._parents[x]:
                    nxt[p] = None
            current = nxt
        return list(current)

    def inclusive_recursive_parents(self, node: N) -> list[N]:
        """Union of Pa^(i)(node) for i = 0..height(node)."""
        out: dict[N, None] = {node: None}
        current: dict[N, None] = {node: None}
        for _ in range(self.height(node)):
            nxt: dict[N, None] = {}
            for x in current:
                for p in self._parents[x]:
                    nxt[p] = None
                    out[p] = None
            current = nxt
        return list(out)

    def restricted_to(self, keep: Iterable[N]) -> "Dag[N]":
        """Induced subgraph on ``keep`` (insertion order preserved)."""
        keep_set = set(keep)
        sub: Dag[N] = Dag(n for n in self._children if n in keep_set)
        for p, c in self.arcs:
            if p in keep_set and c in keep_set:
                sub.add_arc(p, c)
        return sub

    def to_dot(self, label=str) -> str:
        lines = ["digraph g {"]
        ids = {n: f"n{i}" for i, n in enumerate(self._children)}
        for n, i in ids.items():
            lines.append(f'  {i} [label="{label(n)}"];')
        for p, c in self.arcs:
            lines.append(f"  {ids[p]} -> {ids[c]};")
        lines.append("}")
        return "\n".join(lines)

"""Operations and schedules.

An operation is one planned batch: a 5-tuple of task, machine, size, start
and end step, augmented with the material sets it produces and consumes.  A
schedule is the set of operations planned over a window plus the per-step
purchase and shipment plans that the same solve produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .instance import StnInstance


@dataclass(frozen=True, order=True)
class Operation:
    start: int
    machine: str
    task: str
    end: int
    size: Fraction = field(compare=False)
    produced: frozenset[str] = field(compare=False)
    consumed: frozenset[str] = field(compare=False)

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError("operation must have start < end")

    @property
    def key(self) -> tuple[int, str, str]:
        return (self.start, self.machine, self.task)

    def __repr__(self):
        return (
            f"Op({self.task}@{self.machine},b={float(self.size):g},"
            f"[{self.start},{self.end}])"
        )


def make_operation(
    instance: StnInstance, task: str, machine: str, size, start: int, end: int
) -> Operation:
    recipe = instance.recipes[task]
    return Operation(
        start=start,
        machine=machine,
        task=task,
        end=end,
        size=Fraction(size) if not isinstance(size, Fraction) else size,
        produced=frozenset(recipe.produced()),
        consumed=frozenset(recipe.consumed()),
    )


@dataclass(frozen=True)
class Schedule:
    start: int
    end: int
    operations: tuple[Operation, ...]
    purchases: dict[tuple[str, int], Fraction] = field(default_factory=dict)
    shipments: dict[tuple[str, int], Fraction] = field(default_factory=dict)

    @staticmethod
    def empty(start: int, end: int) -> "Schedule":
        return Schedule(start=start, end=end, operations=())

    def horizon_at(self, t: int) -> int:
        return self.end - t

    def slice(self, a: int, b: int) -> list[Operation]:
        """Operations with start >= a and end <= b (window slice rule)."""
        return [o for o in self.operations if o.start >= a and o.end <= b]

    def starts(self) -> set[tuple[int, str, str]]:
        return {o.key for o in self.operations}

    def initiations_at(self, t: int) -> list[Operation]:
        return [o for o in self.operations if o.start == t]

    def purchase_at(self, k: str, t: int) -> Fraction:
        return self.purchases.get((k, t), Fraction(0))

    def shipment_at(self, k: str, t: int) -> Fraction:
        return self.shipments.get((k, t), Fraction(0))

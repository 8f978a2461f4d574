"""Immutable data model of a multipurpose batch plant and instance loaders.

Quantities are held as exact fractions (instance files carry decimals such as
0.8/0.2 conversion coefficients); floats only appear at solver boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

COEFF_TOL = Fraction(1, 10**9)

RAW = "raw"
INTERMEDIATE = "intermediate"
PRODUCT = "product"


class InstanceError(Exception):
    """Instance file failed to parse or violated an invariant."""


def to_frac(value) -> Fraction:
    """Exact fraction from a JSON number or decimal string."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise InstanceError(f"expected a number, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise InstanceError(f"bad decimal string {value!r}") from exc
    raise InstanceError(f"expected a number, got {value!r}")


@dataclass(frozen=True)
class Material:
    id: str
    kind: str
    storage_limit: Fraction | None  # None encodes unbounded storage
    inventory_cost: Fraction
    backlog_cost: Fraction | None
    initial_inventory: Fraction

    def validate(self) -> None:
        if self.kind not in (RAW, INTERMEDIATE, PRODUCT):
            raise InstanceError(f"material {self.id}: unknown kind {self.kind!r}")
        if self.storage_limit is not None and self.storage_limit <= 0:
            raise InstanceError(f"material {self.id}: storage_limit must be > 0")
        if self.inventory_cost < 0:
            raise InstanceError(f"material {self.id}: inventory_cost must be >= 0")
        if (self.backlog_cost is not None) != (self.kind == PRODUCT):
            raise InstanceError(
                f"material {self.id}: backlog_cost is defined iff kind is product"
            )
        if self.backlog_cost is not None and self.backlog_cost < 0:
            raise InstanceError(f"material {self.id}: backlog_cost must be >= 0")
        if self.initial_inventory < 0:
            raise InstanceError(f"material {self.id}: initial_inventory must be >= 0")


@dataclass(frozen=True)
class TaskMachinePair:
    task: str
    machine: str
    nominal_time: int
    batch_min: Fraction
    batch_max: Fraction
    start_cost: Fraction

    def validate(self) -> None:
        if self.nominal_time < 1:
            raise InstanceError(
                f"pair ({self.task},{self.machine}): nominal_time must be >= 1"
            )
        if not (0 < self.batch_min <= self.batch_max):
            raise InstanceError(
                f"pair ({self.task},{self.machine}): need 0 < batch_min <= batch_max"
            )
        if self.start_cost < 0:
            raise InstanceError(
                f"pair ({self.task},{self.machine}): start_cost must be >= 0"
            )


@dataclass(frozen=True)
class Recipe:
    task: str
    coefficients: dict[str, Fraction]  # material -> signed fraction

    def consumed(self) -> dict[str, Fraction]:
        return {k: c for k, c in self.coefficients.items() if c < 0}

    def produced(self) -> dict[str, Fraction]:
        return {k: c for k, c in self.coefficients.items() if c > 0}

    def validate(self) -> None:
        cons, prod = self.consumed(), self.produced()
        if not cons or not prod:
            raise InstanceError(
                f"recipe {self.task}: needs at least one consumed and one produced material"
            )
        if abs(sum(cons.values()) + 1) > COEFF_TOL:
            raise InstanceError(f"recipe {self.task}: consumed fractions must sum to -1")
        if sum(prod.values()) > 1 + COEFF_TOL:
            raise InstanceError(f"recipe {self.task}: produced fractions must sum to <= 1")


@dataclass(frozen=True)
class DemandProfile:
    product: str
    baseline_quantity: Fraction
    baseline_period: int
    intermittent_rate: float
    intermittent_size: tuple[Fraction, Fraction]
    urgent_rate: float
    urgent_size: tuple[Fraction, Fraction]

    def validate(self) -> None:
        if self.baseline_quantity < 0 or self.baseline_period < 1:
            raise InstanceError(f"demand {self.product}: bad baseline")
        for name, rate, size in (
            ("intermittent", self.intermittent_rate, self.intermittent_size),
            ("urgent", self.urgent_rate, self.urgent_size),
        ):
            if rate < 0:
                raise InstanceError(f"demand {self.product}: {name} rate must be >= 0")
            if size[0] > size[1]:
                raise InstanceError(
                    f"demand {self.product}: {name} size range lower must be <= upper"
                )

    def baseline_at(self, t: int) -> Fraction:
        """Recurring order quantity due at step t (t_12, t_24, ... for period 12)."""
        if t > 0 and t % self.baseline_period == 0:
            return self.baseline_quantity
        return Fraction(0)


@dataclass(frozen=True)
class StnInstance:
    name: str
    materials: dict[str, Material]
    pairs: list[TaskMachinePair]
    recipes: dict[str, Recipe]
    demands: dict[str, DemandProfile]
    supply_bounds: dict[str, Fraction] = field(default_factory=dict)

    # -- derived views -------------------------------------------------

    @property
    def machines(self) -> list[str]:
        seen: dict[str, None] = {}
        for p in self.pairs:
            seen[p.machine] = None
        return list(seen)

    @property
    def tasks(self) -> list[str]:
        seen: dict[str, None] = {}
        for p in self.pairs:
            seen[p.task] = None
        return list(seen)

    def pair(self, task: str, machine: str) -> TaskMachinePair:
        for p in self.pairs:
            if p.task == task and p.machine == machine:
                return p
        raise KeyError((task, machine))

    def tasks_on(self, machine: str) -> list[str]:
        return [p.task for p in self.pairs if p.machine == machine]

    def producers_of(self, material: str) -> list[str]:
        return [t for t, r in self.recipes.items() if r.produced().get(material)]

    def consumers_of(self, material: str) -> list[str]:
        return [t for t, r in self.recipes.items() if r.consumed().get(material)]

    def products(self) -> list[str]:
        return [k for k, m in self.materials.items() if m.kind == PRODUCT]

    def raw_materials(self) -> list[str]:
        return [k for k, m in self.materials.items() if m.kind == RAW]

    def supply_bound(self, material: str) -> Fraction | None:
        """Per-period purchase cap; None when unbounded (the default)."""
        return self.supply_bounds.get(material)

    def validate(self) -> None:
        for m in self.materials.values():
            m.validate()
        for p in self.pairs:
            p.validate()
        for r in self.recipes.values():
            r.validate()
        for d in self.demands.values():
            d.validate()
        paired_tasks = set(self.tasks)
        for task, recipe in self.recipes.items():
            if task not in paired_tasks:
                raise InstanceError(f"recipe {task}: task appears in no task-machine pair")
            for k in recipe.coefficients:
                if k not in self.materials:
                    raise InstanceError(f"recipe {task}: unknown material {k}")
        for task in paired_tasks:
            if task not in self.recipes:
                raise InstanceError(f"task {task}: no recipe")
        for j in self.machines:
            if not self.tasks_on(j):
                raise InstanceError(f"machine {j}: empty compatibility set")
        produced = {k for r in self.recipes.values() for k in r.produced()}
        consumed = {k for r in self.recipes.values() for k in r.consumed()}
        for k, m in self.materials.items():
            derived = (
                RAW if k not in produced
                else PRODUCT if k not in consumed
                else INTERMEDIATE
            )
            if m.kind != derived:
                raise InstanceError(
                    f"material {k}: declared kind {m.kind!r} but recipe topology implies {derived!r}"
                )
        for k in self.demands:
            if k not in self.materials or self.materials[k].kind != PRODUCT:
                raise InstanceError(f"demand for non-product material {k}")
        for k in self.supply_bounds:
            if k not in self.materials or self.materials[k].kind != RAW:
                raise InstanceError(f"supply bound for non-raw material {k}")


# -- JSON (de)serialization; format documented in docs/instance-format.md ----


def _frac_out(x: Fraction) -> str | int:
    if x.denominator == 1:
        return int(x)
    return str(x)


def _parse_limit(value) -> Fraction | None:
    if value == "unbounded" or value is None:
        return None
    return to_frac(value)


def instance_from_dict(doc: dict, name: str = "instance") -> StnInstance:
    try:
        materials = {}
        for m in doc["materials"]:
            materials[m["id"]] = Material(
                id=m["id"],
                kind=m["kind"],
                storage_limit=_parse_limit(m.get("storage_limit", "unbounded")),
                inventory_cost=to_frac(m.get("inventory_cost", 0)),
                backlog_cost=(
                    to_frac(m["backlog_cost"]) if "backlog_cost" in m else None
                ),
                initial_inventory=to_frac(m.get("initial_inventory", 0)),
            )
        pairs = [
            TaskMachinePair(
                task=p["task"],
                machine=p["machine"],
                nominal_time=int(p["nominal_time"]),
                batch_min=to_frac(p["batch_min"]),
                batch_max=to_frac(p["batch_max"]),
                start_cost=to_frac(p["start_cost"]),
            )
            for p in doc["task_machine_pairs"]
        ]
        recipes = {
            r["task"]: Recipe(
                task=r["task"],
                coefficients={k: to_frac(v) for k, v in r["coefficients"].items()},
            )
            for r in doc["recipes"]
        }
        demands = {
            d["product"]: DemandProfile(
                product=d["product"],
                baseline_quantity=to_frac(d["baseline"]["quantity"]),
                baseline_period=int(d["baseline"]["period"]),
                intermittent_rate=float(d["intermittent"]["rate"]),
                intermittent_size=(
                    to_frac(d["intermittent"]["size_min"]),
                    to_frac(d["intermittent"]["size_max"]),
                ),
                urgent_rate=float(d["urgent"]["rate"]),
                urgent_size=(
                    to_frac(d["urgent"]["size_min"]),
                    to_frac(d["urgent"]["size_max"]),
                ),
            )
            for d in doc["demands"]
        }
        supply = {k: to_frac(v) for k, v in doc.get("supply_bounds", {}).items()}
    except KeyError as exc:
        raise InstanceError(f"missing key {exc.args[0]!r}") from exc
    inst = StnInstance(
        name=doc.get("name", name),
        materials=materials,
        pairs=pairs,
        recipes=recipes,
        demands=demands,
        supply_bounds=supply,
    )
    inst.validate()
    return inst


def instance_to_dict(inst: StnInstance) -> dict:
    doc = {
        "name": inst.name,
        "materials": [],
        "task_machine_pairs": [],
        "recipes": [],
        "demands": [],
    }
    for m in inst.materials.values():
        entry = {
            "id": m.id,
            "kind": m.kind,
            "storage_limit": "unbounded" if m.storage_limit is None else _frac_out(m.storage_limit),
            "inventory_cost": _frac_out(m.inventory_cost),
            "initial_inventory": _frac_out(m.initial_inventory),
        }
        if m.backlog_cost is not None:
            entry["backlog_cost"] = _frac_out(m.backlog_cost)
        doc["materials"].append(entry)
    for p in inst.pairs:
        doc["task_machine_pairs"].append(
            {
                "task": p.task,
                "machine": p.machine,
                "nominal_time": p.nominal_time,
                "batch_min": _frac_out(p.batch_min),
                "batch_max": _frac_out(p.batch_max),
                "start_cost": _frac_out(p.start_cost),
            }
        )
    for r in inst.recipes.values():
        doc["recipes"].append(
            {
                "task": r.task,
                "coefficients": {k: _frac_out(v) for k, v in r.coefficients.items()},
            }
        )
    for d in inst.demands.values():
        doc["demands"].append(
            {
                "product": d.product,
                "baseline": {
                    "quantity": _frac_out(d.baseline_quantity),
                    "period": d.baseline_period,
                },
                "intermittent": {
                    "rate": d.intermittent_rate,
                    "size_min": _frac_out(d.intermittent_size[0]),
                    "size_max": _frac_out(d.intermittent_size[1]),
                },
                "urgent": {
                    "rate": d.urgent_rate,
                    "size_min": _frac_out(d.urgent_size[0]),
                    "size_max": _frac_out(d.urgent_size[1]),
                },
            }
        )
    if inst.supply_bounds:
        doc["supply_bounds"] = {k: _frac_out(v) for k, v in inst.supply_bounds.items()}
    return doc


def load_instance(path: str | Path) -> StnInstance:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise InstanceError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: not valid JSON: {exc}") from exc
    return instance_from_dict(doc, name=path.stem)


def builtin_example(n: int) -> StnInstance:
    """The four benchmark plants, shipped as package data files."""
    if n not in (1, 2, 3, 4):
        raise InstanceError(f"built-in example number must be 1..4, got {n}")
    ref = resources.files("bbsched.data").joinpath(f"example{n}.json")
    doc = json.loads(ref.read_text())
    return instance_from_dict(doc, name=f"example{n}")

"""Scenario generation and the rolling certainty-horizon window.

A ScenarioTape holds one pre-drawn realisation of every information variable
over the run.  Each cell is drawn from its own counter-based stream keyed by
(master_seed, kind, index, t), so the tape is bit-identical however cells are
enumerated.  Demand sizes are quantised to 1e-6 so downstream state
accounting stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from ._rng import stream
from .dynamics import InfoVector, frac_ceil
from .instance import StnInstance, to_frac

ZERO = Fraction(0)
ONE = Fraction(1)


class DisturbanceError(Exception):
    pass


@dataclass(frozen=True)
class DisturbanceConfig:
    """Endogenous disturbance distributions (demand processes live on the instance).

    Defaults produce nontrivial but survivable disruption rates at desk scale.
    """

    breakdown_prob: float = 0.002
    time_factor_support: tuple[tuple[Fraction, float], ...] = (
        (Fraction(1), 0.85),
        (Fraction(3, 2), 0.10),
        (Fraction(2), 0.05),
    )
    yield_factor_support: tuple[tuple[Fraction, float], ...] = (
        (Fraction(1), 0.90),
        (Fraction(9, 10), 0.07),
        (Fraction(4, 5), 0.03),
    )
    demand_scale: float = 1.0  # scales intermittent and urgent arrival rates

    def validate(self) -> None:
        if not (0 <= self.breakdown_prob <= 1):
            raise DisturbanceError("breakdown_prob must be in [0,1]")
        if self.demand_scale < 0:
            raise DisturbanceError("demand_scale must be >= 0")
        for name, support in (
            ("time_factor_support", self.time_factor_support),
            ("yield_factor_support", self.yield_factor_support),
        ):
            if not support:
                raise DisturbanceError(f"{name} must be nonempty")
            total = 0.0
            for value, prob in support:
                if value <= 0:
                    raise DisturbanceError(f"{name}: factors must be > 0")
                if not (0 <= prob <= 1):
                    raise DisturbanceError(f"{name}: probabilities must be in [0,1]")
                total += prob
            if abs(total - 1.0) > 1e-9:
                raise DisturbanceError(f"{name}: probabilities must sum to 1")

    @staticmethod
    def disabled() -> "DisturbanceConfig":
        return DisturbanceConfig(
            breakdown_prob=0.0,
            time_factor_support=((ONE, 1.0),),
            yield_factor_support=((ONE, 1.0),),
            demand_scale=0.0,
        )

    @property
    def max_time_factor(self) -> Fraction:
        return max(v for v, _ in self.time_factor_support)

    @staticmethod
    def from_dict(doc: dict) -> "DisturbanceConfig":
        def support(entries):
            return tuple((to_frac(e["value"]), float(e["prob"])) for e in entries)

        cfg = DisturbanceConfig(
            breakdown_prob=float(doc.get("breakdown_prob", 0.002)),
            time_factor_support=(
                support(doc["time_factor_support"])
                if "time_factor_support" in doc
                else DisturbanceConfig.time_factor_support
            ),
            yield_factor_support=(
                support(doc["yield_factor_support"])
                if "yield_factor_support" in doc
                else DisturbanceConfig.yield_factor_support
            ),
            demand_scale=float(doc.get("demand_scale", 1.0)),
        )
        cfg.validate()
        return cfg


# -- per-cell draws ---------------------------------------------------------


def draw_breakdown(seed: int, machine: str, t: int, prob: float) -> int:
    if prob <= 0:
        return 0
    g = stream(seed, "u", machine, t)
    return int(g.random() < prob)


def draw_factor(
    seed: int, kind: str, task: str, machine: str, t: int,
    support: tuple[tuple[Fraction, float], ...],
) -> Fraction:
    if len(support) == 1:
        return support[0][0]
    g = stream(seed, kind, (task, machine), t)
    roll = g.random()
    acc = 0.0
    for value, prob in support:
        acc += prob
        if roll < acc:
            return value
    return support[-1][0]


def draw_demand(
    seed: int, kind: str, product: str, t: int,
    rate: float, size_lo: Fraction, size_hi: Fraction,
) -> Fraction:
    """Sum of Poisson(rate)-many orders, each uniform over the size range."""
    if rate <= 0:
        return ZERO
    g = stream(seed, kind, product, t)
    count = int(g.poisson(rate))
    total = ZERO
    for _ in range(count):
        size = float(size_lo) + (float(size_hi) - float(size_lo)) * g.random()
        total += Fraction(f"{size:.6f}")
    return total


@dataclass(frozen=True)
class ScenarioTape:
    master_seed: int
    length: int  # cells exist for t in [0, length)
    instance: StnInstance
    config: DisturbanceConfig
    breakdown: dict[tuple[str, int], int]
    time_factor0: dict[tuple[str, str, int], Fraction]   # (task, machine, start t)
    yield_factor0: dict[tuple[str, str, int], Fraction]
    urgent: dict[tuple[str, int], Fraction]
    intermittent: dict[tuple[str, int], Fraction]
    _max_elapsed: dict[tuple[str, str], int] = field(default_factory=dict)

    def max_elapsed(self, task: str, machine: str) -> int:
        return self._max_elapsed[(task, machine)]

    def v0(self, task: str, machine: str, t: int) -> Fraction:
        if t < 0 or t >= self.length:
            return ONE
        return self.time_factor0[(task, machine, t)]

    def w0(self, task: str, machine: str, t: int) -> Fraction:
        if t < 0 or t >= self.length:
            return ONE
        return self.yield_factor0[(task, machine, t)]

    def info_at(self, t: int) -> InfoVector:
        """Materialise the step-t information vector.

        Factor cells at elapsed n carry the value drawn at the batch's start
        step t-n, matching the adjusted-parameter propagation.
        """
        if not (0 <= t < self.length):
            raise DisturbanceError(f"tape has no cells at t={t}")
        inst = self.instance
        tf: dict[tuple[str, str, int], Fraction] = {}
        wf: dict[tuple[str, str, int], Fraction] = {}
        for p in inst.pairs:
            for n in range(self.max_elapsed(p.task, p.machine) + 1):
                tf[(p.task, p.machine, n)] = self.v0(p.task, p.machine, t - n)
                wf[(p.task, p.machine, n)] = self.w0(p.task, p.machine, t - n)
        return InfoVector(
            urgent_demand={k: self.urgent.get((k, t), ZERO) for k in inst.products()},
            breakdown={j: self.breakdown.get((j, t), 0) for j in inst.machines},
            time_factor=tf,
            yield_factor=wf,
            baseline_demand={
                k: inst.demands[k].baseline_at(t) if k in inst.demands else ZERO
                for k in inst.products()
            },
            intermittent_demand={
                k: self.intermittent.get((k, t), ZERO) for k in inst.products()
            },
        )


def generate_tape(
    config: DisturbanceConfig, instance: StnInstance, seed: int, steps: int
) -> ScenarioTape:
    """Pre-draw every information cell for t in [0, steps)."""
    if steps < 1:
        raise DisturbanceError("steps must be >= 1")
    config.validate()

    breakdown = {}
    for j in instance.machines:
        for t in range(steps):
            breakdown[(j, t)] = draw_breakdown(seed, j, t, config.breakdown_prob)

    time_factor0 = {}
    yield_factor0 = {}
    max_elapsed = {}
    for p in instance.pairs:
        max_elapsed[(p.task, p.machine)] = frac_ceil(
            p.nominal_time * config.max_time_factor
        )
        for t in range(steps):
            time_factor0[(p.task, p.machine, t)] = draw_factor(
                seed, "v", p.task, p.machine, t, config.time_factor_support
            )
            yield_factor0[(p.task, p.machine, t)] = draw_factor(
                seed, "w", p.task, p.machine, t, config.yield_factor_support
            )

    urgent = {}
    intermittent = {}
    for k, d in instance.demands.items():
        u_rate = d.urgent_rate * config.demand_scale
        i_rate = d.intermittent_rate * config.demand_scale
        for t in range(steps):
            urgent[(k, t)] = draw_demand(
                seed, "f", k, t, u_rate, d.urgent_size[0], d.urgent_size[1]
            )
            intermittent[(k, t)] = draw_demand(
                seed, "nu", k, t, i_rate, d.intermittent_size[0], d.intermittent_size[1]
            )

    return ScenarioTape(
        master_seed=seed,
        length=steps,
        instance=instance,
        config=config,
        breakdown=breakdown,
        time_factor0=time_factor0,
        yield_factor0=yield_factor0,
        urgent=urgent,
        intermittent=intermittent,
        _max_elapsed=max_elapsed,
    )


@dataclass(frozen=True)
class LookaheadWindow:
    """View of the tape at step t: cells up to t + h_c are revealed.

    Revealed cells never change, so everything at or before the certainty
    horizon (including the past) is readable; later endogenous cells are not.
    Intermittent demand is order-book information and is visible across the
    whole scheduling horizon.
    """

    tape: ScenarioTape
    t: int
    h_c: int

    @property
    def horizon_end(self) -> int:
        return self.t + self.h_c

    def _check_revealed(self, s: int) -> None:
        if s > self.horizon_end:
            raise DisturbanceError(
                f"cell at t={s} is beyond the certainty horizon (t={self.t}, h_c={self.h_c})"
            )

    def info_at(self, s: int) -> InfoVector:
        self._check_revealed(s)
        return self.tape.info_at(s)

    def breakdown(self, machine: str, s: int) -> int:
        self._check_revealed(s)
        return self.tape.breakdown.get((machine, s), 0)

    def duration(self, task: str, machine: str, start: int) -> int:
        """Adjusted duration of a batch starting at ``start``; nominal beyond the window."""
        tau = self.tape.instance.pair(task, machine).nominal_time
        if start <= self.horizon_end:
            return frac_ceil(tau * self.tape.v0(task, machine, start))
        return tau

    def yield_factor(self, task: str, machine: str, start: int) -> Fraction:
        if start <= self.horizon_end:
            return self.tape.w0(task, machine, start)
        return ONE

    def urgent(self, product: str, s: int) -> Fraction:
        """Observed urgent demand; zero beyond the certainty horizon."""
        if s > self.horizon_end:
            return ZERO
        return self.tape.urgent.get((product, s), ZERO)

    def intermittent(self, product: str, s: int) -> Fraction:
        return self.tape.intermittent.get((product, s), ZERO)

    def baseline(self, product: str, s: int) -> Fraction:
        d = self.tape.instance.demands.get(product)
        return d.baseline_at(s) if d else ZERO


def advance(window: LookaheadWindow) -> LookaheadWindow:
    """Shift the window one step, revealing the next cell."""
    if window.t + window.h_c + 1 >= window.tape.length:
        raise DisturbanceError("look-ahead horizon exhausted: tape too short")
    return LookaheadWindow(tape=window.tape, t=window.t + 1, h_c=window.h_c)

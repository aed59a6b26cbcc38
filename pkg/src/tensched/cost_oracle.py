"""Deterministic analytical cost model for complete schedules.

Stands in for hardware benchmarking: bounds inference gives per-stage
invocation counts and regions, and the cost combines flop work (discounted
by vector width and parallel speedup), a two-level memory model (a read or
write is cheap when the producer's working set fits in cache), and a linear
per-task parallel overhead.  All arithmetic is fixed-point at three
decimals so results are bit-identical across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .pipeline_ir import (
    Pipeline,
    PipelineError,
    Region,
    STAGE_ELEM_SIZE,
    footprint_region,
)
from .schedule_space import ScheduleState, StageNest, loop_nest


class IncompleteScheduleError(PipelineError):
    pass


@dataclass(frozen=True)
class MachineModel:
    flop_cost: int = 1
    mem_byte_cost: int = 8
    cache_byte_cost: int = 1
    cache_size: int = 32768
    cores: int = 4
    task_overhead: int = 1000
    vec_widths: tuple[int, ...] = (1, 4, 8, 16)

    def __post_init__(self):
        if min(
            self.flop_cost,
            self.mem_byte_cost,
            self.cache_byte_cost,
            self.cache_size,
            self.cores,
            self.task_overhead,
        ) < 1:
            raise PipelineError("machine model parameters must be positive")
        if self.cache_byte_cost > self.mem_byte_cost:
            raise PipelineError("cache_byte_cost must not exceed mem_byte_cost")


_MACHINE_INT_FIELDS = (
    "flop_cost",
    "mem_byte_cost",
    "cache_byte_cost",
    "cache_size",
    "cores",
    "task_overhead",
)


def parse_machine_file(text: str, base: MachineModel | None = None) -> MachineModel:
    """key=value lines overriding the defaults."""
    m = base or MachineModel()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            k, v = line.split("=", 1)
        except ValueError:
            raise PipelineError(f"machine file line {lineno}: expected key=value")
        k = k.strip()
        if k not in _MACHINE_INT_FIELDS:
            raise PipelineError(f"machine file line {lineno}: unknown key {k!r}")
        m = replace(m, **{k: int(v)})
    return m


@dataclass(frozen=True)
class BoundsEntry:
    invocations: int
    region: Region  # per-invocation pure region (origin box)
    points_per_invocation: int
    recompute_factor: Fraction


@dataclass(frozen=True)
class BoundsTable:
    entries: dict  # stage name -> BoundsEntry

    def __getitem__(self, name: str) -> BoundsEntry:
        return self.entries[name]


def infer_bounds(s: ScheduleState) -> BoundsTable:
    """Invocation counts and per-invocation regions for every scheduled stage."""
    if not s.is_complete:
        raise IncompleteScheduleError(
            f"schedule covers {s.scheduled_count}/{len(s.pipeline.stages)} stages"
        )
    return _bounds_for_prefix(s)


def _bounds_for_prefix(s: ScheduleState) -> BoundsTable:
    nests = loop_nest(s)
    entries = {}
    for name, nest in nests.items():
        stage = s.pipeline.stage(name)
        region = Region.from_extents(nest.pure_extents)
        ppi = region.size * math.prod(stage.reduction_extents)
        entries[name] = BoundsEntry(
            nest.invocations,
            region,
            ppi,
            Fraction(nest.invocations * ppi, stage.domain_points),
        )
    return BoundsTable(entries)


@dataclass(frozen=True)
class StageCost:
    compute: int  # millis (cost units * 1000)
    memory: int
    overhead: int

    @property
    def total(self) -> int:
        return self.compute + self.memory + self.overhead


@dataclass(frozen=True)
class Cost:
    per_stage: dict = field(hash=False)

    def __hash__(self):
        return hash(self.total_millis)

    @property
    def total_millis(self) -> int:
        return sum(c.total for c in self.per_stage.values())

    def __lt__(self, other):
        return self.total_millis < other.total_millis

    def __str__(self):
        return format_millis(self.total_millis)


def format_millis(m: int) -> str:
    return f"{m // 1000}.{m % 1000:03d}"


def _div_round_half_up_millis(numer: int, denom: int) -> int:
    # value = numer/denom rendered in fixed-point millis, round half up
    return (2 * numer * 1000 + denom) // (2 * denom)


def _working_set_bytes(p: Pipeline, nest: StageNest) -> int:
    """Bytes of the stage's temporary allocation at its store site."""
    stage = p.stage(nest.stage)
    if nest.store_at is None:
        points = math.prod(stage.pure_extents)
    else:
        points = math.prod(nest.pure_extents)
    return points * STAGE_ELEM_SIZE


def benchmark(s: ScheduleState, m: MachineModel | None = None) -> Cost:
    """Total abstract cost of a complete schedule; pure and bit-deterministic."""
    m = m or MachineModel()
    bounds = infer_bounds(s)
    nests = loop_nest(s)
    p = s.pipeline
    per_stage = {}
    for d in s.decisions:
        stage = p.stage(d.stage)
        nest = nests[d.stage]
        b = bounds[d.stage]

        v = d.vectorize_width if d.vectorize_width > 1 else 1
        if d.parallel:
            par_extent = nest.loops[0].extent
            pfac = min(m.cores, par_extent)
            overhead = m.task_overhead * par_extent * 1000
        else:
            pfac = 1
            overhead = 0
        compute = _div_round_half_up_millis(
            b.invocations * b.points_per_invocation * stage.flops_per_point * m.flop_cost,
            v * pfac,
        )

        # Per-invocation iteration region over pure + reduction dims.
        iter_region = Region(
            b.region.intervals + tuple((0, e) for e in stage.reduction_extents)
        )
        memory = 0
        for edge in stage.inputs:
            fp = footprint_region(edge, iter_region)
            elem = p.producer_element_size(edge.producer)
            if p.has_stage(edge.producer):
                ws = _working_set_bytes(p, nests[edge.producer])
                unit = m.cache_byte_cost if ws <= m.cache_size else m.mem_byte_cost
            else:
                unit = m.mem_byte_cost
            memory += b.invocations * fp.size * elem * unit * 1000
        own_ws = _working_set_bytes(p, nest)
        unit_out = m.cache_byte_cost if own_ws <= m.cache_size else m.mem_byte_cost
        memory += b.invocations * b.region.size * STAGE_ELEM_SIZE * unit_out * 1000

        per_stage[d.stage] = StageCost(compute, memory, overhead)
    return Cost(per_stage)


def cost_breakdown(s: ScheduleState, m: MachineModel | None = None) -> Cost:
    """Alias of benchmark; the Cost already carries the per-stage breakdown."""
    return benchmark(s, m)

"""MDP states and actions over pipeline schedules.

A state is an ordered list of per-stage decisions; an action bundles all
primitives (split/reorder/vectorize/parallel/compute_at/store_at) for one
stage.  Stages are scheduled consumers-first (reverse topological order) so
that compute_at/store_at always reference an already-fixed consumer nest.

Legality is checked against *effective* loop extents: when a stage is
anchored inside a consumer, its per-invocation region (from footprint
inference) determines the extents its splits and vector widths must divide,
which keeps every tile uniform and the cost model closed-form exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product as iproduct

from .pipeline_ir import (
    Pipeline,
    PipelineError,
    Region,
    footprint_region,
    schedule_order,
)

SPLIT_FACTORS = (8, 32)
VEC_WIDTHS = (1, 8)
MAX_COMPUTE_AT_LEVELS = 3  # consumer loop levels 0..2


class IllegalActionError(PipelineError):
    pass


@dataclass(frozen=True)
class LayerSchedule:
    """Complete primitive bundle for one stage."""

    stage: str
    splits: tuple[tuple[str, int], ...]  # (dim, factor), at most innermost two
    order: tuple[str, ...]  # permutation of resulting loop names
    vectorize_width: int = 1
    parallel: bool = False
    compute_at: tuple[str, int] | None = None  # None = Root
    store_at: tuple[str, int] | None = None

    def render(self) -> str:
        splits = ",".join(f"{d}:{f}" for d, f in self.splits) or "-"
        at = "root" if self.compute_at is None else f"{self.compute_at[0]}@{self.compute_at[1]}"
        st = "root" if self.store_at is None else f"{self.store_at[0]}@{self.store_at[1]}"
        return (
            f"{self.stage} split={splits} order={','.join(self.order)} "
            f"vec={self.vectorize_width} par={int(self.parallel)} at={at} store={st}"
        )


def parse_layer_schedule(text: str) -> LayerSchedule:
    """Inverse of LayerSchedule.render (also the schedule-file line format)."""
    toks = text.split()
    if len(toks) != 7:
        raise PipelineError(f"bad schedule line: {text!r}")
    stage = toks[0]
    fields: dict[str, str] = {}
    for tok in toks[1:]:
        try:
            k, v = tok.split("=", 1)
        except ValueError:
            raise PipelineError(f"bad schedule token {tok!r}") from None
        fields[k] = v
    try:
        splits: tuple = ()
        if fields["split"] != "-":
            splits = tuple(
                (d, int(f))
                for d, f in (part.split(":") for part in fields["split"].split(","))
            )
        order = tuple(fields["order"].split(","))

        def site(v):
            if v == "root":
                return None
            c, lvl = v.split("@")
            return (c, int(lvl))

        return LayerSchedule(
            stage,
            splits,
            order,
            int(fields["vec"]),
            bool(int(fields["par"])),
            site(fields["at"]),
            site(fields["store"]),
        )
    except (KeyError, ValueError) as e:
        raise PipelineError(f"bad schedule line {text!r}: {e}") from None


@dataclass(frozen=True)
class Loop:
    name: str
    dim: str  # base dim this loop derives from
    extent: int
    vectorized: bool = False
    parallel: bool = False

    @property
    def annotations(self) -> frozenset:
        out = set()
        if self.vectorized:
            out.add("vectorized")
        if self.parallel:
            out.add("parallel")
        return frozenset(out)


@dataclass(frozen=True)
class StageNest:
    """Materialized loops for one scheduled stage plus its anchoring."""

    stage: str
    loops: tuple[Loop, ...]
    compute_at: tuple[str, int] | None
    store_at: tuple[str, int] | None
    invocations: int
    pure_extents: tuple[int, ...]  # per-invocation, in stage dim order
    depth: int  # loop depth of the compute site (0 = Root)


@dataclass(frozen=True)
class ScheduleState:
    pipeline: Pipeline
    decisions: tuple[LayerSchedule, ...] = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __hash__(self):
        return hash((self.pipeline.name, self.decisions))

    def __eq__(self, other):
        return (
            isinstance(other, ScheduleState)
            and self.pipeline == other.pipeline
            and self.decisions == other.decisions
        )

    @property
    def scheduled_count(self) -> int:
        return len(self.decisions)

    @property
    def order(self) -> list[str]:
        if "order" not in self._cache:
            self._cache["order"] = schedule_order(self.pipeline)
        return self._cache["order"]

    @property
    def is_complete(self) -> bool:
        return len(self.decisions) == len(self.pipeline.stages)

    @property
    def next_stage_name(self) -> str:
        return self.order[len(self.decisions)]


def initial_state(p: Pipeline) -> ScheduleState:
    if not p.stages:
        raise PipelineError("pipeline has no stages")
    return ScheduleState(p)


def canonical_key(s: ScheduleState) -> str:
    return s.pipeline.name + "/" + ";".join(d.render() for d in s.decisions)


def _anchor_ok(cnest: StageNest, lvl: int) -> bool:
    """A level is a legal anchor only if each dim's free loops are a
    weight-order suffix: fixing a low-order split digit while leaving the
    high-order digit free would make the needed region strided, which the
    interval bounds model cannot represent."""
    by_dim: dict[str, dict[str, int]] = {}
    for i, l in enumerate(cnest.loops):
        by_dim.setdefault(l.dim, {})[l.name] = i
    for d, loops in by_dim.items():
        if len(loops) == 2 and loops[d + "i"] <= lvl < loops[d + "o"]:
            return False
    return True


def _per_invocation_extents(
    p: Pipeline, nests: dict[str, StageNest], stage_name: str,
    anchor: tuple[str, int] | None,
) -> tuple[tuple[int, ...], int, int]:
    """(pure extents, invocations, depth) of `stage_name` under `anchor`."""
    stage = p.stage(stage_name)
    if anchor is None:
        return stage.pure_extents, 1, 0
    cname, lvl = anchor
    cnest = nests[cname]
    cstage = p.stage(cname)
    if not _anchor_ok(cnest, lvl):
        raise IllegalActionError(
            f"level {lvl} of {cname} fixes a low-order split digit; "
            "anchored region would be strided"
        )
    inv = cnest.invocations * math.prod(l.extent for l in cnest.loops[: lvl + 1])
    # Per-invocation computed region of the consumer: for each consumer dim,
    # the product of its loops strictly inside the anchor level.
    rem = {d: 1 for d, _ in cstage.all_dims}
    for l in cnest.loops[lvl + 1 :]:
        rem[l.dim] *= l.extent
    cregion = Region(tuple((0, rem[d]) for d, _ in cstage.all_dims))
    edges = [e for e in cstage.inputs if e.producer == stage_name]
    if not edges:
        raise IllegalActionError(
            f"{cname} does not consume {stage_name}; cannot anchor there"
        )
    # Hull over parallel edges from the same consumer.
    extents = None
    for e in edges:
        fp = footprint_region(e, cregion).extents
        extents = fp if extents is None else tuple(
            max(a, b) for a, b in zip(extents, fp)
        )
    return extents, inv, cnest.depth + lvl + 1


def _build_loops(
    stage, pure_extents, decision: LayerSchedule
) -> tuple[Loop, ...]:
    split = dict(decision.splits)
    by_name: dict[str, Loop] = {}
    for (d, _), e in zip(stage.dims, pure_extents):
        if d in split:
            f = split[d]
            by_name[d + "o"] = Loop(d + "o", d, e // f)
            by_name[d + "i"] = Loop(d + "i", d, f)
        else:
            by_name[d] = Loop(d, d, e)
    for d, e in stage.reduction_dims:
        by_name[d] = Loop(d, d, e)
    if sorted(decision.order) != sorted(by_name):
        raise IllegalActionError(
            f"{stage.name}: order {decision.order} is not a permutation of "
            f"loops {sorted(by_name)}"
        )
    loops = [by_name[n] for n in decision.order]
    if decision.vectorize_width > 1:
        loops[-1] = Loop(
            loops[-1].name, loops[-1].dim, loops[-1].extent, vectorized=True
        )
    if decision.parallel:
        l0 = loops[0]
        loops[0] = Loop(l0.name, l0.dim, l0.extent, l0.vectorized, parallel=True)
    return tuple(loops)


def _nest_entry(
    p: Pipeline, nests: dict[str, StageNest], decision: LayerSchedule
) -> StageNest:
    stage = p.stage(decision.stage)
    pure_extents, inv, depth = _per_invocation_extents(
        p, nests, decision.stage, decision.compute_at
    )
    loops = _build_loops(stage, pure_extents, decision)
    return StageNest(
        decision.stage,
        loops,
        decision.compute_at,
        decision.store_at,
        inv,
        pure_extents,
        depth,
    )


def loop_nest(s: ScheduleState) -> dict[str, StageNest]:
    """Materialized loops per scheduled stage (cached on the state)."""
    if "nest" in s._cache:
        return s._cache["nest"]
    nests: dict[str, StageNest] = {}
    for d in s.decisions:
        nests[d.stage] = _nest_entry(s.pipeline, nests, d)
    s._cache["nest"] = nests
    return nests


def check_action(s: ScheduleState, a: LayerSchedule) -> str | None:
    """Return a violated-invariant description, or None if the action is legal."""
    if s.is_complete:
        return "state is already complete"
    if a.stage != s.next_stage_name:
        return f"expected a decision for stage {s.next_stage_name!r}, got {a.stage!r}"
    p = s.pipeline
    stage = p.stage(a.stage)
    nests = loop_nest(s)

    if a.compute_at is not None:
        cname, lvl = a.compute_at
        consumers = p.consumers_of(a.stage)
        if len(consumers) != 1 or consumers[0] != cname:
            return (
                f"{a.stage}: compute_at target must be the sole consumer "
                f"(consumers: {list(consumers)})"
            )
        if cname not in nests:
            return f"{a.stage}: consumer {cname} is not scheduled yet"
        if not 0 <= lvl < len(nests[cname].loops):
            return f"{a.stage}: loop level {lvl} does not exist in {cname}'s nest"
    if a.store_at is not None and a.store_at != a.compute_at:
        return f"{a.stage}: store_at must be Root or the compute_at site"

    try:
        extents, _, _ = _per_invocation_extents(p, nests, a.stage, a.compute_at)
    except IllegalActionError as e:
        return str(e)
    eff = dict(zip((d for d, _ in stage.dims), extents))
    pure = set(eff)
    seen = set()
    for d, f in a.splits:
        if d in seen:
            return f"{a.stage}: dim {d} split twice"
        seen.add(d)
        if d not in pure:
            return f"{a.stage}: cannot split non-pure dim {d}"
        if f < 2:
            return f"{a.stage}: split factor {f} < 2"
        if eff[d] % f != 0:
            return f"{a.stage}: factor {f} does not divide extent {eff[d]} of {d}"
    try:
        loops = _build_loops(stage, extents, a)
    except IllegalActionError as e:
        return str(e)
    if a.vectorize_width not in (1, 4, 8, 16):
        return f"{a.stage}: bad vectorize width {a.vectorize_width}"
    if a.vectorize_width > 1:
        inner = loops[-1]
        if inner.dim not in pure:
            return f"{a.stage}: vectorized loop {inner.name} is a reduction dim"
        if inner.extent % a.vectorize_width != 0:
            return (
                f"{a.stage}: width {a.vectorize_width} does not divide innermost "
                f"extent {inner.extent}"
            )
    if a.parallel and loops[0].dim not in pure:
        return f"{a.stage}: parallel loop {loops[0].name} is a reduction dim"
    return None


def apply(s: ScheduleState, a: LayerSchedule) -> ScheduleState:
    """Extend a state by one decision; raises IllegalActionError when illegal."""
    reason = check_action(s, a)
    if reason is not None:
        raise IllegalActionError(reason)
    child = ScheduleState(s.pipeline, s.decisions + (a,))
    child._cache["nest"] = {**loop_nest(s), a.stage: _nest_entry(s.pipeline, loop_nest(s), a)}
    child._cache["order"] = s.order
    return child


def _order_options(pure_loops, reduction_loops):
    seqs = []
    placements = ["inner", "outer"] if reduction_loops else ["inner"]
    for placement in placements:
        if placement == "inner":
            base = list(pure_loops) + list(reduction_loops)
        else:
            base = list(reduction_loops) + list(pure_loops)
        for swap in (False, True):
            seq = list(base)
            if swap and len(seq) >= 2:
                seq[-1], seq[-2] = seq[-2], seq[-1]
            t = tuple(seq)
            if t not in seqs:
                seqs.append(t)
    return seqs


def candidate_actions(s: ScheduleState) -> list[LayerSchedule]:
    """All legal decisions for the next stage, deterministically ordered.

    The default decision (no split, natural order, no vectorize, no
    parallel, compute and store at Root) is always first and always legal.
    """
    if s.is_complete:
        raise IllegalActionError("state is already complete")
    p = s.pipeline
    stage = p.stage(s.next_stage_name)
    nests = loop_nest(s)

    anchors: list[tuple[str, int] | None] = [None]
    consumers = p.consumers_of(stage.name)
    if len(consumers) == 1 and consumers[0] in nests:
        host = nests[consumers[0]]
        for lvl in range(min(MAX_COMPUTE_AT_LEVELS, len(host.loops))):
            if _anchor_ok(host, lvl):
                anchors.append((consumers[0], lvl))

    splittable = [d for d, _ in stage.dims[-2:]]  # innermost two pure dims
    red_names = [d for d, _ in stage.reduction_dims]
    out: list[LayerSchedule] = []
    seen: set[tuple] = set()
    for anchor in anchors:
        extents, _, _ = _per_invocation_extents(p, nests, stage.name, anchor)
        eff = dict(zip((d for d, _ in stage.dims), extents))
        split_choices = []
        for d in splittable:
            opts: list[int | None] = [None]
            opts += [f for f in SPLIT_FACTORS if eff[d] % f == 0 and f < eff[d]]
            split_choices.append(opts)
        store_opts = [None] if anchor is None else [None, anchor]
        for combo in iproduct(*split_choices):
            splits = tuple(
                (d, f) for d, f in zip(splittable, combo) if f is not None
            )
            split = dict(splits)
            pure_names = []
            for d, _ in stage.dims:
                if d in split:
                    pure_names += [d + "o", d + "i"]
                else:
                    pure_names.append(d)
            name_ext = {}
            for d, _ in stage.dims:
                if d in split:
                    name_ext[d + "o"] = eff[d] // split[d]
                    name_ext[d + "i"] = split[d]
                else:
                    name_ext[d] = eff[d]
            for d, e in stage.reduction_dims:
                name_ext[d] = e
            for order in _order_options(pure_names, red_names):
                inner = order[-1]
                inner_pure = inner not in red_names
                vec_opts = [1] + [
                    w
                    for w in VEC_WIDTHS
                    if w > 1 and inner_pure and name_ext[inner] % w == 0
                ]
                outer_pure = order[0] not in red_names
                par_opts = [False] + ([True] if outer_pure else [])
                for vec in vec_opts:
                    for par in par_opts:
                        for store in store_opts:
                            a = LayerSchedule(
                                stage.name, splits, order, vec, par, anchor, store
                            )
                            sig = (splits, order, vec, par, anchor, store)
                            if sig not in seen:
                                seen.add(sig)
                                out.append(a)
    return out


def default_action(s: ScheduleState) -> LayerSchedule:
    stage = s.pipeline.stage(s.next_stage_name)
    order = tuple(d for d, _ in stage.all_dims)
    return LayerSchedule(stage.name, (), order)


def state_from_decisions(p: Pipeline, decisions) -> ScheduleState:
    """Rebuild a state by applying decisions in order, with legality checks."""
    s = initial_state(p)
    for d in decisions:
        s = apply(s, d)
    return s


def state_from_key(p: Pipeline, key: str) -> ScheduleState:
    """Inverse of canonical_key for states of pipeline `p`."""
    prefix = p.name + "/"
    if not key.startswith(prefix):
        raise PipelineError(f"key {key!r} does not belong to pipeline {p.name!r}")
    body = key[len(prefix):]
    decisions = [parse_layer_schedule(t) for t in body.split(";") if t]
    return state_from_decisions(p, decisions)


def write_schedule(s: ScheduleState) -> str:
    """Schedule file: one decision per line, canonical tokens."""
    return "\n".join(d.render() for d in s.decisions) + "\n"


def read_schedule(p: Pipeline, text: str) -> ScheduleState:
    decisions = [
        parse_layer_schedule(line)
        for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    return state_from_decisions(p, decisions)

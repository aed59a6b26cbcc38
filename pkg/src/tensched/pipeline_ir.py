"""Declarative tensor-pipeline representation: stages, buffers, footprints.

A pipeline is a DAG of stages over external buffers.  Each stage has an
iteration domain (pure dims plus optional reduction dims) and reads its
producers through strided-window access maps, which is enough to express
pointwise ops, stencils, convolutions and pooling while keeping bounds
inference exact interval arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# Bytes per element produced by a stage.  External buffers carry their own
# element size; stage outputs are fixed-width.
STAGE_ELEM_SIZE = 4


class PipelineError(Exception):
    pass


class ParseError(PipelineError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CycleError(PipelineError):
    pass


class UnknownStageError(PipelineError):
    pass


@dataclass(frozen=True)
class Region:
    """Per-dimension half-open integer intervals [lo, hi)."""

    intervals: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for lo, hi in self.intervals:
            if lo > hi:
                raise PipelineError(f"empty-violating interval [{lo}, {hi})")

    @staticmethod
    def from_extents(extents) -> "Region":
        return Region(tuple((0, e) for e in extents))

    @property
    def size(self) -> int:
        return math.prod(hi - lo for lo, hi in self.intervals)

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(hi - lo for lo, hi in self.intervals)

    def __len__(self):
        return len(self.intervals)


@dataclass(frozen=True)
class AccessMap:
    """Producer index range for consumer index c is [stride*c, stride*c + window)."""

    consumer_dim: int | None
    stride: int
    window: int


@dataclass(frozen=True)
class InputEdge:
    producer: str
    access: tuple[AccessMap, ...]


@dataclass(frozen=True)
class Stage:
    name: str
    dims: tuple[tuple[str, int], ...]  # pure dims, outermost first
    reduction_dims: tuple[tuple[str, int], ...]
    flops_per_point: int
    inputs: tuple[InputEdge, ...]
    output: bool = False

    @property
    def all_dims(self) -> tuple[tuple[str, int], ...]:
        return self.dims + self.reduction_dims

    @property
    def pure_extents(self) -> tuple[int, ...]:
        return tuple(e for _, e in self.dims)

    @property
    def reduction_extents(self) -> tuple[int, ...]:
        return tuple(e for _, e in self.reduction_dims)

    @property
    def domain_points(self) -> int:
        return math.prod(self.pure_extents) * math.prod(self.reduction_extents)


@dataclass(frozen=True)
class ExternalBuffer:
    name: str
    dims: tuple[int, ...]
    element_size: int


@dataclass(frozen=True)
class Pipeline:
    name: str
    buffers: tuple[ExternalBuffer, ...]
    stages: tuple[Stage, ...]
    _consumers: dict = field(default=None, compare=False, repr=False, hash=False)

    def __hash__(self):
        return hash((self.name, self.buffers, self.stages))

    def stage(self, name: str) -> Stage:
        for s in self.stages:
            if s.name == name:
                return s
        raise UnknownStageError(f"unknown stage {name!r}")

    def has_stage(self, name: str) -> bool:
        return any(s.name == name for s in self.stages)

    def buffer(self, name: str) -> ExternalBuffer:
        for b in self.buffers:
            if b.name == name:
                return b
        raise PipelineError(f"unknown buffer {name!r}")

    def producer_extents(self, name: str) -> tuple[int, ...]:
        if self.has_stage(name):
            return self.stage(name).pure_extents
        return self.buffer(name).dims

    def producer_element_size(self, name: str) -> int:
        if self.has_stage(name):
            return STAGE_ELEM_SIZE
        return self.buffer(name).element_size

    def consumers_of(self, name: str) -> tuple[str, ...]:
        """Stage names that read `name`, in declaration order."""
        return tuple(
            s.name for s in self.stages if any(e.producer == name for e in s.inputs)
        )

    @property
    def output_stage(self) -> Stage:
        for s in self.stages:
            if s.output:
                return s
        raise PipelineError("no output stage")


@dataclass
class ValidationReport:
    entries: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.entries

    def add(self, msg: str):
        self.entries.append(msg)

    def __str__(self):
        return "ok" if self.ok else "\n".join(self.entries)


def topological_order(p: Pipeline) -> list[str]:
    """Stage names with every producer before its consumers.

    Ties are broken by declaration order so every downstream enumeration is
    deterministic.  Raises CycleError on cyclic input references.
    """
    stage_names = [s.name for s in p.stages]
    deps = {
        s.name: [e.producer for e in s.inputs if e.producer in stage_names]
        for s in p.stages
    }
    order: list[str] = []
    placed: set[str] = set()
    while len(order) < len(stage_names):
        progressed = False
        for name in stage_names:
            if name in placed:
                continue
            if all(d in placed for d in deps[name]):
                order.append(name)
                placed.add(name)
                progressed = True
        if not progressed:
            remaining = [n for n in stage_names if n not in placed]
            raise CycleError(f"cycle among stages {remaining}")
    return order


def schedule_order(p: Pipeline) -> list[str]:
    """Order in which stages are scheduled: consumers first.

    compute_at/store_at reference loop levels of an already-scheduled
    consumer, so scheduling walks the DAG from the output backwards.
    """
    return list(reversed(topological_order(p)))


def footprint_region(edge: InputEdge, consumer_region: Region) -> Region:
    """Exact interval image of the access maps over a consumer region."""
    intervals = []
    for am in edge.access:
        if am.consumer_dim is None:
            intervals.append((0, am.window))
            continue
        if am.consumer_dim >= len(consumer_region):
            raise PipelineError(
                f"access map references consumer dim {am.consumer_dim} "
                f"but region has {len(consumer_region)} dims"
            )
        lo, hi = consumer_region.intervals[am.consumer_dim]
        intervals.append((am.stride * lo, am.stride * (hi - 1) + am.window))
    return Region(tuple(intervals))


@dataclass(frozen=True)
class IntrinsicStats:
    points: int
    flops: int
    input_bytes: int
    output_bytes: int


def intrinsic_stats(p: Pipeline, stage_name: str) -> IntrinsicStats:
    """Schedule-invariant per-stage quantities."""
    s = p.stage(stage_name)
    points = s.domain_points
    flops = points * s.flops_per_point
    full = Region.from_extents([e for _, e in s.all_dims])
    input_bytes = 0
    for edge in s.inputs:
        fp = footprint_region(edge, full)
        input_bytes += fp.size * p.producer_element_size(edge.producer)
    output_bytes = math.prod(s.pure_extents) * STAGE_ELEM_SIZE
    return IntrinsicStats(points, flops, input_bytes, output_bytes)


def validate(p: Pipeline) -> ValidationReport:
    """Collect all invariant violations; empty report iff well-formed."""
    rep = ValidationReport()
    names = [b.name for b in p.buffers] + [s.name for s in p.stages]
    seen = set()
    for n in names:
        if n in seen:
            rep.add(f"duplicate name {n!r}")
        seen.add(n)

    for b in p.buffers:
        if any(e < 1 for e in b.dims):
            rep.add(f"buffer {b.name}: extents must be >= 1")
        if b.element_size < 1:
            rep.add(f"buffer {b.name}: element_size must be >= 1")

    if not p.stages:
        rep.add("pipeline has no stages")
    n_out = sum(1 for s in p.stages if s.output)
    if p.stages and n_out != 1:
        rep.add(f"pipeline must have exactly one output stage, found {n_out}")

    stage_names = {s.name for s in p.stages}
    buffer_names = {b.name for b in p.buffers}
    declared_before: set[str] = set(buffer_names)
    for s in p.stages:
        if not s.dims:
            rep.add(f"stage {s.name}: no pure dims")
        dim_names = [d for d, _ in s.all_dims]
        if len(set(dim_names)) != len(dim_names):
            rep.add(f"stage {s.name}: duplicate dim names")
        if any(e < 1 for _, e in s.all_dims):
            rep.add(f"stage {s.name}: extents must be >= 1")
        if s.inputs and s.flops_per_point < 1:
            rep.add(f"stage {s.name}: flops_per_point must be >= 1 with inputs")
        if s.flops_per_point < 0:
            rep.add(f"stage {s.name}: flops_per_point must be >= 0")
        for edge in s.inputs:
            if edge.producer not in stage_names | buffer_names:
                rep.add(f"stage {s.name}: unknown producer {edge.producer!r}")
                continue
            if edge.producer in stage_names and edge.producer not in declared_before:
                rep.add(
                    f"stage {s.name}: producer {edge.producer!r} "
                    "is not declared earlier"
                )
                continue
            pext = p.producer_extents(edge.producer)
            if len(edge.access) != len(pext):
                rep.add(
                    f"stage {s.name} <- {edge.producer}: {len(edge.access)} access "
                    f"maps for a {len(pext)}-dim producer"
                )
                continue
            ndims = len(s.all_dims)
            for k, am in enumerate(edge.access):
                if am.consumer_dim is None and am.stride != 0:
                    rep.add(
                        f"stage {s.name} <- {edge.producer} dim {k}: stride must "
                        "be 0 without a consumer dim"
                    )
                if am.consumer_dim is not None and not 0 <= am.consumer_dim < ndims:
                    rep.add(
                        f"stage {s.name} <- {edge.producer} dim {k}: consumer dim "
                        f"{am.consumer_dim} out of range"
                    )
                    continue
                if am.window < 1:
                    rep.add(
                        f"stage {s.name} <- {edge.producer} dim {k}: window must "
                        "be >= 1"
                    )
                    continue
                if am.consumer_dim is None:
                    max_idx = am.window - 1
                else:
                    c_ext = s.all_dims[am.consumer_dim][1]
                    max_idx = am.stride * (c_ext - 1) + am.window - 1
                if max_idx >= pext[k]:
                    rep.add(
                        f"stage {s.name} <- {edge.producer} dim {k}: out of bounds "
                        f"(max index {max_idx} >= extent {pext[k]})"
                    )
        declared_before.add(s.name)

    try:
        topological_order(p)
    except CycleError as e:
        rep.add(str(e))
    return rep


# --- text format -----------------------------------------------------------
#
# pipeline <name>
# buffer <name> dims <e1>x<e2>... elem <bytes>
# stage <name> dims <d>:<extent>,... [reduce <d>:<extent>,...] flops <k> [output]
#   in <producer> map (<dimref>|_)*<stride>+<window>, ...


def _parse_map_clause(text: str, dim_index: dict[str, int], lineno: int) -> AccessMap:
    text = text.strip()
    try:
        ref, rest = text.split("*", 1)
        stride_s, window_s = rest.split("+", 1)
        stride, window = int(stride_s), int(window_s)
    except ValueError:
        raise ParseError(f"bad map clause {text!r}", lineno) from None
    ref = ref.strip()
    if ref == "_":
        return AccessMap(None, stride, window)
    if ref not in dim_index:
        raise ParseError(f"unknown consumer dim {ref!r} in map clause", lineno)
    return AccessMap(dim_index[ref], stride, window)


def _parse_dim_list(text: str, lineno: int) -> tuple[tuple[str, int], ...]:
    out = []
    for part in text.split(","):
        try:
            name, ext = part.split(":")
            out.append((name.strip(), int(ext)))
        except ValueError:
            raise ParseError(f"bad dim spec {part!r}", lineno) from None
    return tuple(out)


def parse_pipeline(text: str) -> Pipeline:
    """Parse the line-oriented pipeline-spec format."""
    name = None
    buffers: list[ExternalBuffer] = []
    stages: list[Stage] = []
    cur: dict | None = None  # stage under construction

    def flush():
        nonlocal cur
        if cur is not None:
            stages.append(
                Stage(
                    cur["name"],
                    cur["dims"],
                    cur["reduce"],
                    cur["flops"],
                    tuple(cur["inputs"]),
                    cur["output"],
                )
            )
            cur = None

    known = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        kw = toks[0]
        if kw == "pipeline":
            if len(toks) != 2:
                raise ParseError("expected: pipeline <name>", lineno)
            name = toks[1]
        elif kw == "buffer":
            if len(toks) != 6 or toks[2] != "dims" or toks[4] != "elem":
                raise ParseError(
                    "expected: buffer <name> dims <e1>x... elem <bytes>", lineno
                )
            if toks[1] in known:
                raise ParseError(f"duplicate name {toks[1]!r}", lineno)
            try:
                dims = tuple(int(x) for x in toks[3].split("x"))
                elem = int(toks[5])
            except ValueError:
                raise ParseError("bad buffer dims/elem", lineno) from None
            buffers.append(ExternalBuffer(toks[1], dims, elem))
            known.add(toks[1])
        elif kw == "stage":
            flush()
            if len(toks) < 5 or toks[2] != "dims":
                raise ParseError(
                    "expected: stage <name> dims <d>:<e>,... [reduce ...] "
                    "flops <k> [output]",
                    lineno,
                )
            if toks[1] in known:
                raise ParseError(f"duplicate name {toks[1]!r}", lineno)
            rest = toks[4:]
            reduce_dims: tuple = ()
            if rest and rest[0] == "reduce":
                if len(rest) < 2:
                    raise ParseError("reduce needs a dim list", lineno)
                reduce_dims = _parse_dim_list(rest[1], lineno)
                rest = rest[2:]
            if len(rest) < 2 or rest[0] != "flops":
                raise ParseError("expected flops <k>", lineno)
            try:
                flops = int(rest[1])
            except ValueError:
                raise ParseError(f"bad flops count {rest[1]!r}", lineno) from None
            rest = rest[2:]
            output = False
            if rest == ["output"]:
                output = True
            elif rest:
                raise ParseError(f"unexpected tokens {rest}", lineno)
            cur = {
                "name": toks[1],
                "dims": _parse_dim_list(toks[3], lineno),
                "reduce": reduce_dims,
                "flops": flops,
                "inputs": [],
                "output": output,
            }
            known.add(toks[1])
        elif kw == "in":
            if cur is None:
                raise ParseError("'in' line outside a stage", lineno)
            if len(toks) < 4 or toks[2] != "map":
                raise ParseError("expected: in <producer> map <clauses>", lineno)
            producer = toks[1]
            if producer not in known:
                raise ParseError(f"unknown reference {producer!r}", lineno)
            dim_index = {d: i for i, (d, _) in enumerate(cur["dims"] + cur["reduce"])}
            clauses = " ".join(toks[3:]).split(",")
            access = tuple(_parse_map_clause(c, dim_index, lineno) for c in clauses)
            cur["inputs"].append(InputEdge(producer, access))
        else:
            raise ParseError(f"unknown directive {kw!r}", lineno)
    flush()
    if name is None:
        raise ParseError("missing 'pipeline <name>' line")
    return Pipeline(name, tuple(buffers), tuple(stages))


def serialize_pipeline(p: Pipeline) -> str:
    """Inverse of parse_pipeline over valid pipelines."""
    lines = [f"pipeline {p.name}"]
    for b in p.buffers:
        lines.append(
            f"buffer {b.name} dims {'x'.join(map(str, b.dims))} elem {b.element_size}"
        )
    for s in p.stages:
        dims = ",".join(f"{d}:{e}" for d, e in s.dims)
        parts = [f"stage {s.name} dims {dims}"]
        if s.reduction_dims:
            parts.append(
                "reduce " + ",".join(f"{d}:{e}" for d, e in s.reduction_dims)
            )
        parts.append(f"flops {s.flops_per_point}")
        if s.output:
            parts.append("output")
        lines.append(" ".join(parts))
        dim_names = [d for d, _ in s.all_dims]
        for edge in s.inputs:
            clauses = []
            for am in edge.access:
                ref = "_" if am.consumer_dim is None else dim_names[am.consumer_dim]
                clauses.append(f"{ref}*{am.stride}+{am.window}")
            lines.append(f"  in {edge.producer} map {', '.join(clauses)}")
    return "\n".join(lines) + "\n"

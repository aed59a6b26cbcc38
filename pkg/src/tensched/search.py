"""Decision procedures over the schedule space.

All procedures share one value-function protocol: a callable taking a list
of states and returning a list/array of floats (lower is better).  Greedy
scheduling evaluates every candidate of every layer once, beam search keeps
the best B partial states per layer, and the exhaustive search enumerates
the full tree against the cost oracle, yielding the exact optimum together
with the optimal-value table for every prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .cost_oracle import Cost, MachineModel, benchmark
from .pipeline_ir import Pipeline, PipelineError
from .schedule_space import (
    ScheduleState,
    apply,
    candidate_actions,
    canonical_key,
    initial_state,
)
from . import value_model

_MASK = (1 << 64) - 1


class SearchRng:
    """splitmix64: 64-bit state, identical stream on every platform.

    next_u64 is the reference splitmix64 step; uniform() uses the top 53
    bits; randrange() maps a 64-bit draw by multiply-shift.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self, lo: float, hi: float) -> float:
        u = (self.next_u64() >> 11) / float(1 << 53)
        return lo + u * (hi - lo)

    def randrange(self, n: int) -> int:
        return (self.next_u64() * n) >> 64

    def split(self, index: int) -> "SearchRng":
        """Derive an independent child stream (documented derivation)."""
        child = SearchRng(self.state ^ (0xA5A5A5A5A5A5A5A5 + index))
        child.next_u64()
        return child


@dataclass(frozen=True)
class NoiseConfig:
    """Multiplicative evaluation noise: v~ = v * (1 + eta), eta ~ U(-eps, eps)."""

    epsilon: float = 0.25

    def __post_init__(self):
        if not 0 <= self.epsilon < 1:
            raise PipelineError("epsilon must be in [0, 1)")


def model_value(params: value_model.ValueModelParams, jobs: int = 1):
    """Value-function adapter around a trained model."""

    def fn(states):
        return value_model.predict_states(params, states, jobs=jobs)

    return fn


def table_value(table: dict, default: float = math.inf):
    """Value-function adapter over a canonical-key -> value mapping."""

    def fn(states):
        return [table.get(canonical_key(s), default) for s in states]

    return fn


def greedy_schedule(
    p: Pipeline,
    V,
    noise: NoiseConfig | None = None,
    rng: SearchRng | None = None,
) -> tuple[ScheduleState, int]:
    """Layer-by-layer argmin under V; returns (state, visited candidate count)."""
    s = initial_state(p)
    visited = 0
    while not s.is_complete:
        cands = candidate_actions(s)
        visited += len(cands)
        children = [apply(s, a) for a in cands]
        vals = [float(v) for v in V(children)]
        if noise is not None and noise.epsilon > 0:
            if rng is None:
                raise PipelineError("noisy evaluation needs an rng")
            vals = [
                v * (1.0 + rng.uniform(-noise.epsilon, noise.epsilon)) for v in vals
            ]
        best = min(range(len(vals)), key=lambda i: (vals[i], i))
        s = children[best]
    return s, visited


def beam_search(prefix: ScheduleState, V, width: int = 8) -> ScheduleState:
    """Classic beam over completions of `prefix`, guided by V.

    Keeps the `width` lowest-value states per layer with stable tiebreaks;
    width 1 reduces exactly to noiseless greedy from the prefix.
    """
    if width < 1:
        raise PipelineError("beam width must be >= 1")
    frontier = [prefix]
    while not frontier[0].is_complete:
        children = []
        for s in frontier:
            children.extend(apply(s, a) for a in candidate_actions(s))
        vals = V(children)
        ranked = sorted(range(len(children)), key=lambda i: (float(vals[i]), i))
        frontier = [children[i] for i in ranked[:width]]
    vals = V(frontier)
    best = min(range(len(frontier)), key=lambda i: (float(vals[i]), i))
    return frontier[best]


def random_schedule(p: Pipeline, rng: SearchRng) -> ScheduleState:
    """Uniform choice among candidates at each layer; seeded, reproducible."""
    s = initial_state(p)
    while not s.is_complete:
        cands = candidate_actions(s)
        s = apply(s, cands[rng.randrange(len(cands))])
    return s


class SpaceTooLargeError(PipelineError):
    def __init__(self, count: int, limit: int, exact: bool):
        self.count = count
        self.limit = limit
        self.exact = exact
        qual = "" if exact else "more than "
        super().__init__(
            f"schedule space has {qual}{count} complete schedules "
            f"(limit {limit})"
        )


@dataclass
class ExhaustiveResult:
    optimal_state: ScheduleState
    optimal_cost: Cost
    states_visited: int
    vstar: dict  # canonical prefix key -> optimal completion cost (millis)


def _count_schedules(s: ScheduleState, cap: int) -> int:
    """Complete-schedule count, giving up once `cap` is exceeded."""
    if s.is_complete:
        return 1
    total = 0
    for a in candidate_actions(s):
        total += _count_schedules(apply(s, a), cap - total)
        if total > cap:
            return total
    return total


def exhaustive(p: Pipeline, m: MachineModel, limit: int = 10**6) -> ExhaustiveResult:
    """Enumerate and benchmark every complete schedule.

    Also fills the exact optimal-value table for every prefix state (min
    benchmarked cost over all completions through it).  Refuses when the
    space exceeds `limit` complete schedules.
    """
    root = initial_state(p)
    count = _count_schedules(root, limit)
    if count > limit:
        raise SpaceTooLargeError(count, limit, exact=False)

    vstar: dict[str, int] = {}
    best: list = [None, None]  # state, cost
    visited = 0

    def walk(s: ScheduleState) -> int:
        nonlocal visited
        key = canonical_key(s)
        if s.is_complete:
            visited += 1
            c = benchmark(s, m)
            millis = c.total_millis
            if best[1] is None or millis < best[1].total_millis:
                best[0], best[1] = s, c
            vstar[key] = millis
            return millis
        sub = min(walk(apply(s, a)) for a in candidate_actions(s))
        vstar[key] = sub
        return sub

    walk(root)
    return ExhaustiveResult(best[0], best[1], visited, vstar)


def space_size_estimate(p: Pipeline) -> int:
    """Product of per-layer candidate counts along the default path.

    The action space is dynamic, so this is the N*M-style estimate of the
    full space, not an exact count.
    """
    from .schedule_space import default_action

    s = initial_state(p)
    prod = 1
    while not s.is_complete:
        prod *= len(candidate_actions(s))
        s = apply(s, default_action(s))
    return prod

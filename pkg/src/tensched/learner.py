"""Value-iteration driver: bootstrap, rollout rounds, target refinement.

Targets live in a table keyed by the canonical rendering of a prefix
state; each entry holds the lowest benchmarked cost of any complete
schedule observed through that prefix, which is a sound upper bound on the
optimal value of the prefix.  Each round harvests prefixes from noisy
greedy rollouts, completes them with a noiseless beam search under the
previous model, benchmarks the stitched schedules, min-updates the table,
and retrains a fresh model on the refined targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .cost_oracle import MachineModel, benchmark, format_millis
from .pipeline_ir import Pipeline, PipelineError
from .schedule_space import ScheduleState, apply, canonical_key, initial_state
from .search import (
    NoiseConfig,
    SearchRng,
    SpaceTooLargeError,
    beam_search,
    exhaustive,
    greedy_schedule,
    model_value,
    random_schedule,
)
from .value_model import TrainConfig, ValueModelParams, init_params, train


@dataclass
class TargetEntry:
    millis: int  # best observed completion cost through this prefix
    count: int
    pipeline: str
    state: ScheduleState | None = None


@dataclass
class TargetTable:
    entries: dict = field(default_factory=dict)

    def update(self, key: str, millis: int, pipeline: str, state=None):
        e = self.entries.get(key)
        if e is None:
            self.entries[key] = TargetEntry(millis, 1, pipeline, state)
        else:
            if millis < e.millis:
                e.millis = millis
            e.count += 1
            if e.state is None:
                e.state = state

    def copy(self) -> "TargetTable":
        return TargetTable(
            {
                k: TargetEntry(e.millis, e.count, e.pipeline, e.state)
                for k, e in self.entries.items()
            }
        )

    def serialize(self) -> str:
        lines = [
            f"{k}\t{format_millis(e.millis)}\t{e.count}"
            for k in sorted(self.entries)
            for e in [self.entries[k]]
        ]
        return "\n".join(lines) + "\n"


def load_table(text: str, pipelines: list[Pipeline]) -> TargetTable:
    from .schedule_space import state_from_key

    by_name = {p.name: p for p in pipelines}
    table = TargetTable()
    for line in text.splitlines():
        if not line.strip():
            continue
        key, millis_s, count_s = line.split("\t")
        pname = key.split("/", 1)[0]
        if pname not in by_name:
            raise PipelineError(f"table references unknown pipeline {pname!r}")
        whole, frac = millis_s.split(".")
        millis = int(whole) * 1000 + int(frac)
        state = state_from_key(by_name[pname], key)
        table.entries[key] = TargetEntry(millis, int(count_s), pname, state)
    return table


def prefix_states(s: ScheduleState) -> list[ScheduleState]:
    """All prefixes of a complete (or partial) state, including s itself."""
    out = [initial_state(s.pipeline)]
    for d in s.decisions:
        out.append(apply(out[-1], d))
    return out


def bootstrap(
    pipelines: list[Pipeline],
    count_per_pipeline: int,
    m: MachineModel,
    seed: int,
) -> TargetTable:
    """Seed the table from purely random complete schedules."""
    if count_per_pipeline < 1:
        raise PipelineError("bootstrap count must be >= 1")
    table = TargetTable()
    base = SearchRng(seed)
    for pi, p in enumerate(pipelines):
        rng = base.split(pi)
        for _ in range(count_per_pipeline):
            sched = random_schedule(p, rng)
            millis = benchmark(sched, m).total_millis
            for prefix in prefix_states(sched):
                table.update(canonical_key(prefix), millis, p.name, prefix)
    return table


@dataclass(frozen=True)
class RoundConfig:
    schedules_per_pipeline: int = 100
    beam_width: int = 8
    noise: NoiseConfig = NoiseConfig()
    train: TrainConfig = TrainConfig()
    seed: int = 0
    hidden: int = 32
    jobs: int = 1
    machine: MachineModel = MachineModel()

    def __post_init__(self):
        if self.schedules_per_pipeline < 1:
            raise PipelineError("schedules_per_pipeline must be >= 1")


@dataclass
class RoundRow:
    pipeline: str
    greedy_millis: int
    beam_millis: int
    exhaustive_millis: int | None


@dataclass
class RoundReport:
    rows: list

    def mean_greedy(self) -> float:
        return sum(r.greedy_millis for r in self.rows) / len(self.rows) / 1000.0

    def mean_beam(self) -> float:
        return sum(r.beam_millis for r in self.rows) / len(self.rows) / 1000.0

    def mean_exhaustive_ratio(self) -> float | None:
        ratios = [
            r.greedy_millis / r.exhaustive_millis
            for r in self.rows
            if r.exhaustive_millis
        ]
        return sum(ratios) / len(ratios) if ratios else None

    def to_csv(self, round_index: int) -> str:
        lines = ["pipeline,greedy_cost,beam_cost,exhaustive_cost,round"]
        for r in self.rows:
            ex = format_millis(r.exhaustive_millis) if r.exhaustive_millis else ""
            lines.append(
                f"{r.pipeline},{format_millis(r.greedy_millis)},"
                f"{format_millis(r.beam_millis)},{ex},{round_index}"
            )
        return "\n".join(lines) + "\n"


def compute_exhaustive_costs(
    pipelines: list[Pipeline], m: MachineModel, limit: int = 10**6
) -> dict:
    """Optimal cost per pipeline where the space is enumerable, else None."""
    out = {}
    for p in pipelines:
        try:
            out[p.name] = exhaustive(p, m, limit).optimal_cost.total_millis
        except SpaceTooLargeError:
            out[p.name] = None
    return out


def evaluate_round(
    pipelines: list[Pipeline],
    params: ValueModelParams,
    m: MachineModel,
    beam_width: int = 8,
    exhaustive_costs: dict | None = None,
    jobs: int = 1,
) -> RoundReport:
    """Benchmark noiseless greedy and beam schedules under one model."""
    V = model_value(params, jobs=jobs)
    rows = []
    for p in pipelines:
        g, _ = greedy_schedule(p, V)
        b = beam_search(initial_state(p), V, beam_width)
        ex = (exhaustive_costs or {}).get(p.name)
        rows.append(
            RoundRow(
                p.name,
                benchmark(g, m).total_millis,
                benchmark(b, m).total_millis,
                ex,
            )
        )
    return RoundReport(rows)


def train_on_table(table: TargetTable, cfg: RoundConfig) -> tuple[ValueModelParams, dict]:
    """Fresh model fitted to the table's refined targets."""
    dataset = [
        (e.state, e.millis / 1000.0) for e in table.entries.values() if e.state
    ]
    params = init_params(cfg.train.seed, cfg.hidden)
    return train(params, dataset, cfg.train)


def value_iteration_round(
    pipelines: list[Pipeline],
    v_prev: ValueModelParams,
    table: TargetTable,
    cfg: RoundConfig,
):
    """One round of noisy rollouts, beam refinement and retraining.

    Returns (refined table, new model params, train metrics).
    """
    m = cfg.machine
    V = model_value(v_prev, jobs=cfg.jobs)
    new_table = table.copy()
    base = SearchRng(cfg.seed)
    bench_cache: dict[str, int] = {}
    for pi, p in enumerate(pipelines):
        rng = base.split(pi)
        for _ in range(cfg.schedules_per_pipeline):
            rollout, _ = greedy_schedule(p, V, cfg.noise, rng)
            for prefix in prefix_states(rollout):
                completed = beam_search(prefix, V, cfg.beam_width)
                ckey = canonical_key(completed)
                millis = bench_cache.get(ckey)
                if millis is None:
                    millis = benchmark(completed, m).total_millis
                    bench_cache[ckey] = millis
                new_table.update(canonical_key(prefix), millis, p.name, prefix)
    v_next, metrics = train_on_table(new_table, cfg)
    return new_table, v_next, metrics


def round_train_config(base: TrainConfig, round_index: int) -> TrainConfig:
    """Per-round training seed derived from the base seed."""
    return replace(base, seed=base.seed * 1000003 + round_index)

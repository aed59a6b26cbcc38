"""Command-line entry point.

Subcommands:
  validate  check a pipeline file, exit 0 iff well-formed
  bench     cost an explicit schedule with the analytical oracle
  train     bootstrap + value-iteration rounds, writing checkpoints/tables/CSVs
  schedule  pick a schedule for a pipeline with a trained model
  report    aggregate per-round CSVs into one summary CSV

Exit codes: 0 ok, 1 domain error, 2 usage or parse error.  All randomness
flows from --seed; identical flags and seed reproduce outputs byte for
byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .cost_oracle import (
    MachineModel,
    benchmark,
    format_millis,
    parse_machine_file,
)
from .learner import (
    RoundConfig,
    bootstrap,
    compute_exhaustive_costs,
    evaluate_round,
    round_train_config,
    train_on_table,
    value_iteration_round,
)
from .pipeline_ir import ParseError, PipelineError, parse_pipeline, validate
from .schedule_space import initial_state, read_schedule, write_schedule
from .search import NoiseConfig, beam_search, greedy_schedule, model_value
from .value_model import TrainConfig, load as load_model, predict, save as save_model


def _add_machine_flags(ap: argparse.ArgumentParser):
    ap.add_argument("--machine", type=Path, help="machine-spec file (key=value lines)")
    ap.add_argument("--cores", type=int)
    ap.add_argument("--cache-size", type=int)
    ap.add_argument("--flop-cost", type=int)
    ap.add_argument("--mem-byte-cost", type=int)
    ap.add_argument("--cache-byte-cost", type=int)
    ap.add_argument("--task-overhead", type=int)


def _machine_from_args(args) -> MachineModel:
    m = MachineModel()
    if args.machine:
        m = parse_machine_file(args.machine.read_text(), m)
    overrides = {
        "cores": args.cores,
        "cache_size": args.cache_size,
        "flop_cost": args.flop_cost,
        "mem_byte_cost": args.mem_byte_cost,
        "cache_byte_cost": args.cache_byte_cost,
        "task_overhead": args.task_overhead,
    }
    return replace(m, **{k: v for k, v in overrides.items() if v is not None})


def _load_pipeline(path: Path):
    return parse_pipeline(path.read_text())


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, args, machine: MachineModel, files):
    manifest = {
        "tool": "tensched",
        "version": __version__,
        "command": " ".join(sys.argv[1:]),
        "args": {
            k: (str(v) if isinstance(v, Path) else v)
            for k, v in sorted(vars(args).items())
            if k != "func"
        },
        "machine": {
            "flop_cost": machine.flop_cost,
            "mem_byte_cost": machine.mem_byte_cost,
            "cache_byte_cost": machine.cache_byte_cost,
            "cache_size": machine.cache_size,
            "cores": machine.cores,
            "task_overhead": machine.task_overhead,
        },
        "input_hashes": {str(f): _sha256(Path(f)) for f in files},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def cmd_validate(args) -> int:
    try:
        p = _load_pipeline(args.pipeline)
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return 2
    rep = validate(p)
    print(rep)
    return 0 if rep.ok else 1


def cmd_bench(args) -> int:
    p = _load_pipeline(args.pipeline)
    rep = validate(p)
    if not rep.ok:
        print(rep, file=sys.stderr)
        return 1
    m = _machine_from_args(args)
    state = read_schedule(p, args.schedule.read_text())
    if not state.is_complete:
        print(
            f"schedule covers {state.scheduled_count}/{len(p.stages)} stages",
            file=sys.stderr,
        )
        return 1
    cost = benchmark(state, m)
    rows = [("stage", "compute", "memory", "overhead", "total")]
    for name, sc in cost.per_stage.items():
        rows.append(
            (
                name,
                format_millis(sc.compute),
                format_millis(sc.memory),
                format_millis(sc.overhead),
                format_millis(sc.total),
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    for r in rows:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    print(f"total {cost}")
    if args.csv:
        lines = ["stage,compute,memory,overhead,total"]
        lines += [",".join(r) for r in rows[1:]]
        args.csv.write_text("\n".join(lines) + "\n")
    return 0


def cmd_train(args) -> int:
    files = sorted(args.pipelines.glob("*.pl"))
    if not files:
        print(f"no pipeline files (*.pl) in {args.pipelines}", file=sys.stderr)
        return 1
    pipelines = []
    for f in files:
        p = _load_pipeline(f)
        rep = validate(p)
        if not rep.ok:
            print(f"{f}: {rep}", file=sys.stderr)
            return 1
        pipelines.append(p)
    m = _machine_from_args(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    base_train = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        patience=args.patience,
    )
    cfg = RoundConfig(
        schedules_per_pipeline=args.k,
        beam_width=args.beam,
        noise=NoiseConfig(args.epsilon),
        train=round_train_config(base_train, 0),
        seed=args.seed,
        hidden=args.hidden,
        jobs=args.jobs,
        machine=m,
    )
    ex_costs = compute_exhaustive_costs(pipelines, m, args.exhaustive_limit)

    table = bootstrap(pipelines, args.bootstrap, m, args.seed)
    (out / "targets0.tsv").write_text(table.serialize())
    params, metrics = train_on_table(table, cfg)
    save_model(params, out / "v0.ckpt")
    report = evaluate_round(pipelines, params, m, args.beam, ex_costs, args.jobs)
    (out / "round0.csv").write_text(report.to_csv(0))
    print(f"bootstrap: {len(table.entries)} targets, holdout R2 {metrics['holdout_r2']:.3f}")

    for i in range(1, args.rounds + 1):
        cfg_i = replace(
            cfg,
            seed=args.seed * 7919 + i,
            train=round_train_config(base_train, i),
        )
        table, params, metrics = value_iteration_round(pipelines, params, table, cfg_i)
        (out / f"targets{i}.tsv").write_text(table.serialize())
        save_model(params, out / f"v{i}.ckpt")
        report = evaluate_round(pipelines, params, m, args.beam, ex_costs, args.jobs)
        (out / f"round{i}.csv").write_text(report.to_csv(i))
        print(
            f"round {i}: {len(table.entries)} targets, "
            f"holdout R2 {metrics['holdout_r2']:.3f}, "
            f"mean greedy {report.mean_greedy():.3f}"
        )
    _write_manifest(out, args, m, files)
    return 0


def cmd_schedule(args) -> int:
    p = _load_pipeline(args.pipeline)
    rep = validate(p)
    if not rep.ok:
        print(rep, file=sys.stderr)
        return 1
    m = _machine_from_args(args)
    params = load_model(args.model)
    V = model_value(params, jobs=args.jobs)
    t0 = time.perf_counter()
    if args.beam and args.beam > 1:
        state = beam_search(initial_state(p), V, args.beam)
        visited = None
    else:
        state, visited = greedy_schedule(p, V)
    elapsed = time.perf_counter() - t0
    args.out.write_text(write_schedule(state))
    cost = benchmark(state, m)
    print(f"predicted {predict(params, state):.3f}")
    print(f"benchmarked {cost}")
    if visited is not None:
        print(f"visited_candidates {visited}")
    print(f"wall_time_s {elapsed:.3f}")
    return 0


def cmd_report(args) -> int:
    rounds = sorted(
        args.dir.glob("round*.csv"), key=lambda f: int(f.stem[len("round"):])
    )
    if not rounds:
        print(f"no round CSVs in {args.dir}", file=sys.stderr)
        return 1
    lines = ["round,mean_greedy,mean_beam,mean_exhaustive_ratio"]
    for f in rounds:
        idx = int(f.stem[len("round"):])
        greedy, beam, ratios = [], [], []
        for row in f.read_text().splitlines()[1:]:
            _, g, b, ex, _ = row.split(",")
            greedy.append(float(g))
            beam.append(float(b))
            if ex:
                ratios.append(float(g) / float(ex))
        ratio = f"{sum(ratios) / len(ratios):.4f}" if ratios else ""
        lines.append(
            f"{idx},{sum(greedy) / len(greedy):.3f},{sum(beam) / len(beam):.3f},{ratio}"
        )
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    (args.dir / "report.csv").write_text(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tensched", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    v = sub.add_parser("validate", help="check a pipeline file")
    v.add_argument("pipeline", type=Path)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="cost an explicit schedule")
    b.add_argument("pipeline", type=Path)
    b.add_argument("schedule", type=Path)
    b.add_argument("--csv", type=Path, help="also write the breakdown as CSV")
    _add_machine_flags(b)
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train", help="bootstrap and run value-iteration rounds")
    t.add_argument("pipelines", type=Path, help="directory of *.pl files")
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--rounds", type=int, default=2)
    t.add_argument("--bootstrap", type=int, default=200)
    t.add_argument("--k", type=int, default=100, help="rollouts per pipeline per round")
    t.add_argument("--beam", type=int, default=8)
    t.add_argument("--epsilon", type=float, default=0.25)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--hidden", type=int, default=32)
    t.add_argument("--lr", type=float, default=5e-2)
    t.add_argument("--epochs", type=int, default=600)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--patience", type=int, default=60)
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--exhaustive-limit", type=int, default=200000)
    _add_machine_flags(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("schedule", help="schedule a pipeline with a trained model")
    s.add_argument("pipeline", type=Path)
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    group = s.add_mutually_exclusive_group()
    group.add_argument("--greedy", action="store_true")
    group.add_argument("--beam", type=int)
    s.add_argument("--jobs", type=int, default=1)
    _add_machine_flags(s)
    s.set_defaults(func=cmd_schedule)

    r = sub.add_parser("report", help="aggregate round CSVs")
    r.add_argument("dir", type=Path)
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return 2
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``lockmem <command> [options]``.

Commands:
  generate        write task files (a generated chain, the standard suite, fig1, computers)
  solve           run one episode on a task and print its trace
  train           run training episodes and write a memory store
  eval            evaluate a store on test tasks and write per-trial CSV
  experiment      run a full experiment from a spec file or a named preset
  inspect-memory  print bucket sizes or record dumps of a store

Exit codes: 0 on success, 2 for parse and protocol errors, 1 for anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import belief as bl
from . import harness as hs
from .errors import LockmemError, ProtocolError, TaskFormatError
from .memory import MemoryConfig, MemoryStore, build_prior, load_store, save_store, store_to_dict
from .policy import ControllerConfig, run_episode, run_random_episode
from .task import (
    GenerationSpec,
    dumps_instance,
    fig1_instance,
    generate_puzzle,
    load_instance,
    relabel,
    save_instance,
)


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("configuration")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--budget", type=int, default=None, help="action budget per episode")
    g.add_argument("--k", type=int, default=None, help="neighbours per memory query (default 3)")
    g.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="weight of the uniform mix in memory priors (default 0.2)")
    g.add_argument("--gamma", type=float, default=None, help="discount of the planner (default 0.95)")
    g.add_argument("--epsilon", type=float, default=None, help="observation noise (default 0.05)")


def _noise_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--noise", default=None, help="comma-separated noise modes: " + ", ".join(hs.NOISE_MODES))
    parser.add_argument("--sigma", type=float, default=None,
                        help="position noise std as a fraction of the workspace scale (default 0.1)")


def _controller(args, base: ControllerConfig | None = None) -> ControllerConfig:
    cfg = base or ControllerConfig()
    updates = {k: v for k, v in (("gamma", args.gamma), ("epsilon", args.epsilon)) if v is not None}
    if getattr(args, "budget", None) is not None:
        updates["action_budget"] = args.budget
    return replace(cfg, **updates)


def _memory(args, base: MemoryConfig | None = None) -> MemoryConfig:
    cfg = base or MemoryConfig()
    updates = {k: v for k, v in (("k", args.k), ("lam", args.lam)) if v is not None}
    return replace(cfg, **updates)


def _noise_list(text: str | None) -> list[str] | None:
    return None if text is None else [m.strip() for m in text.split(",") if m.strip()]


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# -- commands ---------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.suite:
        if not args.out:
            raise LockmemError("--suite needs --out DIRECTORY")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        train, test = hs.standard_suite(args.seed)
        for t in train + test:
            save_instance(t, out / f"{t.name}.json")
        print(f"wrote {len(train)} training and {len(test)} test tasks to {out}")
        return 0
    if args.preset == "fig1":
        task = fig1_instance()
    elif args.preset in ("computer_a", "computer_b"):
        task = load_instance(hs.data_path(f"{args.preset}.json"))
    else:
        classes = tuple(c.strip() for c in args.classes.split(","))
        task = generate_puzzle(args.seed, GenerationSpec(classes), name=args.name or "")
    _write(dumps_instance(task), args.out)
    return 0


def cmd_solve(args) -> int:
    task = load_instance(args.task)
    if args.relabel:
        rng = np.random.default_rng(args.seed)
        task = relabel(task, rng.permutation(task.n) + 1)
    spec = hs.ExperimentSpec(
        seed=args.seed,
        budget=30 if args.budget is None else args.budget,
        controller=_controller(args),
        memory=_memory(args),
    )
    store = load_store(args.memory) if args.memory else MemoryStore()
    agent = args.agent or ("memory" if args.memory else "uniform")
    noise = hs.NoiseSpec(args.noise or "none", 0.1 if args.sigma is None else args.sigma)
    seen = hs.corrupt(task, noise, hs.derive_seed(args.seed, 1))
    cfg = replace(spec.controller, action_budget=spec.budget, rng_seed=args.seed)
    if agent == "random":
        log = run_random_episode(task, cfg)
    else:
        prior = (
            build_prior(store, seen, spec.memory, cfg.epsilon) if agent == "memory"
            else bl.uniform_belief(task.n, cfg.epsilon)
        )
        weighting = {"explore": "explore", "exploit": "exploit"}.get(agent, "entropy")
        log = run_episode(task, prior, replace(cfg, weighting=weighting))
    _write(log.to_csv(), args.out)
    status = "solved" if log.solved else "not solved"
    print(f"{task.name or args.task}: {status} in {log.steps} actions (agent={agent})", file=sys.stderr)
    if args.belief_out:
        bl.save_belief(log.final_belief, args.belief_out)
    return 0


def cmd_train(args) -> int:
    tasks = [load_instance(p) for p in args.tasks]
    store = load_store(args.memory) if args.memory else MemoryStore()
    spec = hs.ExperimentSpec(
        seed=args.seed,
        train_budget=30 if args.budget is None else args.budget,
        controller=_controller(args),
        memory=_memory(args),
    )
    episodes = args.episodes if args.episodes is not None else len(tasks)
    store, logs = hs.train(store, tasks, episodes, spec)
    save_store(store, args.out)
    solved = sum(log.solved for log in logs)
    print(f"trained {len(logs)} episodes ({solved} solved, schedule {hs.SCHEDULE}); "
          f"store holds {len(store)} edge records -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    test = [load_instance(p) for p in args.tasks]
    train = [load_instance(p) for p in args.train or []]
    store = load_store(args.memory) if args.memory else MemoryStore()
    noises = _noise_list(args.noise) or ["none"]
    spec = hs.ExperimentSpec(
        mode="transfer_by_episodes",
        seed=args.seed,
        trials=args.trials,
        budget=15 if args.budget is None else args.budget,
        noise=noises,
        sigma=0.1 if args.sigma is None else args.sigma,
        agents=[args.agent],
        controller=_controller(args),
        memory=_memory(args),
        train=train,
        test=test,
    )
    report = hs.ExperimentReport(spec)
    for noise in noises:
        report.trials += hs.evaluate(store, spec, args.agent, noise, None, train, test)
    _write(hs.report_csv(report), args.out)
    for group in hs.report_summary(report)["groups"]:
        print(f"{group['instance']} [{group['noise']}]: success {group['success_rate']:.3f}, "
              f"median steps {group['median_steps']:g}", file=sys.stderr)
    return 0


def cmd_experiment(args) -> int:
    if args.spec:
        spec = hs.load_spec(args.spec)
    else:
        spec = hs.standard_spec(args.standard)
    updates: dict = {}
    if args.seed_given:
        updates["seed"] = args.seed
    if args.trials is not None:
        updates["trials"] = args.trials
    if args.budget is not None:
        updates["budget"] = args.budget
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.noise is not None:
        updates["noise"] = _noise_list(args.noise)
    if args.sigma is not None:
        updates["sigma"] = args.sigma
    spec = replace(spec, **updates)
    spec = replace(spec, controller=_controller_no_budget(args, spec.controller), memory=_memory(args, spec.memory))
    report = hs.run_experiment(spec)
    _write(hs.report_csv(report), args.out)
    summary = json.dumps(hs.report_summary(report), indent=2) + "\n"
    if args.summary:
        Path(args.summary).write_text(summary)
    else:
        sys.stderr.write(summary)
    return 0


def _controller_no_budget(args, base: ControllerConfig) -> ControllerConfig:
    updates = {k: v for k, v in (("gamma", args.gamma), ("epsilon", args.epsilon)) if v is not None}
    return replace(base, **updates)


def cmd_inspect(args) -> int:
    store = load_store(args.memory)
    if args.records:
        doc = store_to_dict(store)
        if args.bucket:
            blocker, _, target = args.bucket.partition(":")
            doc["buckets"] = [
                b for b in doc["buckets"] if b["blocker_class"] == blocker and b["target_class"] == target
            ]
        _write(json.dumps(doc, indent=1) + "\n", args.out)
        return 0
    lines = [f"episodes: {store.episodes}", f"edge records: {len(store)}", "buckets (blocker -> target):"]
    width = max((len(f"{a} -> {b}") for a, b in store.buckets), default=0)
    for (a, b), size in store.bucket_sizes().items():
        lines.append(f"  {f'{a} -> {b}':<{width}}  {size}")
    lines.append("independence (target class):")
    for cls, values in sorted(store.independence.items()):
        lines.append(f"  {cls}: {len(values)} records, mean {np.mean(values):.4f}")
    _write("\n".join(lines) + "\n", args.out)
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lockmem", description="Memory-guided exploration of locking tasks.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write task files")
    _common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--classes", default="door,slide,wheel,slide,door",
                     help="comma-separated chain classes for a generated puzzle")
    src.add_argument("--preset", choices=["fig1", "computer_a", "computer_b"], help="write a built-in task")
    src.add_argument("--suite", action="store_true", help="write the standard 9+3 suite into --out DIRECTORY")
    p.add_argument("--name", default=None, help="task name stored in the file")
    p.add_argument("--out", default=None, help="output file (stdout if omitted) or directory for --suite")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="run one episode and print its trace as CSV")
    _common(p)
    _noise_flags(p)
    p.add_argument("task", help="task file")
    p.add_argument("--memory", default=None, help="memory store to build the prior from")
    p.add_argument("--agent", choices=hs.AGENTS, default=None,
                   help="memory (default with --memory), uniform (default otherwise), explore, exploit, random")
    p.add_argument("--relabel", action="store_true", help="shuffle component ids with --seed first")
    p.add_argument("--belief-out", default=None, help="write the final belief here")
    p.add_argument("--out", default=None, help="trace CSV destination (stdout if omitted)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train a memory store on task files")
    _common(p)
    p.add_argument("tasks", nargs="+", help="training task files, visited round-robin")
    p.add_argument("--episodes", type=int, default=None, help="number of episodes (default: one per task)")
    p.add_argument("--memory", default=None, help="existing store to extend")
    p.add_argument("--out", required=True, help="where to write the store")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a store on test task files")
    _common(p)
    _noise_flags(p)
    p.add_argument("tasks", nargs="+", help="test task files")
    p.add_argument("--memory", default=None, help="memory store (empty store if omitted)")
    p.add_argument("--train", nargs="*", default=None, help="training task files, checked for overlap")
    p.add_argument("--agent", choices=hs.AGENTS, default="memory")
    p.add_argument("--trials", type=int, default=50, help="trials per test task (default 50)")
    p.add_argument("--out", default=None, help="CSV destination (stdout if omitted)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a full experiment")
    _common(p)
    _noise_flags(p)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("spec", nargs="?", help="experiment spec file (see docs/formats.md)")
    which.add_argument("--standard", choices=hs.MODES, help="run a built-in preset instead of a spec file")
    p.add_argument("--trials", type=int, default=None, help="override trials per test task")
    p.add_argument("--workers", type=int, default=None, help="worker processes (output is identical)")
    p.add_argument("--out", default=None, help="CSV destination (stdout if omitted)")
    p.add_argument("--summary", default=None, help="write the JSON summary here (stderr if omitted)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("inspect-memory", help="show what a memory store holds")
    p.add_argument("memory", help="memory store file")
    p.add_argument("--records", action="store_true", help="dump records as JSON instead of bucket sizes")
    p.add_argument("--bucket", default=None, help="restrict --records to BLOCKER:TARGET")
    p.add_argument("--out", default=None, help="destination (stdout if omitted)")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    try:
        return args.func(args)
    except (TaskFormatError, ProtocolError) as exc:
        print(f"lockmem: error: {exc}", file=sys.stderr)
        return 2
    except (LockmemError, ValueError, OSError) as exc:
        print(f"lockmem: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

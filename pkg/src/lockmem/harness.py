"""Experiment driver: train memory across task variants, evaluate on held-out ones.

Every random choice is derived from the experiment seed through
``numpy.random.SeedSequence`` keyed by what it is for (training episode
index, or test instance and trial index), so a report depends only on the
spec and runs in any order or in parallel produce the same bytes.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from . import belief as bl
from .errors import ProtocolError, TaskFormatError
from .memory import MemoryConfig, MemoryStore, build_prior, record_episode
from .policy import ControllerConfig, EpisodeLog, run_episode, run_random_episode
from .task import (
    NON_INTERACTING,
    PUZZLE_CLASSES,
    Component,
    GenerationSpec,
    Pose,
    TaskInstance,
    generate_puzzle,
    load_instance,
    relabel,
    replace_components,
)

MODES = ("transfer_by_variants", "transfer_by_episodes", "noise_robustness", "disassembly")
NOISE_MODES = ("none", "misclassify_one", "position_gaussian", "both")
AGENTS = ("memory", "uniform", "explore", "exploit", "random")
CSV_COLUMNS = (
    "experiment", "instance", "trial", "seed", "solved", "steps",
    "budget", "noise", "k", "lambda", "gamma", "epsilon",
)
SCHEDULE = "round-robin"

_TRAIN_KEY = 1
_TRIAL_KEY = 2


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


# -- task suites -----------------------------------------------------------


def legal_chains(n: int = 5) -> list[tuple[str, ...]]:
    """Class sequences with all three puzzle classes and no door-wheel contact."""
    return [
        c
        for c in itertools.product(PUZZLE_CLASSES, repeat=n)
        if len(set(c)) == len(PUZZLE_CLASSES)
        and all((c[k - 1], c[k]) not in NON_INTERACTING for k in range(1, n))
    ]


def standard_suite(
    seed: int = 0, n_train: int = 9, n_test: int = 3, n: int = 5
) -> tuple[list[TaskInstance], list[TaskInstance]]:
    """Training variants and unseen test variants with disjoint class permutations."""
    chains = legal_chains(n)
    if n_train + n_test > len(chains):
        raise ValueError(f"only {len(chains)} distinct permutations for N={n}")
    rng = np.random.default_rng(seed)
    picked = [chains[i] for i in rng.permutation(len(chains))[: n_train + n_test]]
    tasks = [
        generate_puzzle(derive_seed(seed, 3, k), GenerationSpec(classes), name=f"{'train' if k < n_train else 'test'}-{k}")
        for k, classes in enumerate(picked)
    ]
    return tasks[:n_train], tasks[n_train:]


def data_path(name: str) -> Path:
    return Path(str(resources.files("lockmem") / "data" / name))


def disassembly_tasks() -> tuple[TaskInstance, TaskInstance]:
    return load_instance(data_path("computer_a.json")), load_instance(data_path("computer_b.json"))


# -- symbolic noise --------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    mode: str = "none"
    sigma: float = 0.1  # fraction of workspace_scale

    def __post_init__(self) -> None:
        if self.mode not in NOISE_MODES:
            raise ValueError(f"noise must be one of {NOISE_MODES}, got {self.mode!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


def corrupt(instance: TaskInstance, noise: NoiseSpec, seed: int) -> TaskInstance:
    """Agent-facing copy of a task with symbolic errors in classes and/or poses.

    Blocking rules are untouched; the simulator keeps using the true task.
    """
    if noise.mode == "none":
        return instance
    rng = np.random.default_rng(seed)
    comps = list(instance.components)
    if noise.mode in ("misclassify_one", "both"):
        k = int(rng.integers(instance.n))
        choices = [c for c in instance.classes if c != comps[k].cls]
        if choices:
            comps[k] = replace(comps[k], cls=choices[int(rng.integers(len(choices)))])
    if noise.mode in ("position_gaussian", "both"):
        std = noise.sigma * instance.workspace_scale
        noisy = []
        for c in comps:
            if c.pose.planar:
                dx, dy = rng.normal(0.0, std, 2)
                pose = c.pose.translated(float(dx), float(dy))
            else:
                dx, dy, dz = rng.normal(0.0, std, 3)
                pose = c.pose.translated(float(dx), float(dy), float(dz))
            noisy.append(Component(c.id, c.cls, pose, c.reversible))
        comps = noisy
    return replace_components(instance, comps)


# -- experiment spec and report -------------------------------------------


@dataclass
class ExperimentSpec:
    mode: str = "transfer_by_episodes"
    seed: int = 0
    trials: int = 50
    budget: int = 15
    train_budget: int = 30
    train: list[TaskInstance] | None = None  # None: standard suite / computer A
    test: list[TaskInstance] | None = None
    episodes: list[int] = field(default_factory=lambda: [9])
    variants: list[int] = field(default_factory=lambda: list(range(1, 10)))
    episodes_per_variant: int = 3
    noise: list[str] = field(default_factory=lambda: ["none"])
    sigma: float = 0.1
    agents: list[str] = field(default_factory=lambda: ["memory"])
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.budget < 0 or self.train_budget < 0:
            raise ValueError("budgets must be >= 0")
        if any(e < 0 for e in self.episodes):
            raise ValueError("episode counts must be >= 0")
        for a in self.agents:
            if a not in AGENTS:
                raise ValueError(f"unknown agent {a!r}; choose from {AGENTS}")
        for m in self.noise:
            NoiseSpec(m, self.sigma)

    def resolve_tasks(self) -> tuple[list[TaskInstance], list[TaskInstance]]:
        if self.mode == "disassembly":
            a, b = disassembly_tasks()
            default_train, default_test = [a], [b]
        else:
            default_train, default_test = standard_suite(self.seed)
        return (
            list(self.train) if self.train is not None else default_train,
            list(self.test) if self.test is not None else default_test,
        )


@dataclass(frozen=True)
class TrialResult:
    experiment: str
    instance: str
    trial: int
    seed: int
    solved: bool
    steps: int
    budget: int
    noise: str


@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    trials: list[TrialResult] = field(default_factory=list)
    training_steps: list[int] = field(default_factory=list)
    training_solved: list[bool] = field(default_factory=list)

    def groups(self) -> dict[tuple[str, str, str], list[TrialResult]]:
        out: dict[tuple[str, str, str], list[TrialResult]] = {}
        for t in self.trials:
            out.setdefault((t.experiment, t.instance, t.noise), []).append(t)
        return out

    def select(self, agent: str | None = None, noise: str | None = None, point: int | None = None,
               instance: str | None = None) -> list[TrialResult]:
        rows = self.trials
        if agent is not None:
            rows = [t for t in rows if t.experiment.split(":")[1] == agent]
        if noise is not None:
            rows = [t for t in rows if t.noise == noise]
        if point is not None:
            rows = [t for t in rows if t.experiment.split("=")[-1] == str(point)]
        if instance is not None:
            rows = [t for t in rows if t.instance == instance]
        return rows

    def success_rate(self, **filters: Any) -> float:
        rows = self.select(**filters)
        if not rows:
            raise ValueError(f"no trials match {filters}")
        return sum(t.solved for t in rows) / len(rows)

    def median_steps(self, **filters: Any) -> float:
        return float(np.median([t.steps for t in self.select(**filters)]))

    def curve(self, agent: str = "memory", noise: str = "none") -> list[tuple[int, float]]:
        points = sorted({int(t.experiment.split("=")[-1]) for t in self.select(agent=agent, noise=noise)
                         if t.experiment.split("=")[-1].isdigit()})
        return [(p, self.success_rate(agent=agent, noise=noise, point=p)) for p in points]


# -- training and evaluation ----------------------------------------------


def _train_one(store: MemoryStore, instance: TaskInstance, episode: int, spec: ExperimentSpec) -> tuple[MemoryStore, EpisodeLog]:
    seed = derive_seed(spec.seed, _TRAIN_KEY, episode)
    rng = np.random.default_rng(seed)
    task = relabel(instance, rng.permutation(instance.n) + 1)
    cfg = replace(spec.controller, action_budget=spec.train_budget, rng_seed=seed)
    log = run_episode(task, build_prior(store, task, spec.memory, cfg.epsilon), cfg)
    return record_episode(store, task, log.final_belief, source=instance.name), log


def train_schedule(
    store: MemoryStore, instances: Sequence[TaskInstance], episodes: int, spec: ExperimentSpec
) -> Iterator[tuple[int, MemoryStore, EpisodeLog]]:
    """Yield (episodes done, store, log) after each round-robin training episode.

    The prior for each episode is built from everything recorded before it.
    """
    for e in range(episodes):
        store, log = _train_one(store, instances[e % len(instances)], e, spec)
        yield e + 1, store, log


def train(
    store: MemoryStore, instances: Sequence[TaskInstance], episodes: int, spec: ExperimentSpec
) -> tuple[MemoryStore, list[EpisodeLog]]:
    logs = []
    for _, store, log in train_schedule(store, instances, episodes, spec):
        logs.append(log)
    return store, logs


def run_trial(
    store: MemoryStore, instance: TaskInstance, agent: str, noise: NoiseSpec, seed: int,
    spec: ExperimentSpec,
) -> EpisodeLog:
    """One evaluation episode on a relabeled (and possibly mis-perceived) task."""
    rng = np.random.default_rng(seed)
    truth = relabel(instance, rng.permutation(instance.n) + 1)
    seen = corrupt(truth, noise, derive_seed(seed, 1))
    cfg = replace(spec.controller, action_budget=spec.budget, rng_seed=seed)
    if agent == "random":
        return run_random_episode(truth, cfg)
    if agent == "memory":
        prior = build_prior(store, seen, spec.memory, cfg.epsilon)
    else:
        prior = bl.uniform_belief(truth.n, cfg.epsilon)
    weighting = {"explore": "explore", "exploit": "exploit"}.get(agent, "entropy")
    return run_episode(truth, prior, replace(cfg, weighting=weighting))


def _trial_job(args: tuple) -> tuple[bool, int]:
    log = run_trial(*args)
    return log.solved, log.steps


def check_disjoint(train: Sequence[TaskInstance], test: Sequence[TaskInstance]) -> None:
    seen = {t.fingerprint(): t.name for t in train}
    for t in test:
        if t.fingerprint() in seen:
            raise ProtocolError(f"test task {t.name!r} also appears in training as {seen[t.fingerprint()]!r}")


def evaluate(
    store: MemoryStore, spec: ExperimentSpec, agent: str = "memory", noise: str = "none",
    label: str | None = None, train: Sequence[TaskInstance] | None = None,
    test: Sequence[TaskInstance] | None = None,
) -> list[TrialResult]:
    """Run ``spec.trials`` seeded episodes on every test task."""
    default_train, default_test = spec.resolve_tasks()
    train = default_train if train is None else train
    test = default_test if test is None else test
    check_disjoint(train, test)
    label = label or f"{spec.mode}:{agent}:episodes={store.episodes}"
    ns = NoiseSpec(noise, spec.sigma)
    jobs, meta = [], []
    for i, task in enumerate(test):
        for t in range(spec.trials):
            seed = derive_seed(spec.seed, _TRIAL_KEY, i, t)
            jobs.append((store, task, agent, ns, seed, spec))
            meta.append((task.name or f"test-{i}", t, seed))
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            outcomes = list(pool.map(_trial_job, jobs, chunksize=8))
    else:
        outcomes = [_trial_job(j) for j in jobs]
    return [
        TrialResult(label, name, t, seed, solved, steps, spec.budget, noise)
        for (name, t, seed), (solved, steps) in zip(meta, outcomes)
    ]


def _baselines(report: ExperimentReport, spec: ExperimentSpec, train, test, noise: str = "none") -> None:
    for agent in spec.agents:
        if agent != "memory":
            report.trials += evaluate(
                MemoryStore(), spec, agent, noise, f"{spec.mode}:{agent}:baseline", train, test
            )


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    train_tasks, test_tasks = spec.resolve_tasks()
    check_disjoint(train_tasks, test_tasks)
    report = ExperimentReport(spec)
    want_memory = "memory" in spec.agents

    if spec.mode in ("transfer_by_episodes", "disassembly"):
        checkpoints = sorted(set(spec.episodes))
        if want_memory:
            store = MemoryStore()
            if 0 in checkpoints:
                report.trials += evaluate(store, spec, "memory", "none", None, train_tasks, test_tasks)
            for done, store, log in train_schedule(store, train_tasks, max(checkpoints, default=0), spec):
                report.training_steps.append(log.steps)
                report.training_solved.append(log.solved)
                if done in checkpoints:
                    report.trials += evaluate(store, spec, "memory", "none", None, train_tasks, test_tasks)
        _baselines(report, spec, train_tasks, test_tasks)

    elif spec.mode == "transfer_by_variants":
        if want_memory:
            for v in sorted(set(spec.variants)):
                subset = train_tasks[:v]
                store, _ = train(MemoryStore(), subset, v * spec.episodes_per_variant, spec)
                report.trials += evaluate(
                    store, spec, "memory", "none", f"{spec.mode}:memory:variants={v}", train_tasks, test_tasks
                )
        _baselines(report, spec, train_tasks, test_tasks)

    elif spec.mode == "noise_robustness":
        episodes = max(spec.episodes, default=0)
        store, logs = train(MemoryStore(), train_tasks, episodes, spec)
        report.training_steps = [log.steps for log in logs]
        report.training_solved = [log.solved for log in logs]
        for noise in spec.noise:
            if want_memory:
                report.trials += evaluate(
                    store, spec, "memory", noise, f"{spec.mode}:memory:episodes={episodes}", train_tasks, test_tasks
                )
            _baselines(report, spec, train_tasks, test_tasks, noise)
    return report


# -- output ----------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def report_rows(report: ExperimentReport) -> list[dict[str, Any]]:
    spec = report.spec
    common = {
        "k": spec.memory.k,
        "lambda": repr(spec.memory.lam),
        "gamma": repr(spec.controller.gamma),
        "epsilon": repr(spec.controller.epsilon),
    }
    rows = [
        {
            "experiment": t.experiment, "instance": t.instance, "trial": t.trial, "seed": t.seed,
            "solved": int(t.solved), "steps": t.steps, "budget": t.budget, "noise": t.noise, **common,
        }
        for t in report.trials
    ]
    for (exp, inst, noise), group in report.groups().items():
        rows.append({
            "experiment": exp, "instance": inst, "trial": "aggregate", "seed": spec.seed,
            "solved": _fmt(sum(t.solved for t in group) / len(group)),
            "steps": _fmt(sum(t.steps for t in group) / len(group)),
            "budget": group[0].budget, "noise": noise, **common,
        })
    return rows


def report_csv(report: ExperimentReport, destination: str | Path | io.TextIOBase | None = None) -> str:
    """Render the report as CSV; also write it when a destination is given."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(report_rows(report))
    text = buf.getvalue()
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(text)
    elif destination is not None:
        destination.write(text)
    return text


def report_summary(report: ExperimentReport) -> dict[str, Any]:
    spec = report.spec
    summary: dict[str, Any] = {
        "mode": spec.mode,
        "seed": spec.seed,
        "schedule": SCHEDULE,
        "trials": spec.trials,
        "budget": spec.budget,
        "train_budget": spec.train_budget,
        "controller": asdict(spec.controller),
        "memory": asdict(spec.memory),
        "training_steps": report.training_steps,
        "groups": [],
    }
    for (exp, inst, noise), group in report.groups().items():
        summary["groups"].append({
            "experiment": exp, "instance": inst, "noise": noise,
            "success_rate": sum(t.solved for t in group) / len(group),
            "median_steps": float(np.median([t.steps for t in group])),
        })
    return summary


# -- experiment spec files -------------------------------------------------


def spec_from_dict(doc: Any, base_dir: Path | None = None) -> ExperimentSpec:
    """Build an experiment spec from a parsed spec document (see docs/formats.md)."""
    if not isinstance(doc, dict):
        raise TaskFormatError("experiment: expected an object")
    if doc.get("format", "lockmem-experiment") != "lockmem-experiment":
        raise TaskFormatError("experiment.format: expected 'lockmem-experiment'")
    if doc.get("version", 1) != 1:
        raise TaskFormatError(f"experiment.version: unsupported version {doc.get('version')!r}")
    known = {
        "format", "version", "mode", "seed", "trials", "budget", "train_budget", "train", "test",
        "episodes", "variants", "episodes_per_variant", "noise", "sigma", "agents", "controller",
        "memory", "workers",
    }
    unknown = set(doc) - known
    if unknown:
        raise TaskFormatError(f"experiment: unknown fields {sorted(unknown)}")
    base_dir = base_dir or Path.cwd()

    def tasks(key: str) -> list[TaskInstance] | None:
        paths = doc.get(key)
        if paths is None:
            return None
        if not isinstance(paths, list):
            raise TaskFormatError(f"experiment.{key}: expected a list of task file paths")
        return [load_instance(base_dir / p) for p in paths]

    try:
        ctrl = dict(doc.get("controller", {}))
        mem = dict(doc.get("memory", {}))
        if "lambda" in mem:
            mem["lam"] = mem.pop("lambda")
        kwargs = {k: doc[k] for k in ("mode", "seed", "trials", "budget", "train_budget", "episodes",
                                       "variants", "episodes_per_variant", "noise", "sigma", "agents",
                                       "workers") if k in doc}
        return ExperimentSpec(
            train=tasks("train"), test=tasks("test"),
            controller=ControllerConfig(**ctrl), memory=MemoryConfig(**mem), **kwargs,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, TaskFormatError):
            raise
        raise TaskFormatError(f"experiment: {exc}") from exc


def load_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TaskFormatError(f"cannot read experiment file {path}: {exc}") from exc
    return spec_from_dict(doc, path.parent)


def run_disassembly(spec: ExperimentSpec) -> ExperimentReport:
    if spec.mode != "disassembly":
        spec = replace(spec, mode="disassembly")
    return run_experiment(spec)


def standard_spec(mode: str, **overrides: Any) -> ExperimentSpec:
    """The experiment settings used by the acceptance suite for each mode."""
    presets: dict[str, dict[str, Any]] = {
        "transfer_by_episodes": dict(episodes=[0, 9, 18, 27], agents=["memory", "uniform", "random"]),
        "transfer_by_variants": dict(variants=list(range(1, 10)), episodes_per_variant=3, agents=["memory"]),
        "noise_robustness": dict(episodes=[27], noise=list(NOISE_MODES), agents=["memory", "random"]),
        "disassembly": dict(episodes=list(range(1, 21)), trials=20, budget=24, train_budget=60,
                            agents=["memory"]),
    }
    kwargs = {**presets[mode], **overrides}
    return ExperimentSpec(mode=mode, **kwargs)


def is_nonincreasing(values: Sequence[float]) -> bool:
    return all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def is_nondecreasing(values: Sequence[float]) -> bool:
    return all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

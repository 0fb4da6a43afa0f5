"""Symbolic constraint tasks: components, blocking rules and the toggle simulator.

A task has N components, each with a binary position. Acting on component n
attempts to toggle it; the toggle succeeds unless some blocking rule
``(i, p, n)`` has component i sitting at position p, or n is a one-way
component that has already been moved to 1.

Component ids are 1-based everywhere in the public API. States are plain
tuples of 0/1 ints with ``state[n - 1]`` holding component n.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import GenerationError, InvalidComponentError, TaskFormatError

PUZZLE_CLASSES = ("door", "slide", "wheel")
DISASSEMBLY_CLASSES = ("screw", "panel", "ram", "cpu", "cable", "gpu", "motherboard")

# Doors and wheels never lock each other directly.
NON_INTERACTING = frozenset({("door", "wheel"), ("wheel", "door")})

TASK_FORMAT = "lockmem-task"
TASK_FORMAT_VERSION = 1

State = tuple[int, ...]


def wrap_angle(theta: float) -> float:
    """Map an angle into [-pi, pi)."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    wrapped -= math.pi
    # fmod can land exactly on +pi after the shift for inputs just below -pi
    return -math.pi if wrapped >= math.pi else wrapped


@dataclass(frozen=True)
class Pose:
    """Planar pose (x, y, theta) or 3D pose (x, y, z, quaternion).

    The quaternion is stored as (w, x, y, z), normalized, with w >= 0.
    """

    x: float
    y: float
    z: float = 0.0
    theta: float | None = 0.0
    quat: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        for name in ("x", "y", "z"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"pose {name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.quat is None:
            if self.theta is None or not math.isfinite(self.theta):
                raise ValueError("planar pose needs a finite theta")
            if self.z != 0.0:
                raise ValueError("planar pose must have z = 0")
            object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
            return
        q = tuple(float(c) for c in self.quat)
        if len(q) != 4 or not all(math.isfinite(c) for c in q):
            raise ValueError("quaternion must be four finite numbers (w, x, y, z)")
        norm = math.sqrt(sum(c * c for c in q))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {norm!r} is not within 1e-9 of 1")
        if q[0] < 0.0:
            q = tuple(-c for c in q)
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "theta", None)

    @classmethod
    def from_quaternion(cls, x: float, y: float, z: float, quat: Sequence[float]) -> "Pose":
        """Build a 3D pose, normalizing an arbitrary non-zero quaternion."""
        q = np.asarray(quat, dtype=float)
        norm = float(np.linalg.norm(q))
        if norm == 0.0:
            raise ValueError("zero quaternion")
        return cls(x, y, z, theta=None, quat=tuple(float(c) for c in q / norm))

    @property
    def planar(self) -> bool:
        return self.quat is None

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Images of the body x and y axes in the world frame."""
        if self.quat is None:
            c, s = math.cos(self.theta), math.sin(self.theta)
            return np.array([c, s, 0.0]), np.array([-s, c, 0.0])
        w, x, y, z = self.quat
        ex = np.array([1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)])
        ey = np.array([2 * (x * y - w * z), 1 - 2 * (x * x + z * z), 2 * (y * z + w * x)])
        return ex, ey

    def translated(self, dx: float, dy: float, dz: float = 0.0) -> "Pose":
        if self.quat is None:
            return Pose(self.x + dx, self.y + dy, 0.0, self.theta)
        return Pose(self.x + dx, self.y + dy, self.z + dz, theta=None, quat=self.quat)


@dataclass(frozen=True)
class Component:
    id: int
    cls: str
    pose: Pose
    reversible: bool = True


@dataclass(frozen=True)
class BlockingRule:
    """Component ``blocker`` at ``position`` prevents ``target`` from moving."""

    blocker: int
    position: int
    target: int

    def __post_init__(self) -> None:
        if self.position not in (0, 1):
            raise ValueError(f"blocker position must be 0 or 1, got {self.position!r}")
        if self.blocker == self.target:
            raise ValueError(f"component {self.blocker} cannot block itself")


@dataclass(frozen=True)
class InstanceView:
    """What the planner is allowed to know about a task: no blocking rules."""

    n: int
    goal_component: int
    goal_position: int
    reversible: tuple[bool, ...]


@dataclass(frozen=True)
class Outcome:
    moved: bool
    next_state: State


@dataclass(frozen=True)
class TaskInstance:
    components: tuple[Component, ...]
    rules: tuple[BlockingRule, ...]
    goal_component: int
    workspace_scale: float
    initial_state: State | None = None
    goal_position: int = 1
    classes: tuple[str, ...] = PUZZLE_CLASSES
    name: str = ""
    _blockers: tuple[tuple[tuple[int, int], ...], ...] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        n = len(comps)
        if n < 1:
            raise ValueError("task needs at least one component")
        ids = [c.id for c in comps]
        if ids != list(range(1, n + 1)):
            raise ValueError(f"component ids must be 1..{n} in order, got {ids}")
        classes = tuple(self.classes)
        for c in comps:
            if c.cls not in classes:
                raise ValueError(f"component {c.id} has unregistered class {c.cls!r}")
        rules = tuple(self.rules)
        for r in rules:
            for cid in (r.blocker, r.target):
                if not 1 <= cid <= n:
                    raise InvalidComponentError(f"rule {r} references unknown component {cid}")
        if not 1 <= self.goal_component <= n:
            raise InvalidComponentError(f"goal component {self.goal_component} not in 1..{n}")
        if self.goal_position not in (0, 1):
            raise ValueError("goal position must be 0 or 1")
        if not (self.workspace_scale > 0 and math.isfinite(self.workspace_scale)):
            raise ValueError("workspace_scale must be a positive finite number")
        init = (0,) * n if self.initial_state is None else tuple(int(b) for b in self.initial_state)
        if len(init) != n or any(b not in (0, 1) for b in init):
            raise ValueError(f"initial_state must be {n} binary values")
        blockers: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for r in rules:
            blockers[r.target - 1].append((r.blocker - 1, r.position))
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "rules", rules)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "initial_state", init)
        object.__setattr__(self, "workspace_scale", float(self.workspace_scale))
        object.__setattr__(self, "_blockers", tuple(tuple(b) for b in blockers))

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def reversible(self) -> tuple[bool, ...]:
        return tuple(c.reversible for c in self.components)

    def component(self, cid: int) -> Component:
        _check_id(cid, self.n)
        return self.components[cid - 1]

    def view(self) -> InstanceView:
        return InstanceView(self.n, self.goal_component, self.goal_position, self.reversible)

    def locking_matrix(self) -> np.ndarray:
        """Boolean matrix with cell [i-1, j-1] set when component i locks j."""
        m = np.zeros((self.n, self.n), dtype=bool)
        for r in self.rules:
            m[r.blocker - 1, r.target - 1] = True
        return m

    def fingerprint(self) -> str:
        """Content hash of the task, ignoring its display name."""
        doc = instance_to_dict(self)
        doc.pop("name", None)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_id(cid: int, n: int) -> None:
    if isinstance(cid, bool) or not isinstance(cid, (int, np.integer)) or not 1 <= cid <= n:
        raise InvalidComponentError(f"component id {cid!r} not in 1..{n}")


def _check_state(state: Sequence[int], n: int) -> None:
    if len(state) != n:
        raise ValueError(f"state has length {len(state)}, task has {n} components")


def actuatable(instance: TaskInstance, state: Sequence[int], action: int) -> bool:
    """True iff toggling ``action`` in ``state`` would change the state."""
    _check_id(action, instance.n)
    _check_state(state, instance.n)
    if not instance.components[action - 1].reversible and state[action - 1] == 1:
        return False
    return all(state[i] != p for i, p in instance._blockers[action - 1])


def step(instance: TaskInstance, state: Sequence[int], action: int) -> Outcome:
    state = tuple(int(b) for b in state)
    if not actuatable(instance, state, action):
        return Outcome(False, state)
    nxt = list(state)
    nxt[action - 1] ^= 1
    return Outcome(True, tuple(nxt))


def is_solved(instance: TaskInstance, state: Sequence[int]) -> bool:
    _check_state(state, instance.n)
    return state[instance.goal_component - 1] == instance.goal_position


def relabel(instance: TaskInstance, order: Sequence[int]) -> TaskInstance:
    """Renumber components so that new id k is old component ``order[k-1]``.

    Used to present the same task under shuffled labels, as a robot would see
    a puzzle whose component ordering is unknown.
    """
    order = [int(o) for o in order]
    if sorted(order) != list(range(1, instance.n + 1)):
        raise ValueError("order must be a permutation of 1..N")
    new_id = {old: k + 1 for k, old in enumerate(order)}
    comps = tuple(
        Component(new_id[old], c.cls, c.pose, c.reversible)
        for old, c in ((o, instance.components[o - 1]) for o in order)
    )
    rules = tuple(
        sorted(
            (BlockingRule(new_id[r.blocker], r.position, new_id[r.target]) for r in instance.rules),
            key=lambda r: (r.target, r.blocker, r.position),
        )
    )
    init = tuple(instance.initial_state[o - 1] for o in order)
    return TaskInstance(
        comps, rules, new_id[instance.goal_component], instance.workspace_scale,
        init, instance.goal_position, instance.classes, instance.name,
    )


def replace_components(instance: TaskInstance, components: Iterable[Component]) -> TaskInstance:
    return TaskInstance(
        tuple(components), instance.rules, instance.goal_component, instance.workspace_scale,
        instance.initial_state, instance.goal_position, instance.classes, instance.name,
    )


# -- procedural generation -------------------------------------------------


@dataclass(frozen=True)
class GenerationSpec:
    """Parameters of the sequential locking-puzzle layout sampler.

    Components are laid out along a jittered path whose heading stays inside
    ``heading_range``, so a chain always runs roughly bottom-left to top-right.
    Every component's nearest neighbour is one of its chain neighbours.
    """

    classes: tuple[str, ...]
    spacing: float = 1.0
    jitter: float = 0.1
    theta_jitter: float = 0.15
    heading_range: tuple[float, float] = (math.pi / 8, 3 * math.pi / 8)
    max_turn: float = math.pi / 8
    max_attempts: int = 1000

    @property
    def n(self) -> int:
        return len(self.classes)


def check_chain_classes(classes: Sequence[str]) -> None:
    if len(classes) < 2:
        raise GenerationError("a sequential puzzle needs N >= 2 components")
    for c in classes:
        if c not in PUZZLE_CLASSES:
            raise GenerationError(f"class {c!r} is not a puzzle class {PUZZLE_CLASSES}")
    for k in range(1, len(classes)):
        if (classes[k - 1], classes[k]) in NON_INTERACTING:
            raise GenerationError(
                f"components {k} ({classes[k - 1]}) and {k + 1} ({classes[k]}) cannot lock "
                "each other: doors and wheels do not interact"
            )


def _nearest_are_adjacent(points: np.ndarray) -> bool:
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    nearest = d.argmin(axis=1)
    return bool(np.all(np.abs(nearest - np.arange(len(points))) == 1))


def generate_puzzle(seed: int, spec: GenerationSpec, name: str = "") -> TaskInstance:
    """Sample a sequential locking puzzle: component k is locked by k-1 at 0."""
    classes = tuple(spec.classes)
    check_chain_classes(classes)
    n = len(classes)
    rng = np.random.default_rng(seed)
    lo, hi = spec.heading_range
    for _ in range(spec.max_attempts):
        heading = rng.uniform(lo, hi)
        points = [rng.uniform(-1.0, 1.0, size=2) * spec.spacing]
        headings = []
        for _k in range(1, n):
            heading = float(np.clip(heading + rng.uniform(-spec.max_turn, spec.max_turn), lo, hi))
            headings.append(heading)
            offset = spec.spacing * np.array([math.cos(heading), math.sin(heading)])
            points.append(points[-1] + offset + rng.normal(0.0, spec.jitter * spec.spacing, 2))
        pts = np.array(points)
        if _nearest_are_adjacent(pts):
            break
    else:
        raise GenerationError(f"no valid layout found in {spec.max_attempts} attempts")
    headings.append(headings[-1])
    thetas = [h + rng.normal(0.0, spec.theta_jitter) for h in headings]
    comps = tuple(
        Component(k + 1, classes[k], Pose(float(pts[k, 0]), float(pts[k, 1]), 0.0, float(thetas[k])))
        for k in range(n)
    )
    rules = tuple(BlockingRule(k - 1, 0, k) for k in range(2, n + 1))
    return TaskInstance(
        comps, rules, goal_component=n, workspace_scale=spec.spacing * n,
        classes=PUZZLE_CLASSES, name=name or f"puzzle-{'-'.join(c[0] for c in classes)}-{seed}",
    )


def fig1_instance() -> TaskInstance:
    """The five-component chain D1, S1, W1, S2, D2, each locked by its predecessor.

    Interpretation: every lock is a position-0 lock (a component is
    released once its predecessor has been moved to 1).
    """
    classes = ("door", "slide", "wheel", "slide", "door")
    poses = [
        Pose(0.0, 0.0, 0.0, 0.0),
        Pose(1.0, 0.4, 0.0, 0.4),
        Pose(1.9, 1.0, 0.0, 0.6),
        Pose(2.7, 1.7, 0.0, 0.8),
        Pose(3.4, 2.5, 0.0, 0.8),
    ]
    comps = tuple(Component(k + 1, c, p) for k, (c, p) in enumerate(zip(classes, poses)))
    rules = tuple(BlockingRule(k - 1, 0, k) for k in range(2, 6))
    return TaskInstance(comps, rules, goal_component=5, workspace_scale=5.0, name="fig1")


# -- task files ------------------------------------------------------------


def _pose_to_dict(p: Pose) -> dict[str, float]:
    if p.planar:
        return {"x": p.x, "y": p.y, "theta": p.theta}
    qw, qx, qy, qz = p.quat
    return {"x": p.x, "y": p.y, "z": p.z, "qw": qw, "qx": qx, "qy": qy, "qz": qz}


def instance_to_dict(instance: TaskInstance) -> dict[str, Any]:
    return {
        "format": TASK_FORMAT,
        "version": TASK_FORMAT_VERSION,
        "name": instance.name,
        "classes": list(instance.classes),
        "workspace_scale": instance.workspace_scale,
        "components": [
            {"id": c.id, "class": c.cls, "reversible": c.reversible, "pose": _pose_to_dict(c.pose)}
            for c in instance.components
        ],
        "rules": [
            {"blocker": r.blocker, "blocker_position": r.position, "target": r.target}
            for r in instance.rules
        ],
        "goal": {"component": instance.goal_component, "position": instance.goal_position},
        "initial_state": list(instance.initial_state),
    }


def _require(doc: dict, key: str, where: str) -> Any:
    if not isinstance(doc, dict):
        raise TaskFormatError(f"{where}: expected an object")
    if key not in doc:
        raise TaskFormatError(f"{where}: missing field '{key}'")
    return doc[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise TaskFormatError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def _int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TaskFormatError(f"{where}: expected an integer, got {value!r}")
    return value


def _pose_from_dict(doc: Any, where: str) -> Pose:
    if not isinstance(doc, dict):
        raise TaskFormatError(f"{where}: expected an object")
    x = _number(_require(doc, "x", where), f"{where}.x")
    y = _number(_require(doc, "y", where), f"{where}.y")
    try:
        if "qw" in doc:
            z = _number(_require(doc, "z", where), f"{where}.z")
            q = tuple(_number(_require(doc, k, where), f"{where}.{k}") for k in ("qw", "qx", "qy", "qz"))
            return Pose(x, y, z, theta=None, quat=q)
        theta = _number(_require(doc, "theta", where), f"{where}.theta")
        if "z" in doc and _number(doc["z"], f"{where}.z") != 0.0:
            raise TaskFormatError(f"{where}.z: planar pose must have z = 0")
        return Pose(x, y, 0.0, theta)
    except ValueError as exc:
        if isinstance(exc, TaskFormatError):
            raise
        raise TaskFormatError(f"{where}: {exc}") from exc


def instance_from_dict(doc: Any) -> TaskInstance:
    """Validate a parsed task document and build the instance."""
    fmt = _require(doc, "format", "task")
    if fmt != TASK_FORMAT:
        raise TaskFormatError(f"task.format: expected {TASK_FORMAT!r}, got {fmt!r}")
    version = _require(doc, "version", "task")
    if version != TASK_FORMAT_VERSION:
        raise TaskFormatError(f"task.version: unsupported version {version!r}")
    classes = doc.get("classes", list(PUZZLE_CLASSES + DISASSEMBLY_CLASSES))
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise TaskFormatError("task.classes: expected a list of class labels")
    scale = _number(_require(doc, "workspace_scale", "task"), "task.workspace_scale")
    if scale <= 0:
        raise TaskFormatError("task.workspace_scale: must be > 0")

    raw_comps = _require(doc, "components", "task")
    if not isinstance(raw_comps, list) or not raw_comps:
        raise TaskFormatError("task.components: expected a non-empty list")
    comps = []
    for k, c in enumerate(raw_comps):
        where = f"components[{k}]"
        cid = _int(_require(c, "id", where), f"{where}.id")
        if cid != k + 1:
            raise TaskFormatError(f"{where}.id: expected {k + 1} (ids must be 1..N in order), got {cid}")
        cls = _require(c, "class", where)
        if cls not in classes:
            raise TaskFormatError(f"{where}.class: {cls!r} is not a registered class")
        reversible = c.get("reversible", True)
        if not isinstance(reversible, bool):
            raise TaskFormatError(f"{where}.reversible: expected true/false")
        comps.append(Component(cid, cls, _pose_from_dict(_require(c, "pose", where), f"{where}.pose"), reversible))
    n = len(comps)

    raw_rules = doc.get("rules", [])
    if not isinstance(raw_rules, list):
        raise TaskFormatError("task.rules: expected a list")
    rules = []
    for k, r in enumerate(raw_rules):
        where = f"rules[{k}]"
        blocker = _int(_require(r, "blocker", where), f"{where}.blocker")
        target = _int(_require(r, "target", where), f"{where}.target")
        pos = _int(_require(r, "blocker_position", where), f"{where}.blocker_position")
        for key, cid in (("blocker", blocker), ("target", target)):
            if not 1 <= cid <= n:
                raise TaskFormatError(f"{where}.{key}: component {cid} does not exist (N={n})")
        if pos not in (0, 1):
            raise TaskFormatError(f"{where}.blocker_position: must be 0 or 1")
        if blocker == target:
            raise TaskFormatError(f"{where}: component {blocker} cannot block itself")
        rules.append(BlockingRule(blocker, pos, target))

    goal = _require(doc, "goal", "task")
    goal_c = _int(_require(goal, "component", "goal"), "goal.component")
    if not 1 <= goal_c <= n:
        raise TaskFormatError(f"goal.component: component {goal_c} does not exist (N={n})")
    goal_p = _int(goal.get("position", 1), "goal.position")
    if goal_p not in (0, 1):
        raise TaskFormatError("goal.position: must be 0 or 1")

    init = doc.get("initial_state")
    if init is not None:
        if not isinstance(init, list) or len(init) != n or any(b not in (0, 1) or isinstance(b, bool) for b in init):
            raise TaskFormatError(f"task.initial_state: expected {n} values in {{0, 1}}")
        init = tuple(init)
    name = doc.get("name", "")
    if not isinstance(name, str):
        raise TaskFormatError("task.name: expected a string")
    return TaskInstance(tuple(comps), tuple(rules), goal_c, scale, init, goal_p, tuple(classes), name)


def load_instance(source: str | Path | dict) -> TaskInstance:
    """Load a task from a path, a JSON string, or an already-parsed document."""
    if isinstance(source, dict):
        return instance_from_dict(source)
    text = str(source)
    if isinstance(source, Path) or not text.lstrip().startswith("{"):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise TaskFormatError(f"cannot read task file {source}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TaskFormatError(f"task file is not valid JSON: {exc}") from exc
    return instance_from_dict(doc)


def dumps_instance(instance: TaskInstance) -> str:
    return json.dumps(instance_to_dict(instance), indent=2) + "\n"


def save_instance(instance: TaskInstance, path: str | Path) -> None:
    Path(path).write_text(dumps_instance(instance))

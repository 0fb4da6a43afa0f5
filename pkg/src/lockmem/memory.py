"""Instance-based memory of dependency-graph edges.

Edges learned in past episodes are filed in one bucket per ordered
(blocker class, target class) pair and indexed by the pose of the target
relative to the blocker. A new task's prior is assembled edge by edge from
the K nearest stored edges of the matching bucket, then flattened toward
uniform so the controller can still recover from a misleading prior.

Pose-difference vectors:

* planar: ``(dx, dy, dsin, dcos)`` with translations divided by the
  workspace scale;
* 3D: ``(dx, dy, dz, d(R ex), d(R ey))``, i.e. the change in the world-frame
  images of the body x and y axes. For yaw-only rotations
  ``R ex = (cos, sin, 0)``, so the planar trig terms appear verbatim.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import belief as bl
from .belief import BeliefState, ComponentBelief
from .errors import TaskFormatError
from .task import Component, TaskInstance

MEMORY_FORMAT = "lockmem-memory"
MEMORY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PoseDelta:
    """Target pose minus blocker pose, as a flat feature vector."""

    vector: tuple[float, ...]

    @property
    def planar(self) -> bool:
        return len(self.vector) == 4

    @property
    def dx(self) -> float:
        return self.vector[0]

    @property
    def dy(self) -> float:
        return self.vector[1]

    @property
    def dz(self) -> float:
        return 0.0 if self.planar else self.vector[2]

    @property
    def dsin(self) -> float:
        return self.vector[2] if self.planar else self.vector[4]

    @property
    def dcos(self) -> float:
        return self.vector[3]


def posedelta(blocker: Component, target: Component, workspace_scale: float) -> PoseDelta:
    a, b = blocker.pose, target.pose
    if a.planar and b.planar:
        return PoseDelta((
            (b.x - a.x) / workspace_scale,
            (b.y - a.y) / workspace_scale,
            math.sin(b.theta) - math.sin(a.theta),
            math.cos(b.theta) - math.cos(a.theta),
        ))
    trans = (b.position - a.position) / workspace_scale
    ax, ay = a.axes()
    bx, by = b.axes()
    return PoseDelta(tuple(float(v) for v in np.concatenate([trans, bx - ax, by - ay])))


@dataclass(frozen=True)
class EdgeRecord:
    delta: PoseDelta
    prob_block_at_0: float
    prob_block_at_1: float
    source: tuple[str, int] = ("", 0)


@dataclass(frozen=True)
class MemoryConfig:
    k: int = 3
    lam: float = 0.2
    radius: float | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.radius is not None and self.radius < 0:
            raise ValueError("radius must be non-negative")


@dataclass
class MemoryStore:
    """Append-only edge memory. ``record_episode`` returns a new store."""

    buckets: dict[tuple[str, str], list[EdgeRecord]] = field(default_factory=dict)
    independence: dict[str, list[float]] = field(default_factory=dict)
    episodes: int = 0

    def copy(self) -> "MemoryStore":
        return MemoryStore(
            {k: list(v) for k, v in self.buckets.items()},
            {k: list(v) for k, v in self.independence.items()},
            self.episodes,
        )

    def bucket_sizes(self) -> dict[tuple[str, str], int]:
        return {k: len(v) for k, v in sorted(self.buckets.items())}

    def __len__(self) -> int:
        return sum(len(v) for v in self.buckets.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemoryStore):
            return NotImplemented
        return store_to_dict(self) == store_to_dict(other)


def record_episode(
    store: MemoryStore, instance: TaskInstance, final_belief: BeliefState, source: str | None = None
) -> MemoryStore:
    """File every ordered component pair of a finished episode into memory."""
    if final_belief.n != instance.n:
        raise ValueError(f"belief has {final_belief.n} components, task has {instance.n}")
    out = store.copy()
    tag = (source if source is not None else instance.name, store.episodes)
    n = instance.n
    for target in instance.components:
        probs = final_belief[target.id].probs
        for blocker in instance.components:
            if blocker.id == target.id:
                continue
            i = bl.hypothesis_index(target.id, bl.Hypothesis(blocker.id, 0), n)
            rec = EdgeRecord(
                posedelta(blocker, target, instance.workspace_scale),
                float(probs[i]),
                float(probs[i + 1]),
                tag,
            )
            out.buckets.setdefault((blocker.cls, target.cls), []).append(rec)
        out.independence.setdefault(target.cls, []).append(float(probs[-1]))
    out.episodes += 1
    return out


class _BucketIndex:
    """Stacked feature vectors of one bucket for vectorized KNN."""

    def __init__(self, records: list[EdgeRecord]) -> None:
        self.dims = np.array([len(r.delta.vector) for r in records])
        width = int(self.dims.max())
        self.points = np.full((len(records), width), np.nan)
        for row, r in enumerate(records):
            self.points[row, : len(r.delta.vector)] = r.delta.vector
        self.probs = np.array([[r.prob_block_at_0, r.prob_block_at_1] for r in records])

    def query(self, delta: PoseDelta, config: MemoryConfig) -> np.ndarray | None:
        """Mean (block-at-0, block-at-1) masses of the nearest records.

        Records tied with the k-th nearest distance are all included, so
        repeated identical layouts are averaged rather than truncated by
        insertion order.
        """
        q = np.asarray(delta.vector)
        same = self.dims == q.size
        if not same.any():
            return None
        rows = np.flatnonzero(same)
        d = np.linalg.norm(self.points[rows, : q.size] - q, axis=1)
        if config.radius is not None:
            keep = d <= config.radius
            rows, d = rows[keep], d[keep]
            if rows.size == 0:
                return None
        order = np.argsort(d, kind="stable")
        kth = d[order[min(config.k, d.size) - 1]]
        chosen = rows[d <= kth + 1e-12]
        return self.probs[chosen].mean(axis=0)


def build_prior(
    store: MemoryStore, instance: TaskInstance, config: MemoryConfig = MemoryConfig(),
    epsilon: float = bl.DEFAULT_EPSILON,
) -> BeliefState:
    """Initial belief for ``instance`` assembled from remembered edges."""
    n = instance.n
    m = bl.hypothesis_count(n)
    fallback = 1.0 / m
    indexes = {key: _BucketIndex(recs) for key, recs in store.buckets.items() if recs}
    comps = []
    for target in instance.components:
        weights = np.full(m, fallback)
        informed = False
        for blocker in instance.components:
            if blocker.id == target.id:
                continue
            index = indexes.get((blocker.cls, target.cls))
            if index is None:
                continue
            found = index.query(posedelta(blocker, target, instance.workspace_scale), config)
            if found is not None:
                i = bl.hypothesis_index(target.id, bl.Hypothesis(blocker.id, 0), n)
                weights[i : i + 2] = found
                informed = True
        indep = store.independence.get(target.cls)
        if indep:
            weights[-1] = float(np.mean(indep))
            informed = True
        if not informed:
            comps.append(ComponentBelief(target.id, np.full(m, fallback)))
            continue
        if epsilon > 0:
            # keep full support so the controller can revise any edge
            weights = np.maximum(weights, 1e-12)
        total = weights.sum()
        z = weights / total if total > 0 else np.full(m, fallback)
        z = (1.0 - config.lam) * z + config.lam * fallback
        comps.append(ComponentBelief(target.id, z / z.sum()))
    return BeliefState(tuple(comps), epsilon)


# -- persistence -----------------------------------------------------------


def store_to_dict(store: MemoryStore) -> dict[str, Any]:
    return {
        "format": MEMORY_FORMAT,
        "version": MEMORY_FORMAT_VERSION,
        "episodes": store.episodes,
        "buckets": [
            {
                "blocker_class": key[0],
                "target_class": key[1],
                "records": [
                    {
                        "delta": list(r.delta.vector),
                        "p0": r.prob_block_at_0,
                        "p1": r.prob_block_at_1,
                        "source": [r.source[0], r.source[1]],
                    }
                    for r in recs
                ],
            }
            for key, recs in sorted(store.buckets.items())
        ],
        "independence": {cls: list(v) for cls, v in sorted(store.independence.items())},
    }


def _prob(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
        raise TaskFormatError(f"{where}: expected a probability in [0, 1], got {value!r}")
    return float(value)


def store_from_dict(doc: Any) -> MemoryStore:
    if not isinstance(doc, dict) or doc.get("format") != MEMORY_FORMAT:
        raise TaskFormatError(f"memory.format: expected {MEMORY_FORMAT!r}")
    if doc.get("version") != MEMORY_FORMAT_VERSION:
        raise TaskFormatError(f"memory.version: unsupported version {doc.get('version')!r}")
    episodes = doc.get("episodes", 0)
    if isinstance(episodes, bool) or not isinstance(episodes, int) or episodes < 0:
        raise TaskFormatError("memory.episodes: expected a non-negative integer")
    buckets: dict[tuple[str, str], list[EdgeRecord]] = {}
    raw = doc.get("buckets", [])
    if not isinstance(raw, list):
        raise TaskFormatError("memory.buckets: expected a list")
    for b, bucket in enumerate(raw):
        where = f"buckets[{b}]"
        try:
            key = (str(bucket["blocker_class"]), str(bucket["target_class"]))
            records = bucket["records"]
        except (KeyError, TypeError) as exc:
            raise TaskFormatError(f"{where}: missing field {exc}") from exc
        if key in buckets:
            raise TaskFormatError(f"{where}: duplicate bucket {key}")
        recs = []
        for r, rec in enumerate(records):
            rw = f"{where}.records[{r}]"
            if not isinstance(rec, dict):
                raise TaskFormatError(f"{rw}: expected an object")
            delta = rec.get("delta")
            if (
                not isinstance(delta, list)
                or len(delta) not in (4, 9)
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in delta)
            ):
                raise TaskFormatError(f"{rw}.delta: expected 4 or 9 finite numbers")
            source = rec.get("source", ["", 0])
            if not (isinstance(source, list) and len(source) == 2 and isinstance(source[1], int)):
                raise TaskFormatError(f"{rw}.source: expected [task, episode]")
            recs.append(EdgeRecord(
                PoseDelta(tuple(float(v) for v in delta)),
                _prob(rec.get("p0"), f"{rw}.p0"),
                _prob(rec.get("p1"), f"{rw}.p1"),
                (str(source[0]), source[1]),
            ))
        buckets[key] = recs
    indep_raw = doc.get("independence", {})
    if not isinstance(indep_raw, dict):
        raise TaskFormatError("memory.independence: expected an object")
    independence = defaultdict(list)
    for cls, values in indep_raw.items():
        if not isinstance(values, list):
            raise TaskFormatError(f"independence.{cls}: expected a list")
        independence[cls] = [_prob(v, f"independence.{cls}[{k}]") for k, v in enumerate(values)]
    return MemoryStore(buckets, dict(independence), episodes)


def dumps_store(store: MemoryStore) -> str:
    return json.dumps(store_to_dict(store), separators=(",", ":")) + "\n"


def save_store(store: MemoryStore, path: str | Path) -> None:
    Path(path).write_text(dumps_store(store))


def load_store(source: str | Path) -> MemoryStore:
    """Load a store from a file path or a JSON string."""
    text = str(source)
    if isinstance(source, Path) or not text.lstrip().startswith("{"):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise TaskFormatError(f"cannot read memory file {source}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TaskFormatError(f"memory file is not valid JSON: {exc}") from exc
    return store_from_dict(doc)

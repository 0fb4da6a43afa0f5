"""Dual controller: information-gain exploration blended with goal-seeking search.

The exploitation side treats the symbolic state space {0,1}^N as a graph
whose edge x -> x^n carries the noise-free probability q(x, n) that toggling
n succeeds under the current belief. The best discounted success product to
any goal state, prod(gamma * q), is found with Dijkstra on weights
-log(gamma * q). Edges with q = 0 are left out.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import belief as bl
from .belief import BeliefState
from .errors import CapacityError, ConfigurationError
from .task import InstanceView, TaskInstance, is_solved, step

WEIGHTINGS = ("entropy", "explore", "exploit")


@dataclass(frozen=True)
class ControllerConfig:
    gamma: float = 0.95
    h_max: float | None = None  # None: entropy of the uniform prior
    epsilon: float = bl.DEFAULT_EPSILON
    action_budget: int = 30
    rng_seed: int = 0
    max_components: int = 20
    weighting: str = "entropy"

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        if self.h_max is not None and not self.h_max > 0:
            raise ConfigurationError(f"h_max must be > 0, got {self.h_max!r}")
        if not 0.0 <= self.epsilon < 0.5:
            raise ConfigurationError(f"epsilon must lie in [0, 0.5), got {self.epsilon!r}")
        if self.action_budget < 0:
            raise ConfigurationError("action_budget must be >= 0")
        if self.weighting not in WEIGHTINGS:
            raise ConfigurationError(f"weighting must be one of {WEIGHTINGS}")

    def entropy_cap(self, n: int) -> float:
        return bl.max_entropy(n) if self.h_max is None else self.h_max


@dataclass
class PlanResult:
    action_values: np.ndarray
    best_path: list[tuple[tuple[int, ...], int]]
    path_value: float


def state_index(state: Sequence[int]) -> int:
    return sum(int(b) << k for k, b in enumerate(state))


def index_state(index: int, n: int) -> tuple[int, ...]:
    return tuple((index >> k) & 1 for k in range(n))


def transition_table(belief: BeliefState, view: InstanceView) -> np.ndarray:
    """Noise-free success probability q[x, n-1] for every state index x."""
    n = belief.n
    bits = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
    q = np.empty(bits.shape)
    for k, comp in enumerate(belief.components):
        z = comp.probs
        others = np.delete(bits, k, axis=1)
        # (i, 0) permits motion when x_i = 1, (i, 1) when x_i = 0
        q[:, k] = z[-1] + others @ z[0:-1:2] + (1 - others) @ z[1:-1:2]
        if not view.reversible[k]:
            q[bits[:, k] == 1, k] = 0.0
    return np.clip(q, 0.0, 1.0)


def _goal_mask(view: InstanceView) -> np.ndarray:
    idx = np.arange(1 << view.n)
    return ((idx >> (view.goal_component - 1)) & 1) == view.goal_position


def _search_to_goal(q: np.ndarray, goal: np.ndarray, gamma: float) -> tuple[list[float], list[int]]:
    """Backward multi-source Dijkstra from the goal set.

    Returns the cost -log V(x) of the best path from every state and the
    first action (0-based) of that path. Equal-cost paths resolve to the
    lexicographically smallest action sequence.
    """
    size, n = q.shape
    with np.errstate(divide="ignore"):
        weights = (-np.log(gamma * q)).tolist()
    is_goal = goal.tolist()
    dist = [0.0 if g else math.inf for g in is_goal]
    first = [-1] * size
    done = [False] * size
    heap = [(0.0, s) for s in range(size) if is_goal[s]]
    while heap:
        d, y = heapq.heappop(heap)
        if done[y]:
            continue
        done[y] = True
        for k in range(n):
            x = y ^ (1 << k)
            if is_goal[x] or done[x]:
                continue
            w = weights[x][k]
            if w == math.inf:
                continue
            nd = d + w
            tol = 1e-12 * max(1.0, nd)
            if nd < dist[x] - tol:
                dist[x], first[x] = nd, k
                heapq.heappush(heap, (nd, x))
            elif abs(nd - dist[x]) <= tol and k < first[x]:
                first[x] = k
    return dist, first


def exploit_values(
    belief: BeliefState,
    view: InstanceView | TaskInstance,
    state: Sequence[int],
    gamma: float = 0.95,
    max_components: int = 20,
) -> PlanResult:
    """Value gamma * q * V(successor) of every action, plus the best path."""
    if isinstance(view, TaskInstance):
        view = view.view()
    n = belief.n
    if n > max_components:
        raise CapacityError(f"exact search over 2^{n} states exceeds the cap of N={max_components}")
    if view.n != n:
        raise ValueError(f"belief has {n} components, task has {view.n}")
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError("gamma must lie in (0, 1)")
    q = transition_table(belief, view)
    goal = _goal_mask(view)
    dist, first = _search_to_goal(q, goal, gamma)

    x0 = state_index(state)
    values = np.zeros(n)
    for k in range(n):
        succ = x0 ^ (1 << k)
        if q[x0, k] > 0.0 and dist[succ] < math.inf:
            values[k] = gamma * q[x0, k] * math.exp(-dist[succ])

    path: list[tuple[tuple[int, ...], int]] = []
    if goal[x0]:
        return PlanResult(values, path, 1.0)
    best = int(np.argmax(values))
    if values[best] <= 0.0:
        return PlanResult(values, path, 0.0)
    value = 1.0
    x, k = x0, best
    while True:
        path.append((index_state(x, n), k + 1))
        value *= gamma * q[x, k]
        x ^= 1 << k
        if goal[x]:
            break
        k = first[x]
    return PlanResult(values, path, value)


def explore_values(
    belief: BeliefState, state: Sequence[int], view: InstanceView | None = None
) -> np.ndarray:
    """Expected information gain of every action.

    With a ``view``, one-way components already at 1 get zero: their outcome
    is known in advance.
    """
    values = np.array([bl.expected_info_gain(belief, state, a) for a in range(1, belief.n + 1)])
    if view is not None:
        values[_spent_mask(view, state)] = 0.0
    return values


def _spent_mask(view: InstanceView, state: Sequence[int]) -> np.ndarray:
    return np.array([not r and s == 1 for r, s in zip(view.reversible, state)])


def _normalized(values: np.ndarray) -> np.ndarray:
    top = values.max()
    return values / top if top > 0 else values.copy()


@dataclass(frozen=True)
class Decision:
    action: int
    weight: float
    values: np.ndarray
    info: np.ndarray
    exploit: np.ndarray


def decide(
    belief: BeliefState,
    state: Sequence[int],
    config: ControllerConfig,
    view: InstanceView | TaskInstance,
) -> Decision:
    """Score every action with the entropy-weighted blend and pick the best."""
    if isinstance(view, TaskInstance):
        view = view.view()
    n = belief.n
    if config.weighting == "explore":
        w = 1.0
    elif config.weighting == "exploit":
        w = 0.0
    else:
        w = min(max(bl.entropy(belief) / config.entropy_cap(n), 0.0), 1.0)
    info = explore_values(belief, state, view) if w > 0.0 else np.zeros(n)
    exploit = (
        exploit_values(belief, view, state, config.gamma, config.max_components).action_values
        if w < 1.0
        else np.zeros(n)
    )
    blended = w * _normalized(info) + (1.0 - w) * _normalized(exploit)
    blended[_spent_mask(view, state)] = -np.inf
    return Decision(int(np.argmax(blended)) + 1, w, blended, info, exploit)


def select_action(
    belief: BeliefState,
    state: Sequence[int],
    config: ControllerConfig,
    view: InstanceView | TaskInstance,
) -> int:
    return decide(belief, state, config, view).action


@dataclass
class EpisodeLog:
    task: str
    states: list[tuple[int, ...]]
    actions: list[int] = field(default_factory=list)
    moved: list[bool] = field(default_factory=list)
    entropies: list[float] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)
    chosen_values: list[float] = field(default_factory=list)
    final_belief: BeliefState | None = None
    solved: bool = False

    @property
    def steps(self) -> int:
        return len(self.actions)

    def rows(self) -> list[dict]:
        return [
            {
                "step": t + 1,
                "action": a,
                "moved": int(m),
                "entropy": f"{h:.6f}",
                "w": f"{w:.6f}",
                "q": f"{q:.6f}",
            }
            for t, (a, m, h, w, q) in enumerate(
                zip(self.actions, self.moved, self.entropies, self.weights, self.chosen_values)
            )
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, ["step", "action", "moved", "entropy", "w", "q"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()


def run_episode(instance: TaskInstance, initial_belief: BeliefState, config: ControllerConfig) -> EpisodeLog:
    """Select, act, observe until the task is solved or the budget runs out."""
    if initial_belief.n != instance.n:
        raise ValueError(f"belief has {initial_belief.n} components, task has {instance.n}")
    view = instance.view()
    belief = BeliefState(initial_belief.components, config.epsilon)
    state = instance.initial_state
    log = EpisodeLog(instance.name, [state])
    while not is_solved(instance, state) and log.steps < config.action_budget:
        d = decide(belief, state, config, view)
        outcome = step(instance, state, d.action)
        log.entropies.append(bl.entropy(belief))
        log.weights.append(d.weight)
        log.chosen_values.append(float(d.values[d.action - 1]))
        belief = bl.observe(belief, state, d.action, outcome.moved)
        state = outcome.next_state
        log.actions.append(d.action)
        log.moved.append(outcome.moved)
        log.states.append(state)
    log.final_belief = belief
    log.solved = is_solved(instance, state)
    return log


def run_random_episode(instance: TaskInstance, config: ControllerConfig) -> EpisodeLog:
    """Baseline agent: uniformly random toggles among components that can still move."""
    rng = np.random.default_rng(config.rng_seed)
    belief = bl.uniform_belief(instance.n, config.epsilon)
    view = instance.view()
    state = instance.initial_state
    log = EpisodeLog(instance.name, [state])
    while not is_solved(instance, state) and log.steps < config.action_budget:
        choices = np.flatnonzero(~_spent_mask(view, state)) + 1
        action = int(rng.choice(choices))
        outcome = step(instance, state, action)
        log.entropies.append(bl.entropy(belief))
        log.weights.append(float("nan"))
        log.chosen_values.append(float("nan"))
        belief = bl.observe(belief, state, action, outcome.moved)
        state = outcome.next_state
        log.actions.append(action)
        log.moved.append(outcome.moved)
        log.states.append(state)
    log.final_belief = belief
    log.solved = is_solved(instance, state)
    return log

"""Factored belief over the dependency graph.

For each component n the agent keeps a categorical distribution over who
constrains it: ``Constrained(i, p)`` (component i at position p blocks n) for
every other component i and both positions, or ``Independent``. That is
2(N-1)+1 hypotheses per component, stored in a fixed order::

    (1, 0), (1, 1), (2, 0), (2, 1), ..., skipping n itself ..., Independent

Observation model, with noise epsilon::

    P(moved | Constrained(i, p)) = eps      if state[i] == p else 1 - eps
    P(moved | Independent)       = 1 - eps

Entropies and divergences are in bits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import BeliefInconsistencyError, ConfigurationError, InvalidComponentError, TaskFormatError

BELIEF_FORMAT = "lockmem-belief"
BELIEF_FORMAT_VERSION = 1
DEFAULT_EPSILON = 0.05


@dataclass(frozen=True)
class Hypothesis:
    blocker: int | None = None
    position: int | None = None

    @property
    def independent(self) -> bool:
        return self.blocker is None

    def __str__(self) -> str:
        return "Independent" if self.blocker is None else f"Constrained({self.blocker}, {self.position})"


INDEPENDENT = Hypothesis()


def hypothesis_count(n: int) -> int:
    return 2 * (n - 1) + 1


def hypotheses(component: int, n: int) -> tuple[Hypothesis, ...]:
    hyps = [Hypothesis(i, p) for i in range(1, n + 1) if i != component for p in (0, 1)]
    return tuple(hyps) + (INDEPENDENT,)


def hypothesis_index(component: int, hyp: Hypothesis, n: int) -> int:
    if hyp.independent:
        return 2 * (n - 1)
    i = hyp.blocker
    if i == component or not 1 <= i <= n or hyp.position not in (0, 1):
        raise ValueError(f"{hyp} is not a hypothesis for component {component}")
    slot = i - 1 if i < component else i - 2
    return 2 * slot + hyp.position


class ComponentBelief:
    """Categorical distribution Z^n for one component. Read-only after creation."""

    __slots__ = ("component", "probs")

    def __init__(self, component: int, probs: Sequence[float] | np.ndarray) -> None:
        arr = np.array(probs, dtype=float)
        if arr.ndim != 1 or arr.size < 3 or arr.size % 2 == 0:
            raise ValueError(f"belief over {arr.size} hypotheses is not 2(N-1)+1 long")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("belief probabilities must be finite and non-negative")
        if abs(arr.sum() - 1.0) > 1e-9:
            raise ValueError(f"belief for component {component} sums to {arr.sum()!r}")
        arr.flags.writeable = False
        object.__setattr__(self, "component", int(component))
        object.__setattr__(self, "probs", arr)

    def __setattr__(self, name, value):
        raise AttributeError("ComponentBelief is immutable")

    @property
    def n(self) -> int:
        return (self.probs.size - 1) // 2 + 1

    def hypotheses(self) -> tuple[Hypothesis, ...]:
        return hypotheses(self.component, self.n)

    def prob(self, hyp: Hypothesis) -> float:
        return float(self.probs[hypothesis_index(self.component, hyp, self.n)])

    def entropy(self) -> float:
        return _entropy_bits(self.probs)

    def __repr__(self) -> str:
        return f"ComponentBelief({self.component}, {np.array2string(self.probs, precision=4)})"


@dataclass(frozen=True, eq=False)
class BeliefState:
    components: tuple[ComponentBelief, ...]
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        n = len(comps)
        for k, c in enumerate(comps):
            if c.component != k + 1 or c.n != n:
                raise ValueError(f"component belief {k} does not belong to an N={n} belief")
        if not 0.0 <= self.epsilon < 0.5:
            raise ConfigurationError(f"epsilon must lie in [0, 0.5), got {self.epsilon!r}")
        object.__setattr__(self, "components", comps)

    @property
    def n(self) -> int:
        return len(self.components)

    def __getitem__(self, component: int) -> ComponentBelief:
        _check_action(component, self.n)
        return self.components[component - 1]

    def matrix(self) -> np.ndarray:
        """All component beliefs stacked into an (N, 2(N-1)+1) array."""
        return np.stack([c.probs for c in self.components])

    def with_component(self, belief: ComponentBelief) -> "BeliefState":
        comps = list(self.components)
        comps[belief.component - 1] = belief
        return BeliefState(tuple(comps), self.epsilon)


def _check_action(action: int, n: int) -> None:
    if isinstance(action, bool) or not isinstance(action, (int, np.integer)) or not 1 <= action <= n:
        raise InvalidComponentError(f"component id {action!r} not in 1..{n}")


def _entropy_bits(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def permit_mask(action: int, state: Sequence[int]) -> np.ndarray:
    """Which hypotheses for ``action`` allow it to move in ``state``."""
    others = np.delete(np.asarray(state, dtype=np.int8), action - 1)
    mask = np.empty(2 * len(others) + 1, dtype=bool)
    mask[0:-1:2] = others != 0
    mask[1:-1:2] = others != 1
    mask[-1] = True
    return mask


def move_likelihood(action: int, state: Sequence[int], epsilon: float) -> np.ndarray:
    return np.where(permit_mask(action, state), 1.0 - epsilon, epsilon)


def uniform_belief(n: int, epsilon: float = DEFAULT_EPSILON) -> BeliefState:
    if n < 2:
        raise ValueError("belief needs N >= 2 components")
    m = hypothesis_count(n)
    return BeliefState(tuple(ComponentBelief(k, np.full(m, 1.0 / m)) for k in range(1, n + 1)), epsilon)


def belief_from_matrix(matrix: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> BeliefState:
    return BeliefState(tuple(ComponentBelief(k + 1, row) for k, row in enumerate(np.asarray(matrix))), epsilon)


def observe(belief: BeliefState, state: Sequence[int], action: int, moved: bool) -> BeliefState:
    """Bayes update of the acted component's belief after seeing it move or not."""
    _check_action(action, belief.n)
    prior = belief.components[action - 1].probs
    lik = move_likelihood(action, state, belief.epsilon)
    if not moved:
        lik = 1.0 - lik
    post = prior * lik
    total = post.sum()
    if total <= 0.0:
        raise BeliefInconsistencyError(
            f"component {action} {'moved' if moved else 'stayed'} in state {tuple(state)}, "
            "which no hypothesis with non-zero mass allows"
        )
    return belief.with_component(ComponentBelief(action, post / total))


def success_probability(
    belief: BeliefState, state: Sequence[int], action: int, noise_free: bool = False
) -> float:
    """Marginal probability that toggling ``action`` moves it.

    With ``noise_free`` the transition model ignores epsilon; the planner
    uses this form since epsilon models sensing error, not the task.
    """
    _check_action(action, belief.n)
    eps = 0.0 if noise_free else belief.epsilon
    return float(belief.components[action - 1].probs @ move_likelihood(action, state, eps))


def kld_bits(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in bits, with 0 log 0 = 0."""
    nz = p > 0
    if np.any(q[nz] <= 0):
        return math.inf
    return float((p[nz] * np.log2(p[nz] / q[nz])).sum())


def expected_info_gain(belief: BeliefState, state: Sequence[int], action: int) -> float:
    """Expected KL(prior || posterior) over the two possible outcomes."""
    if belief.epsilon <= 0.0:
        raise ConfigurationError("expected information gain requires epsilon > 0")
    _check_action(action, belief.n)
    prior = belief.components[action - 1].probs
    lik = move_likelihood(action, state, belief.epsilon)
    gain = 0.0
    for outcome_lik in (lik, 1.0 - lik):
        joint = prior * outcome_lik
        p_out = joint.sum()
        if p_out > 0:
            gain += p_out * kld_bits(prior, joint / p_out)
    return max(gain, 0.0)


def entropy(belief: BeliefState) -> float:
    """Total entropy in bits, the sum over the independent factors."""
    return sum(c.entropy() for c in belief.components)


def max_entropy(n: int) -> float:
    return n * math.log2(hypothesis_count(n))


def map_edges(belief: BeliefState) -> list[tuple[int, Hypothesis, float]]:
    """Most probable hypothesis per component.

    Ties go to Independent, then the lowest blocker id, then position 0.
    """
    edges = []
    for c in belief.components:
        probs = c.probs
        top = probs.max()
        tied = np.flatnonzero(probs >= top * (1.0 - 1e-12))
        # Independent sits last; the rest are already in (blocker, position) order
        idx = int(tied[-1]) if tied[-1] == probs.size - 1 else int(tied[0])
        edges.append((c.component, c.hypotheses()[idx], float(probs[idx])))
    return edges


# -- serialization ---------------------------------------------------------


def belief_to_dict(belief: BeliefState) -> dict[str, Any]:
    return {
        "format": BELIEF_FORMAT,
        "version": BELIEF_FORMAT_VERSION,
        "n": belief.n,
        "epsilon": belief.epsilon,
        "components": [
            {"component": c.component, "probs": [float(p) for p in c.probs]} for c in belief.components
        ],
    }


def belief_from_dict(doc: Any) -> BeliefState:
    if not isinstance(doc, dict) or doc.get("format") != BELIEF_FORMAT:
        raise TaskFormatError(f"belief.format: expected {BELIEF_FORMAT!r}")
    if doc.get("version") != BELIEF_FORMAT_VERSION:
        raise TaskFormatError(f"belief.version: unsupported version {doc.get('version')!r}")
    try:
        n = int(doc["n"])
        comps = tuple(ComponentBelief(c["component"], c["probs"]) for c in doc["components"])
        belief = BeliefState(comps, float(doc["epsilon"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise TaskFormatError(f"belief: {exc}") from exc
    if belief.n != n:
        raise TaskFormatError(f"belief.n: header says {n}, found {belief.n} components")
    return belief


def save_belief(belief: BeliefState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(belief_to_dict(belief), indent=1) + "\n")


def load_belief(path: str | Path) -> BeliefState:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TaskFormatError(f"cannot read belief file {path}: {exc}") from exc
    return belief_from_dict(doc)

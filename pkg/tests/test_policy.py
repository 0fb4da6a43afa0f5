import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lockmem import belief as bl
from lockmem.belief import INDEPENDENT, BeliefState, ComponentBelief, Hypothesis
from lockmem.errors import CapacityError, ConfigurationError
from lockmem.policy import (
    ControllerConfig,
    decide,
    exploit_values,
    explore_values,
    run_episode,
    run_random_episode,
    select_action,
)
from lockmem.task import (
    BlockingRule,
    Component,
    GenerationSpec,
    InstanceView,
    Pose,
    TaskInstance,
    fig1_instance,
    generate_puzzle,
    relabel,
    step,
)

from oracles import dp_exploit, enumerate_exploit, info_gain, random_simplex


def view(n, goal=None, reversible=None):
    return InstanceView(n, goal or n, 1, tuple(reversible or [True] * n))


def point_belief(n, hyps, eps=0.05):
    comps = []
    for c, h in enumerate(hyps, start=1):
        probs = np.zeros(bl.hypothesis_count(n))
        probs[bl.hypothesis_index(c, h, n)] = 1.0
        comps.append(ComponentBelief(c, probs))
    return BeliefState(tuple(comps), eps)


def fig1_truth(eps=0.05):
    return point_belief(5, [INDEPENDENT] + [Hypothesis(k - 1, 0) for k in range(2, 6)], eps)


def random_belief(rng, n, eps=0.05, sparse=False):
    return bl.belief_from_matrix(
        np.stack([random_simplex(rng, bl.hypothesis_count(n), sparse) for _ in range(n)]), eps
    )


# -- exploitation values -----------------------------------------------------------


def test_two_chain_converged_values():
    belief = point_belief(2, [INDEPENDENT, Hypothesis(1, 0)])
    plan = exploit_values(belief, view(2), (0, 0), 0.95)
    assert plan.action_values[0] == pytest.approx(0.9025, abs=1e-15)
    assert plan.action_values[1] == 0.0
    assert plan.best_path == [((0, 0), 1), ((1, 0), 2)]
    assert plan.path_value == pytest.approx(0.9025, abs=1e-15)


def test_two_chain_matches_enumeration():
    belief = point_belief(2, [INDEPENDENT, Hypothesis(1, 0)])
    ref = enumerate_exploit(belief, (0, 0), 2, 0.95, (True, True), 4)
    np.testing.assert_allclose(exploit_values(belief, view(2), (0, 0)).action_values, ref, atol=1e-15)


def test_solved_state_values_are_one_step():
    rng = np.random.default_rng(0)
    belief = random_belief(rng, 3)
    gamma = 0.9
    plan = exploit_values(belief, view(3), (0, 1, 1), gamma)
    for a in (1, 2):
        q = bl.success_probability(belief, (0, 1, 1), a, noise_free=True)
        assert plan.action_values[a - 1] == pytest.approx(gamma * q, abs=1e-15)
    assert plan.best_path == [] and plan.path_value == 1.0


@pytest.mark.parametrize("n", [2, 3])
def test_exploit_matches_literal_enumeration(n):
    rng = np.random.default_rng(n)
    for trial in range(25):
        belief = random_belief(rng, n, sparse=trial % 2 == 0)
        reversible = tuple(bool(b) for b in rng.integers(0, 2, n)) if trial % 3 == 0 else (True,) * n
        state = tuple(int(b) for b in rng.integers(0, 2, n))
        gamma = float(rng.uniform(0.5, 0.99))
        got = exploit_values(belief, view(n, reversible=reversible), state, gamma).action_values
        ref = enumerate_exploit(belief, state, n, gamma, reversible, 2**n)
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-9)


def test_dp_oracle_agrees_with_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(10):
        belief = random_belief(rng, 3, sparse=True)
        state = tuple(int(b) for b in rng.integers(0, 2, 3))
        a = enumerate_exploit(belief, state, 3, 0.9, (True,) * 3, 8)
        b = dp_exploit(belief, state, 3, 0.9, (True,) * 3, 8)
        np.testing.assert_allclose(a, b, atol=1e-15)


def test_exploit_matches_dp_for_four_components():
    rng = np.random.default_rng(4)
    for trial in range(30):
        belief = random_belief(rng, 4, sparse=trial % 2 == 1)
        state = tuple(int(b) for b in rng.integers(0, 2, 4))
        reversible = (True, False, True, True) if trial % 4 == 0 else (True,) * 4
        got = exploit_values(belief, view(4, reversible=reversible), state, 0.95).action_values
        ref = dp_exploit(belief, state, 4, 0.95, reversible, 16)
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-9)


def test_unreachable_goal_gives_zero_values():
    # 1 and 2 are believed to hold each other shut, and 1 also holds the goal
    belief = point_belief(3, [Hypothesis(2, 0), Hypothesis(1, 0), Hypothesis(1, 0)])
    plan = exploit_values(belief, view(3), (0, 0, 0))
    np.testing.assert_array_equal(plan.action_values, 0.0)
    assert plan.best_path == [] and plan.path_value == 0.0


def test_capacity_cap():
    with pytest.raises(CapacityError):
        exploit_values(bl.uniform_belief(6), view(6), (0,) * 6, max_components=5)


def test_tie_break_prefers_lower_action_sequence():
    # 3 is equally likely held by 1 or by 2 at 0; opening either first is worth the same
    belief = point_belief(3, [INDEPENDENT, INDEPENDENT, Hypothesis(1, 0)])
    twin = point_belief(3, [INDEPENDENT, INDEPENDENT, INDEPENDENT])
    plan = exploit_values(twin, view(3), (0, 0, 0))
    assert plan.best_path == [((0, 0, 0), 3)]
    sym = BeliefState(
        (belief[1], belief[2], ComponentBelief(3, [0.5, 0.0, 0.5, 0.0, 0.0])), 0.05
    )
    plan = exploit_values(sym, view(3), (0, 0, 0))
    assert plan.action_values[0] == pytest.approx(plan.action_values[1])
    assert plan.best_path[0][1] == 1


def _reachable(task):
    seen = {task.initial_state}
    todo = deque([task.initial_state])
    while todo:
        s = todo.popleft()
        if s[task.goal_component - 1] == 1:
            return True
        for a in range(1, task.n + 1):
            nxt = step(task, s, a).next_state
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return False


def test_best_path_replays_on_map_graph():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 40:
        n = int(rng.integers(2, 5))
        hyps = []
        for c in range(1, n + 1):
            options = bl.hypotheses(c, n)
            hyps.append(options[int(rng.integers(len(options)))])
        rules = tuple(BlockingRule(h.blocker, h.position, c) for c, h in enumerate(hyps, 1) if not h.independent)
        comps = tuple(Component(k, "door", Pose(k, 0, 0, 0)) for k in range(1, n + 1))
        task = TaskInstance(comps, rules, n, 1.0)
        if task.initial_state[n - 1] == 1 or not _reachable(task):
            continue
        m = bl.hypothesis_count(n)
        comps_b = []
        for c, h in enumerate(hyps, 1):
            probs = np.full(m, 0.05 / (m - 1))
            probs[bl.hypothesis_index(c, h, n)] = 0.95
            comps_b.append(ComponentBelief(c, probs))
        belief = BeliefState(tuple(comps_b), 0.05)
        plan = exploit_values(belief, task.view(), task.initial_state)
        state = task.initial_state
        for s, a in plan.best_path:
            assert s == state
            out = step(task, state, a)
            assert out.moved
            state = out.next_state
        assert state[n - 1] == 1
        checked += 1


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**32 - 1), st.floats(0.3, 0.97), st.floats(0.0, 0.02))
def test_gamma_monotone(n, seed, gamma, bump):
    rng = np.random.default_rng(seed)
    belief = random_belief(rng, n, sparse=seed % 2 == 0)
    state = tuple(int(b) for b in rng.integers(0, 2, n))
    low = exploit_values(belief, view(n), state, gamma).action_values
    high = exploit_values(belief, view(n), state, gamma + bump).action_values
    assert np.all(high >= low - 1e-15)


def test_gamma_validated():
    with pytest.raises(ConfigurationError):
        exploit_values(bl.uniform_belief(2), view(2), (0, 0), 1.0)
    with pytest.raises(ConfigurationError):
        ControllerConfig(gamma=0.0)


# -- exploration values ------------------------------------------------------------


def test_converged_belief_has_no_info_value():
    eps = 0.05
    n = 3
    m = bl.hypothesis_count(n)
    comps = []
    for c in range(1, n + 1):
        probs = np.full(m, 1e-10)
        probs[-1] = 1 - (m - 1) * 1e-10
        comps.append(ComponentBelief(c, probs))
    values = explore_values(BeliefState(tuple(comps), eps), (0, 1, 0))
    assert np.all(values < 1e-7)


def test_uniform_symmetric_info_values_equal():
    values = explore_values(bl.uniform_belief(4), (0, 0, 0, 0))
    assert np.ptp(values) <= 1e-12
    values = explore_values(bl.uniform_belief(4), (1, 1, 1, 1))
    assert np.ptp(values) <= 1e-12


def test_explore_values_match_oracle_three():
    rng = np.random.default_rng(3)
    for _ in range(50):
        belief = random_belief(rng, 3, eps=float(rng.uniform(0.01, 0.3)))
        state = tuple(int(b) for b in rng.integers(0, 2, 3))
        got = explore_values(belief, state)
        ref = [info_gain(belief[a].probs, a, 3, state, belief.epsilon) for a in (1, 2, 3)]
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-9)


def test_spent_one_way_components_have_no_info_value():
    v = view(3, reversible=[False, True, True])
    values = explore_values(bl.uniform_belief(3), (1, 0, 0), v)
    assert values[0] == 0.0 and values[1] > 0


# -- blending and selection -----------------------------------------------------------


def test_zero_entropy_selects_exploit_argmax():
    belief = fig1_truth()
    state = (1, 0, 0, 0, 0)
    d = decide(belief, state, ControllerConfig(), fig1_instance())
    assert d.weight == pytest.approx(0.0, abs=1e-12)
    assert d.action == int(np.argmax(exploit_values(belief, fig1_instance(), state).action_values)) + 1 == 2


def test_full_entropy_selects_info_argmax():
    rng = np.random.default_rng(2)
    belief = random_belief(rng, 4)
    cfg = ControllerConfig(h_max=0.5)  # entropy far above the cap, w clamps to 1
    d = decide(belief, (0, 1, 0, 1), cfg, view(4))
    assert d.weight == 1.0
    assert d.action == int(np.argmax(explore_values(belief, (0, 1, 0, 1)))) + 1


def test_two_chain_uniform_hand_blend():
    h_max = 4.0
    w = 2 * math.log2(3) / h_max
    belief = bl.uniform_belief(2)
    d = decide(belief, (0, 0), ControllerConfig(h_max=h_max), view(2))
    assert d.weight == pytest.approx(w, abs=1e-12)
    # by hand: q = 2/3 for either toggle from (0, 0); toggling 2 reaches the goal at once,
    # toggling 1 needs a second 2/3 toggle of component 2 from (1, 0)
    q = 2 / 3
    exploit = np.array([0.95 * q * 0.95 * q, 0.95 * q])
    np.testing.assert_allclose(d.exploit, exploit, atol=1e-15)
    info = np.array([info_gain([1 / 3] * 3, a, 2, (0, 0), 0.05) for a in (1, 2)])
    np.testing.assert_allclose(d.info, info, atol=1e-12)
    blended = w * info / info.max() + (1 - w) * exploit / exploit.max()
    np.testing.assert_allclose(d.values, blended, atol=1e-12)
    assert d.action == int(np.argmax(blended)) + 1 == 2


def test_argmax_ties_break_to_lowest_id():
    assert select_action(bl.uniform_belief(3), (0, 0, 0), ControllerConfig(weighting="explore"), view(3)) == 1


def test_spent_components_never_selected():
    belief = bl.uniform_belief(3)
    v = view(3, reversible=[False, False, True])
    for w in ("explore", "exploit", "entropy"):
        assert select_action(belief, (1, 1, 0), ControllerConfig(weighting=w), v) == 3


# -- episodes -----------------------------------------------------------------------


def test_ground_truth_belief_solves_fig1_in_five():
    log = run_episode(fig1_instance(), fig1_truth(), ControllerConfig())
    assert log.solved and log.actions == [1, 2, 3, 4, 5]
    assert all(log.moved)


def test_zero_budget_is_empty_and_unsolved():
    log = run_episode(fig1_instance(), bl.uniform_belief(5), ControllerConfig(action_budget=0))
    assert log.steps == 0 and not log.solved and log.states == [(0,) * 5]


def test_fig1_uniform_prior_completes_within_thirty():
    solved = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        task = relabel(fig1_instance(), rng.permutation(5) + 1)
        log = run_episode(task, bl.uniform_belief(5), ControllerConfig(action_budget=30))
        solved += log.solved
    assert solved >= 48


@pytest.mark.parametrize("classes", [("slide", "door"), ("wheel", "slide", "door"), ("door", "slide", "wheel", "slide")])
def test_generated_small_chains_complete(classes):
    solved = 0
    for seed in range(20):
        task = generate_puzzle(seed, GenerationSpec(classes))
        task = relabel(task, np.random.default_rng(seed).permutation(task.n) + 1)
        solved += run_episode(task, bl.uniform_belief(task.n), ControllerConfig()).solved
    assert solved >= 19


def test_episode_deterministic_and_logged():
    task = relabel(fig1_instance(), [2, 5, 3, 1, 4])
    a = run_episode(task, bl.uniform_belief(5), ControllerConfig())
    b = run_episode(task, bl.uniform_belief(5), ControllerConfig())
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == "step,action,moved,entropy,w,q"
    assert len(a.states) == a.steps + 1
    for s, act, moved, nxt in zip(a.states, a.actions, a.moved, a.states[1:]):
        out = step(task, s, act)
        assert out.moved == moved and out.next_state == nxt
    np.testing.assert_array_equal(a.final_belief.matrix(), b.final_belief.matrix())


def test_random_agent_seeded():
    cfg = ControllerConfig(rng_seed=3, action_budget=15)
    a = run_random_episode(fig1_instance(), cfg)
    assert a.actions == run_random_episode(fig1_instance(), cfg).actions
    assert a.actions != run_random_episode(fig1_instance(), ControllerConfig(rng_seed=4, action_budget=15)).actions


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        run_episode(fig1_instance(), bl.uniform_belief(4), ControllerConfig())

"""Memory-guided exploration of locking tasks.

Agents face tasks made of binary components (doors, slides, wheels, screws,
panels, ...) some of which block others. A factored Bayesian belief over the
blocking structure is refined by trying actions, a dual controller trades
information gain against the discounted chance of reaching the goal, and an
instance-based memory turns finished episodes into priors for new tasks.
"""

from .belief import (
    INDEPENDENT,
    BeliefState,
    ComponentBelief,
    Hypothesis,
    entropy,
    expected_info_gain,
    kld_bits,
    load_belief,
    map_edges,
    observe,
    save_belief,
    success_probability,
    uniform_belief,
)
from .errors import (
    BeliefInconsistencyError,
    CapacityError,
    ConfigurationError,
    GenerationError,
    InvalidComponentError,
    LockmemError,
    ProtocolError,
    TaskFormatError,
)
from .memory import (
    MemoryConfig,
    MemoryStore,
    PoseDelta,
    build_prior,
    load_store,
    posedelta,
    record_episode,
    save_store,
)
from .policy import (
    ControllerConfig,
    EpisodeLog,
    exploit_values,
    explore_values,
    run_episode,
    run_random_episode,
    select_action,
)
from .task import (
    BlockingRule,
    Component,
    GenerationSpec,
    Outcome,
    Pose,
    TaskInstance,
    actuatable,
    fig1_instance,
    generate_puzzle,
    is_solved,
    load_instance,
    relabel,
    save_instance,
    step,
)

__version__ = "0.1.0"

"""Simulation and exact analysis of the Undecided State Dynamics."""

from .config import ExperimentSpec, build_initial_config
from .core import (
    UNDECIDED,
    BothUndecided,
    Configuration,
    CrossOpinion,
    Recruit,
    SameOpinion,
    apply_event,
    event_probabilities,
    expected_delta_drift,
    expected_opinion_drift,
    expected_undecided_drift,
    is_absorbing,
    majority_delta,
    max_pairwise_delta,
    transition,
)
from .engine import (
    Predicate,
    Snapshot,
    StopCondition,
    TrajectoryResult,
    run_agent_reference,
    run_replicates,
    run_trajectory,
    simulate,
)

__version__ = "0.1.0"

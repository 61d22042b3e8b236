"""Driving-world MDP planner with valence-weighted rewards and ethical deliberation in dilemmas."""

from .ethics import ContractarianConfig, DeliberationOutcome, Profile, ethical_deliberation
from .harm import ExpectedHarmMatrix, expected_harm, expected_harm_matrix, harm
from .reward import RewardParams, ValenceTable, reward
from .scenario import Scenario, ScenarioError, format_scenario, load_scenario, parse_scenario
from .solver import (
    SolveConfig,
    compile_model,
    extract_policy,
    simulate,
    solve,
    trace_metrics,
    value_iteration,
)
from .world import (
    ACTIONS,
    Action,
    WorldState,
    build_state_space,
    colliding_action_set,
    detect_collisions,
    is_dilemma,
    successor_distribution,
)

__version__ = "0.1.0"

__all__ = [
    "ACTIONS",
    "Action",
    "ContractarianConfig",
    "DeliberationOutcome",
    "ExpectedHarmMatrix",
    "Profile",
    "RewardParams",
    "Scenario",
    "ScenarioError",
    "SolveConfig",
    "ValenceTable",
    "WorldState",
    "build_state_space",
    "colliding_action_set",
    "compile_model",
    "detect_collisions",
    "ethical_deliberation",
    "expected_harm",
    "expected_harm_matrix",
    "extract_policy",
    "format_scenario",
    "harm",
    "is_dilemma",
    "load_scenario",
    "parse_scenario",
    "reward",
    "simulate",
    "solve",
    "successor_distribution",
    "trace_metrics",
    "value_iteration",
]

"""Value iteration with a dilemma branch at policy extraction, plus rollouts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .ethics import DeliberationOutcome, Profile, ethical_deliberation
from .harm import transition_harms
from .reward import reward
from .world import (
    ACTIONS,
    Action,
    Collision,
    StateSpace,
    WorldState,
    at_objective,
    build_state_space,
    detect_collisions,
    is_terminal,
    successor_distribution,
)

if TYPE_CHECKING:
    from .scenario import Scenario

log = logging.getLogger(__name__)

# Relative tolerance for treating Q-values as tied in the normal-branch argmax.
Q_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class SolveConfig:
    epsilon: float = 1e-9
    max_sweeps: int = 10_000
    gamma: float = 0.95
    # After the MSE loop stops, finish with policy evaluation/improvement so the
    # returned V is an exact fixed point of the Bellman operator.
    refine: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


@dataclass(frozen=True)
class TabularMDP:
    """``transitions[a]`` is an S x S row-stochastic matrix; ``rewards[s, a]`` the expected reward."""

    transitions: tuple[sp.csr_matrix, ...]
    rewards: np.ndarray

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]


@dataclass(frozen=True)
class CompiledModel:
    scenario: Scenario
    space: StateSpace
    mdp: TabularMDP
    collision_prob: np.ndarray  # S x A
    terminal: np.ndarray  # S, bool


@dataclass(frozen=True)
class ValueFunction:
    values: np.ndarray
    sweeps: int
    mse: float
    converged: bool
    epsilon: float
    gamma: float
    refined: bool = False

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]


@dataclass
class Policy:
    space: StateSpace
    actions: list[Action]
    dilemma: np.ndarray
    outcomes: dict[int, DeliberationOutcome]
    profile: Profile

    def __len__(self) -> int:
        return len(self.actions)

    def action_for(self, s: WorldState) -> Action:
        return self.actions[self.space.index_of(s)]


def compile_model(scenario: Scenario, space: StateSpace | None = None) -> CompiledModel:
    """Tabulate P, expected R and collision probabilities over the reachable states.

    Terminal states absorb with zero reward under every action.
    """
    space = space if space is not None else build_state_space(scenario)
    n, n_a = len(space), len(ACTIONS)
    rows: list[list[int]] = [[] for _ in ACTIONS]
    cols: list[list[int]] = [[] for _ in ACTIONS]
    probs: list[list[float]] = [[] for _ in ACTIONS]
    rewards = np.zeros((n, n_a))
    col_prob = np.zeros((n, n_a))
    terminal = np.zeros(n, dtype=bool)
    for i, s in enumerate(space.states):
        if is_terminal(s, scenario):
            terminal[i] = True
            for k in range(n_a):
                rows[k].append(i)
                cols[k].append(i)
                probs[k].append(1.0)
            continue
        cached = space.successors.get(i)
        for k, a in enumerate(ACTIONS):
            r = 0.0
            pc = 0.0
            if cached is not None:
                succ = [(space.states[j], p) for j, p in cached[k]]
            else:
                succ = successor_distribution(s, a, scenario)
            for s1, p in succ:
                rows[k].append(i)
                cols[k].append(space.index_of(s1))
                probs[k].append(p)
                r += p * reward(s, a, s1, scenario)
                if s1.crashed:
                    pc += p
            rewards[i, k] = r
            col_prob[i, k] = pc
    transitions = tuple(
        sp.csr_matrix((probs[k], (rows[k], cols[k])), shape=(n, n)) for k in range(n_a)
    )
    return CompiledModel(scenario, space, TabularMDP(transitions, rewards), col_prob, terminal)


def mse(v1, v2) -> float:
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape:
        raise ValueError(f"length mismatch: {v1.shape} vs {v2.shape}")
    if v1.size == 0:
        return 0.0
    return float(np.mean((v1 - v2) ** 2))


def q_values(mdp: TabularMDP, v: np.ndarray, gamma: float) -> np.ndarray:
    """One-step lookahead ``Q[s, a] = sum_s' P(s'|s,a) (R + gamma V(s'))``."""
    q = mdp.rewards.copy()
    for k, pk in enumerate(mdp.transitions):
        q[:, k] += gamma * (pk @ v)
    return q


def bellman_sweep(mdp: TabularMDP, v: np.ndarray, gamma: float) -> np.ndarray:
    return q_values(mdp, v, gamma).max(axis=1)


def bellman_residual(mdp: TabularMDP, v: np.ndarray, gamma: float) -> float:
    """Max-norm distance between ``v`` and its Bellman backup."""
    return float(np.max(np.abs(bellman_sweep(mdp, v, gamma) - v))) if len(v) else 0.0


def _policy_values(mdp: TabularMDP, pi: np.ndarray, gamma: float) -> np.ndarray:
    n = mdp.n_states
    idx = np.arange(n)
    p_pi = sp.csr_matrix((n, n))
    for k, pk in enumerate(mdp.transitions):
        mask = sp.diags((pi == k).astype(float))
        p_pi = p_pi + mask @ pk
    r_pi = mdp.rewards[idx, pi]
    return np.asarray(spsolve(sp.identity(n, format="csc") - gamma * p_pi.tocsc(), r_pi)).reshape(n)


def _refine(mdp: TabularMDP, v: np.ndarray, gamma: float, max_rounds: int = 50) -> np.ndarray:
    pi = q_values(mdp, v, gamma).argmax(axis=1)
    for _ in range(max_rounds):
        v = _policy_values(mdp, pi, gamma)
        q = q_values(mdp, v, gamma)
        best = q.max(axis=1)
        # Keep the current action unless another is strictly better.
        stay = q[np.arange(len(pi)), pi] >= best - 1e-12 * (1.0 + np.abs(best))
        new_pi = np.where(stay, pi, q.argmax(axis=1))
        if np.array_equal(new_pi, pi):
            break
        pi = new_pi
    return v


def value_iteration(problem, cfg: SolveConfig | None = None) -> ValueFunction:
    """Synchronous value iteration from V = 0 until the MSE between sweeps is <= epsilon.

    ``problem`` is a :class:`TabularMDP`, a :class:`CompiledModel` or a scenario.
    A run that hits ``max_sweeps`` comes back with ``converged=False``.
    """
    if isinstance(problem, TabularMDP):
        mdp = problem
    elif isinstance(problem, CompiledModel):
        mdp = problem.mdp
    else:
        mdp = compile_model(problem).mdp
    if cfg is None:
        gamma = getattr(getattr(problem, "reward_params", None), "gamma", SolveConfig.gamma)
        cfg = SolveConfig(gamma=gamma)
    v = np.zeros(mdp.n_states)
    sweeps, err, converged = 0, float("inf"), False
    while sweeps < cfg.max_sweeps:
        v_next = bellman_sweep(mdp, v, cfg.gamma)
        sweeps += 1
        err = mse(v_next, v)
        v = v_next
        if err <= cfg.epsilon:
            converged = True
            break
    refined = False
    if converged and cfg.refine and err > 0.0:
        v = _refine(mdp, v, cfg.gamma)
        refined = True
    if not converged:
        log.warning("value iteration stopped after %d sweeps, mse %.3g > %.3g", sweeps, err, cfg.epsilon)
    return ValueFunction(v, sweeps, err, converged, cfg.epsilon, cfg.gamma, refined)


def greedy_action(q_row: np.ndarray, allowed: list[int]) -> int:
    best = max(q_row[k] for k in allowed)
    cutoff = best - Q_TIE_RTOL * (1.0 + abs(best))
    return next(k for k in allowed if q_row[k] >= cutoff)


def extract_policy(model: CompiledModel, v: ValueFunction | np.ndarray, profile: Profile) -> Policy:
    """Greedy policy over non-colliding actions; dilemma states go to ethical deliberation."""
    profile = Profile(profile)
    scenario = model.scenario
    values = v.values if isinstance(v, ValueFunction) else np.asarray(v)
    gamma = v.gamma if isinstance(v, ValueFunction) else scenario.reward_params.gamma
    q = q_values(model.mdp, values, gamma)
    floor = scenario.collision_prob_floor
    n = len(model.space)
    actions: list[Action] = []
    dilemma = np.zeros(n, dtype=bool)
    outcomes: dict[int, DeliberationOutcome] = {}
    for i, s in enumerate(model.space.states):
        colliding = [] if model.terminal[i] else [k for k in range(len(ACTIONS))
                                                 if model.collision_prob[i, k] > floor]
        if len(colliding) == len(ACTIONS):
            dilemma[i] = True
            out = ethical_deliberation(s, ACTIONS, scenario, profile)
            outcomes[i] = out
            actions.append(out.chosen)
        else:
            allowed = [k for k in range(len(ACTIONS)) if k not in colliding]
            actions.append(ACTIONS[greedy_action(q[i], allowed)])
    return Policy(model.space, actions, dilemma, outcomes, profile)


@dataclass(frozen=True)
class TraceStep:
    state: int
    action: Action
    reward: float
    next_state: int
    collisions: tuple[Collision, ...] = ()
    harms: dict[int, float] = field(default_factory=dict)
    dilemma: bool = False


@dataclass(frozen=True)
class Trace:
    seed: int
    gamma: float
    steps: tuple[TraceStep, ...]
    end: str  # objective | collision | horizon | max_steps


@dataclass(frozen=True)
class Metrics:
    discounted_return: float
    harm_per_user: dict[int, float]
    total_harm: float
    collision_count: int
    steps: int
    steps_to_objective: int | None
    dilemma_visits: int
    end: str

    def to_dict(self) -> dict:
        return {
            "end": self.end,
            "steps": self.steps,
            "steps_to_objective": self.steps_to_objective,
            "discounted_return": self.discounted_return,
            "collision_count": self.collision_count,
            "dilemma_visits": self.dilemma_visits,
            "total_harm": self.total_harm,
            "harm_per_user": {str(k): h for k, h in sorted(self.harm_per_user.items())},
        }


class PolicyCoverageError(LookupError):
    """A rollout reached a state the policy was not solved for."""


def _lookup(space: StateSpace, s: WorldState) -> int:
    try:
        return space.index[s]
    except KeyError:
        raise PolicyCoverageError(f"reachable state missing from policy: {s.describe()}") from None


def simulate(scenario: Scenario, policy: Policy, max_steps: int, seed: int,
             gamma: float | None = None) -> Trace:
    """Roll the world forward under ``policy``, sampling road-user maneuvers from ``seed``."""
    rng = np.random.default_rng(seed)
    gamma = scenario.reward_params.gamma if gamma is None else gamma
    space = policy.space
    s = scenario.initial
    steps: list[TraceStep] = []
    for _ in range(max_steps):
        i = _lookup(space, s)
        if is_terminal(s, scenario):
            break
        a = policy.actions[i]
        succ = successor_distribution(s, a, scenario)
        u = rng.random()
        acc = 0.0
        s1 = succ[-1][0]
        for cand, p in succ:
            acc += p
            if u < acc:
                s1 = cand
                break
        collisions = detect_collisions(s, a, s1, scenario)
        harms = transition_harms(collisions, s1, scenario)
        steps.append(TraceStep(i, a, reward(s, a, s1, scenario), _lookup(space, s1),
                               tuple(collisions), harms, bool(policy.dilemma[i])))
        s = s1
    if not is_terminal(s, scenario):
        end = "max_steps"
    elif s.crashed:
        end = "collision"
    elif at_objective(s, scenario.grid):
        end = "objective"
    else:
        end = "horizon"
    return Trace(seed, gamma, tuple(steps), end)


def trace_metrics(t: Trace) -> Metrics:
    ret = 0.0
    disc = 1.0
    harm_per_user: dict[int, float] = {}
    collisions = 0
    for st in t.steps:
        ret += disc * st.reward
        disc *= t.gamma
        collisions += len(st.collisions)
        for k, h in st.harms.items():
            harm_per_user[k] = harm_per_user.get(k, 0.0) + h
    return Metrics(
        discounted_return=ret,
        harm_per_user=harm_per_user,
        total_harm=sum(harm_per_user.values()),
        collision_count=collisions,
        steps=len(t.steps),
        steps_to_objective=len(t.steps) if t.end == "objective" else None,
        dilemma_visits=sum(1 for st in t.steps if st.dilemma),
        end=t.end,
    )


@dataclass
class Solution:
    model: CompiledModel
    values: ValueFunction
    policy: Policy


def solve(scenario: Scenario, profile: Profile, cfg: SolveConfig | None = None,
          model: CompiledModel | None = None) -> Solution:
    model = model if model is not None else compile_model(scenario)
    cfg = cfg if cfg is not None else scenario.solve_config()
    v = value_iteration(model, cfg)
    return Solution(model, v, extract_policy(model, v, profile))

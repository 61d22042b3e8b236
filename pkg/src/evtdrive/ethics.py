"""Deliberation profiles for dilemma states.

Every rule scores the rows of an :class:`ExpectedHarmMatrix` and picks the
lowest score. Ties resolve to the earliest action in canonical order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .harm import ExpectedHarmMatrix, expected_harm_matrix
from .reward import traffic_score
from .world import ACTIONS, Action, WorldState, successor_distribution

if TYPE_CHECKING:
    from .scenario import Scenario

# Scores within this relative distance of the minimum count as tied.
TIE_RTOL = 1e-9


class Profile(str, enum.Enum):
    CONTRACTARIAN = "contractarian"
    UTILITARIAN = "utilitarian"
    WEIGHTED_UTILITARIAN = "weighted_utilitarian"
    EGALITARIAN = "egalitarian"


PROFILES: tuple[Profile, ...] = tuple(Profile)


@dataclass(frozen=True)
class ContractarianConfig:
    danger_threshold: float = math.inf
    enforce_traffic_filter: bool = True
    enforce_uninvolved_filter: bool = True
    # False: the worst-off user is exempt from the threshold. True: it binds everyone.
    threshold_binds_all: bool = False


@dataclass(frozen=True)
class Admissibility:
    actions: tuple[Action, ...]
    filtered_out: dict[Action, str]
    vacated: bool = False


@dataclass(frozen=True)
class DeliberationOutcome:
    profile: Profile
    chosen: Action
    objective_value: float
    per_action_scores: dict[Action, float]
    filtered_out: dict[Action, str] = field(default_factory=dict)
    fallback_used: bool = False
    filters_vacated: bool = False
    matrix: ExpectedHarmMatrix | None = None

    def to_dict(self) -> dict:
        d = {
            "profile": self.profile.value,
            "chosen": self.chosen.value,
            "objective_value": self.objective_value,
            "fallback_used": self.fallback_used,
            "filters_vacated": self.filters_vacated,
            "filtered_out": {a.value: r for a, r in self.filtered_out.items()},
            "scores": {a.value: v for a, v in self.per_action_scores.items()},
        }
        if self.matrix is not None:
            d["matrix"] = self.matrix.to_dict()
        return d


def argmin_canonical(scores: dict[Action, float]) -> Action:
    best = min(scores.values())
    cutoff = best + TIE_RTOL * abs(best)
    for a in ACTIONS:
        if a in scores and scores[a] <= cutoff:
            return a
    raise ValueError("no scores")


def _ordered(m: ExpectedHarmMatrix, scores: Sequence[float]) -> dict[Action, float]:
    return {a: float(v) for a, v in zip(m.actions, scores)}


def filter_admissible(m: ExpectedHarmMatrix, s: WorldState, scenario: Scenario,
                      cfg: ContractarianConfig) -> Admissibility:
    """Drop actions that break the traffic code or endanger uninvolved users.

    If nothing survives, the original rows are returned with ``vacated`` set;
    the vehicle has to act regardless.
    """
    g, p = scenario.grid, scenario.reward_params
    removed: dict[Action, str] = {}
    for i, a in enumerate(m.actions):
        if cfg.enforce_traffic_filter:
            for s1, prob in successor_distribution(s, a, scenario):
                if prob > 0.0 and traffic_score(s1, g, p) < 0.0:
                    removed[a] = "sidewalk" if s1.av.lane in g.sidewalk_lanes else "traffic_code"
                    break
        if a not in removed and cfg.enforce_uninvolved_filter:
            for j, involved in enumerate(m.involved):
                if not involved and m.values[i, j] > 0.0:
                    removed[a] = "uninvolved_harm"
                    break
    kept = tuple(a for a in m.actions if a not in removed)
    if not kept:
        return Admissibility(m.actions, removed, vacated=True)
    return Admissibility(kept, removed)


def deliberate_utilitarian(m: ExpectedHarmMatrix, weighted: bool) -> DeliberationOutcome:
    if weighted:
        scores = m.values @ np.asarray(m.weights, dtype=float)
    else:
        scores = m.values.sum(axis=1)
    per_action = _ordered(m, scores)
    chosen = argmin_canonical(per_action)
    profile = Profile.WEIGHTED_UTILITARIAN if weighted else Profile.UTILITARIAN
    return DeliberationOutcome(profile, chosen, per_action[chosen], per_action, matrix=m)


def deliberate_egalitarian(m: ExpectedHarmMatrix) -> DeliberationOutcome:
    """Weighted harm scaled by each user's squared deviation from the action's mean harm."""
    w = np.asarray(m.weights, dtype=float)
    dev2 = (m.values - m.values.mean(axis=1, keepdims=True)) ** 2
    scores = (w * dev2 * m.values).sum(axis=1)
    if np.all(scores == 0.0):
        fallback = deliberate_utilitarian(m, weighted=True)
        return DeliberationOutcome(Profile.EGALITARIAN, fallback.chosen, fallback.objective_value,
                                   fallback.per_action_scores, fallback_used=True, matrix=m)
    per_action = _ordered(m, scores)
    chosen = argmin_canonical(per_action)
    return DeliberationOutcome(Profile.EGALITARIAN, chosen, per_action[chosen], per_action, matrix=m)


def contractarian_feasible(m: ExpectedHarmMatrix, cfg: ContractarianConfig) -> list[Action]:
    w = np.asarray(m.weights, dtype=float)
    feasible = []
    for i, a in enumerate(m.actions):
        row = m.values[i]
        worst = int(np.argmax(w * row))
        ok = all(row[j] <= cfg.danger_threshold
                 for j in range(len(row)) if cfg.threshold_binds_all or j != worst)
        if ok:
            feasible.append(a)
    return feasible


def _hierarchy_key(row: np.ndarray, m: ExpectedHarmMatrix, ranking: Sequence[str]) -> tuple:
    # Per class in rank order: worst harm within the class, then the class total.
    key = []
    for cls in ranking:
        cols = [j for j, c in enumerate(m.classes) if c == cls]
        if cols:
            key.append(float(max(row[j] for j in cols)))
            key.append(float(sum(row[j] for j in cols)))
    return tuple(key)


def deliberate_contractarian(m: ExpectedHarmMatrix, cfg: ContractarianConfig,
                             valence_ranking: Sequence[str]) -> DeliberationOutcome:
    """Weighted minimax over actions that keep every other user under the danger threshold.

    When no action qualifies, users are served in order of claim strength:
    the strongest class's harm is minimised first, the next class breaks ties.
    """
    w = np.asarray(m.weights, dtype=float)
    minimax = _ordered(m, (m.values * w).max(axis=1))
    feasible = contractarian_feasible(m, cfg)
    if feasible:
        scores = {a: minimax[a] for a in feasible}
        chosen = argmin_canonical(scores)
        return DeliberationOutcome(Profile.CONTRACTARIAN, chosen, scores[chosen], minimax, matrix=m)
    ranking = list(valence_ranking) + [c for c in m.classes if c not in valence_ranking]
    keys = {a: _hierarchy_key(m.values[i], m, ranking) for i, a in enumerate(m.actions)}
    best = min(keys.values())
    chosen = next(a for a in ACTIONS if keys.get(a) == best)
    return DeliberationOutcome(Profile.CONTRACTARIAN, chosen, minimax[chosen], minimax,
                               fallback_used=True, matrix=m)


def deliberate(m: ExpectedHarmMatrix, profile: Profile, cfg: ContractarianConfig,
               valence_ranking: Sequence[str]) -> DeliberationOutcome:
    if profile is Profile.UTILITARIAN:
        return deliberate_utilitarian(m, weighted=False)
    if profile is Profile.WEIGHTED_UTILITARIAN:
        return deliberate_utilitarian(m, weighted=True)
    if profile is Profile.EGALITARIAN:
        return deliberate_egalitarian(m)
    return deliberate_contractarian(m, cfg, valence_ranking)


def ethical_deliberation(s: WorldState, a_col: Iterable[Action], scenario: Scenario,
                         profile: Profile, matrix: ExpectedHarmMatrix | None = None) -> DeliberationOutcome:
    """Choose the action for a dilemma state under ``profile``.

    The contractarian profile first drops inadmissible actions. The returned
    outcome carries the full harm matrix, with scores for the candidates.
    """
    profile = Profile(profile)
    m = matrix if matrix is not None else expected_harm_matrix(s, a_col, scenario)
    if profile is not Profile.CONTRACTARIAN:
        return deliberate(m, profile, scenario.contractarian, scenario.valences.ranking)
    adm = filter_admissible(m, s, scenario, scenario.contractarian)
    out = deliberate_contractarian(m.restrict(adm.actions), scenario.contractarian,
                                   scenario.valences.ranking)
    return DeliberationOutcome(out.profile, out.chosen, out.objective_value, out.per_action_scores,
                               filtered_out=adm.filtered_out, fallback_used=out.fallback_used,
                               filters_vacated=adm.vacated, matrix=m)

"""Physical harm of collisions and expected harm per action."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping

import numpy as np

from .world import (
    ACTIONS,
    PASSENGER_ID,
    Action,
    Collision,
    Configuration,
    RoadUserKind,
    WorldState,
    detect_collisions,
    successor_distribution,
)

if TYPE_CHECKING:
    from .scenario import Scenario

DEFAULT_MASSES: dict[RoadUserKind, float] = {
    RoadUserKind.PEDESTRIAN: 75.0,
    RoadUserKind.CYCLIST: 90.0,
    RoadUserKind.MOTORCYCLIST: 250.0,
    RoadUserKind.CAR_OCCUPANT: 1500.0,
    RoadUserKind.TRUCK_OCCUPANT: 12000.0,
    RoadUserKind.AV_PASSENGER: 1500.0,
}

# ILLUSTRATIVE ONLY, NOT CLINICALLY CALIBRATED. Severity units per m/s of delta-v.
# Shipped so example scenarios have something to load; real use needs injury data.
ILLUSTRATIVE_VULNERABILITY: dict[tuple[RoadUserKind, Configuration], float] = {
    (RoadUserKind.PEDESTRIAN, Configuration.FRONTAL): 0.060,
    (RoadUserKind.PEDESTRIAN, Configuration.SIDE): 0.055,
    (RoadUserKind.PEDESTRIAN, Configuration.REAR): 0.050,
    (RoadUserKind.CYCLIST, Configuration.FRONTAL): 0.050,
    (RoadUserKind.CYCLIST, Configuration.SIDE): 0.050,
    (RoadUserKind.CYCLIST, Configuration.REAR): 0.045,
    (RoadUserKind.MOTORCYCLIST, Configuration.FRONTAL): 0.045,
    (RoadUserKind.MOTORCYCLIST, Configuration.SIDE): 0.045,
    (RoadUserKind.MOTORCYCLIST, Configuration.REAR): 0.040,
    (RoadUserKind.CAR_OCCUPANT, Configuration.FRONTAL): 0.020,
    (RoadUserKind.CAR_OCCUPANT, Configuration.SIDE): 0.030,
    (RoadUserKind.CAR_OCCUPANT, Configuration.REAR): 0.015,
    (RoadUserKind.TRUCK_OCCUPANT, Configuration.FRONTAL): 0.010,
    (RoadUserKind.TRUCK_OCCUPANT, Configuration.SIDE): 0.015,
    (RoadUserKind.TRUCK_OCCUPANT, Configuration.REAR): 0.008,
    (RoadUserKind.AV_PASSENGER, Configuration.FRONTAL): 0.020,
    (RoadUserKind.AV_PASSENGER, Configuration.SIDE): 0.030,
    (RoadUserKind.AV_PASSENGER, Configuration.REAR): 0.015,
}


@dataclass(frozen=True)
class VulnerabilityTable:
    entries: Mapping[tuple[RoadUserKind, Configuration], float]

    def c_vul(self, kind: RoadUserKind, config: Configuration) -> float:
        return self.entries[(kind, config)]

    def missing(self, kinds: Iterable[RoadUserKind]) -> list[tuple[RoadUserKind, Configuration]]:
        return [(k, c) for k in kinds for c in Configuration if (k, c) not in self.entries]

    def scaled(self, lam: float) -> VulnerabilityTable:
        return VulnerabilityTable({k: v * lam for k, v in self.entries.items()})


@dataclass(frozen=True)
class ImpactModel:
    masses: Mapping[RoadUserKind, float]
    restitution: float = 0.0


def post_collision_delta_v(collision: Collision, impact: ImpactModel,
                           kinds: tuple[RoadUserKind, RoadUserKind]) -> tuple[float, float]:
    """1-D momentum exchange with restitution; returns (delta-v of first body, of second) in m/s."""
    m_a = impact.masses[kinds[0]]
    m_b = impact.masses[kinds[1]]
    k = (1.0 + impact.restitution) * collision.closing_speed / (m_a + m_b)
    return (k * m_b, k * m_a)


def transition_harms(collisions: list[Collision], s_next: WorldState,
                     scenario: Scenario) -> dict[int, float]:
    """Harm per user id for one transition's collisions (passenger under ``PASSENGER_ID``)."""
    out: dict[int, float] = {}
    vul, impact = scenario.vulnerability, scenario.impact
    for c in collisions:
        kind = s_next.user(c.user_id).kind
        dv_av, dv_user = post_collision_delta_v(c, impact, (RoadUserKind.AV_PASSENGER, kind))
        out[c.user_id] = out.get(c.user_id, 0.0) + vul.c_vul(kind, c.configuration) * dv_user
        out[PASSENGER_ID] = (out.get(PASSENGER_ID, 0.0)
                             + vul.c_vul(RoadUserKind.AV_PASSENGER, c.configuration) * dv_av)
    return out


def harm(s: WorldState, a: Action, s_next: WorldState, user_k: int, scenario: Scenario) -> float:
    """Harm to user ``user_k`` (``PASSENGER_ID`` for the AV passenger) over one transition.

    The passenger accumulates harm from every collision of the step.
    """
    collisions = detect_collisions(s, a, s_next, scenario)
    return transition_harms(collisions, s_next, scenario).get(user_k, 0.0)


def expected_harm(s: WorldState, a: Action, user_k: int, scenario: Scenario) -> float:
    return sum(p * harm(s, a, s1, user_k, scenario)
               for s1, p in successor_distribution(s, a, scenario))


@dataclass(frozen=True)
class ExpectedHarmMatrix:
    """Expected harm per (action, user); column 0 is the AV passenger."""

    actions: tuple[Action, ...]
    users: tuple[int, ...]
    values: np.ndarray
    weights: tuple[float, ...]
    classes: tuple[str, ...]
    involved: tuple[bool, ...]

    def row(self, a: Action) -> np.ndarray:
        return self.values[self.actions.index(a)]

    def column(self, user_id: int) -> np.ndarray:
        return self.values[:, self.users.index(user_id)]

    def restrict(self, actions: Iterable[Action]) -> ExpectedHarmMatrix:
        keep = [a for a in self.actions if a in set(actions)]
        rows = [self.actions.index(a) for a in keep]
        return ExpectedHarmMatrix(tuple(keep), self.users, self.values[rows],
                                  self.weights, self.classes, self.involved)

    def with_weights(self, weights) -> ExpectedHarmMatrix:
        return ExpectedHarmMatrix(self.actions, self.users, self.values,
                                  tuple(float(w) for w in weights), self.classes, self.involved)

    def to_dict(self) -> dict:
        return {
            "users": list(self.users),
            "classes": list(self.classes),
            "weights": list(self.weights),
            "involved": list(self.involved),
            "rows": {a.value: [float(x) for x in self.row(a)] for a in self.actions},
        }


def expected_harm_matrix(s: WorldState, a_col: Iterable[Action], scenario: Scenario) -> ExpectedHarmMatrix:
    actions = tuple(a for a in ACTIONS if a in set(a_col))
    users = (PASSENGER_ID,) + tuple(u.id for u in s.users)
    col = {uid: j for j, uid in enumerate(users)}
    values = np.zeros((len(actions), len(users)))
    for i, a in enumerate(actions):
        for s1, p in successor_distribution(s, a, scenario):
            collisions = detect_collisions(s, a, s1, scenario)
            for uid, h in transition_harms(collisions, s1, scenario).items():
                values[i, col[uid]] += p * h
    valences = scenario.valences
    classes = (valences.passenger_class,) + tuple(u.valence_class for u in s.users)
    return ExpectedHarmMatrix(
        actions=actions,
        users=users,
        values=values,
        weights=tuple(valences.weight(c) for c in classes),
        classes=classes,
        involved=(True,) + tuple(u.involved for u in s.users),
    )

"""Valence-weighted reward for normal driving."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping

from .world import Action, Grid, WorldState, detect_collisions

if TYPE_CHECKING:
    from .scenario import Scenario


@dataclass(frozen=True)
class RewardParams:
    w_lat: float = 1.0
    w_dir: float = 1.0
    w_eta: float = 1.0
    c_st: float = -1.0
    w_v: float = -1.0
    c_col: float = -1000.0
    p_speed: float = -10.0
    p_sidewalk: float = -50.0
    p_wrongdir: float = -50.0
    r_prox: float = 10.0
    v_min_eta: float = 1.0
    gamma: float = 0.95


@dataclass(frozen=True)
class ValenceTable:
    """Valence weight per class, the class of the AV passenger, and the class hierarchy.

    ``ranking`` lists classes from the strongest claim to the weakest. When it
    is not given, classes are ranked by descending weight, ties kept in
    declaration order.
    """

    weights: Mapping[str, float]
    passenger_class: str
    ranking: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.ranking:
            order = sorted(self.weights, key=lambda c: -self.weights[c])
            object.__setattr__(self, "ranking", tuple(order))

    def weight(self, cls: str) -> float:
        return self.weights[cls]

    def rank(self, cls: str) -> int:
        """0 for the strongest claim."""
        return self.ranking.index(cls)

    def scaled(self, c: float) -> ValenceTable:
        return ValenceTable({k: v * c for k, v in self.weights.items()},
                            self.passenger_class, self.ranking)


def av_velocity(s: WorldState, grid: Grid, step_seconds: float) -> tuple[float, float]:
    v = s.av.speed * grid.cell_length / step_seconds
    return (v * math.sin(s.av.heading_dev), v * math.cos(s.av.heading_dev))


def performance_score(s: WorldState, s_next: WorldState, g: Grid, p: RewardParams,
                      step_seconds: float = 1.0) -> float:
    """Lateral offset, heading deviation and time-to-objective penalties at ``s_next``.

    Every term is non-positive and vanishes at the objective with aligned heading.
    """
    av = s_next.av
    q_lat = -abs(av.lane - g.objective_lane) * g.lane_width
    q_dir = -abs(av.heading_dev)
    px, py = g.position(av.lane, av.cell)
    ox, oy = g.position(g.objective_lane, g.objective_cell)
    dx, dy = ox - px, oy - py
    d_obj = math.hypot(dx, dy)
    if d_obj == 0.0:
        q_eta = 0.0
    else:
        vx, vy = av_velocity(s_next, g, step_seconds)
        v_proj = (vx * dx + vy * dy) / d_obj
        q_eta = -d_obj / max(v_proj, p.v_min_eta)
    return p.w_lat * q_lat + p.w_dir * q_dir + p.w_eta * q_eta


def closing_speed(s: WorldState, user_id: int, g: Grid, step_seconds: float = 1.0) -> float:
    """Projection of the AV velocity relative to the user onto the AV->user direction.

    Positive when the two are converging.
    """
    u = s.user(user_id)
    ax, ay = g.position(s.av.lane, s.av.cell)
    ux, uy = g.position(u.lane, u.cell)
    dx, dy = ux - ax, uy - ay
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return 0.0
    vx, vy = av_velocity(s, g, step_seconds)
    vy -= u.speed * g.cell_length / step_seconds
    return (vx * dx + vy * dy) / dist


def proximity_score(s: WorldState, s_next: WorldState, user_id: int, g: Grid,
                    p: RewardParams, step_seconds: float = 1.0) -> float:
    s.user(user_id)  # raises if the user is missing from either state
    u = s_next.user(user_id)
    ax, ay = g.position(s_next.av.lane, s_next.av.cell)
    ux, uy = g.position(u.lane, u.cell)
    if math.hypot(ux - ax, uy - ay) > p.r_prox:
        return 0.0
    delta = closing_speed(s_next, user_id, g, step_seconds) - closing_speed(s, user_id, g, step_seconds)
    return p.c_st + p.w_v * delta


def traffic_score(s_next: WorldState, g: Grid, p: RewardParams) -> float:
    av = s_next.av
    score = 0.0
    if av.speed > g.speed_limit:
        score += p.p_speed
    if av.lane in g.sidewalk_lanes:
        score += p.p_sidewalk
    if av.lane in g.oncoming_lanes and av.speed > 0:
        score += p.p_wrongdir
    return score


def consequence_score(s: WorldState, s_next: WorldState, scenario: Scenario) -> float:
    g, p, dt = scenario.grid, scenario.reward_params, scenario.step_seconds
    total = traffic_score(s_next, g, p)
    for u in s_next.users:
        total += scenario.valences.weight(u.valence_class) * proximity_score(s, s_next, u.id, g, p, dt)
    return total


def reward(s: WorldState, a: Action, s_next: WorldState, scenario: Scenario) -> float:
    """Per-transition reward; any collision replaces the shaped terms with valence-weighted costs."""
    collisions = detect_collisions(s, a, s_next, scenario)
    if collisions:
        c_col = scenario.reward_params.c_col
        return sum(scenario.valences.weight(s_next.user(c.user_id).valence_class) * c_col
                   for c in collisions)
    perf = performance_score(s, s_next, scenario.grid, scenario.reward_params, scenario.step_seconds)
    return perf + consequence_score(s, s_next, scenario)


def shaped_reward_bound(scenario: Scenario) -> float:
    """Upper bound on |performance + consequence| over all transitions of the scenario."""
    g, p, dt = scenario.grid, scenario.reward_params, scenario.step_seconds
    span_x = (g.n_lanes - 1) * g.lane_width
    span_y = (g.n_cells - 1) * g.cell_length
    perf = (abs(p.w_lat) * span_x + abs(p.w_dir) * g.lane_change_heading
            + abs(p.w_eta) * math.hypot(span_x, span_y) / p.v_min_eta)
    traffic = abs(p.p_speed) + abs(p.p_sidewalk) + abs(p.p_wrongdir)
    v = g.v_max * g.cell_length / dt
    prox_one = abs(p.c_st) + abs(p.w_v) * 4.0 * v
    prox = sum(scenario.valences.weight(u.valence_class) for u in scenario.initial.users) * prox_one
    return perf + traffic + prox

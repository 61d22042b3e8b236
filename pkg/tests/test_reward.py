import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_scenario
from evtdrive.reward import (
    RewardParams,
    ValenceTable,
    consequence_score,
    performance_score,
    proximity_score,
    reward,
    traffic_score,
)
from evtdrive.world import (
    Action,
    AvState,
    RoadUser,
    RoadUserKind,
    StateMismatchError,
    WorldState,
    detect_collisions,
    successor_distribution,
)

ONLY_LAT = RewardParams(w_lat=1.0, w_dir=0.0, w_eta=0.0)
ONLY_ETA = RewardParams(w_lat=0.0, w_dir=0.0, w_eta=1.0)


def _grid(**extra):
    text = "\n".join(f"{k} = {v}" for k, v in extra.items())
    return make_scenario(lanes=3, cells=20, v_max=4, grid_extra=text).grid


def _state(lane, cell, speed=0, heading=0.0, users=()):
    return WorldState(AvState(lane, cell, speed, heading), tuple(users))


def _user(uid, lane, cell, speed=0, cls="pedestrian"):
    return RoadUser(uid, RoadUserKind.PEDESTRIAN, cls, lane, cell, speed)


# --------------------------------------------------------------------------- performance

def test_performance_zero_at_objective_with_aligned_heading():
    g = _grid(objective_lane=1, objective_cell=12)
    s = _state(1, 12)
    assert performance_score(s, s, g, RewardParams()) == 0.0


def test_lateral_term_only():
    g = _grid(objective_lane=0)
    s = _state(2, 5)
    assert performance_score(s, s, g, ONLY_LAT) == pytest.approx(-7.0)


def test_eta_term_only():
    # 4 cells of 5 m to the objective, 1 cell per 1 s step ahead -> 20 m at 5 m/s.
    g = _grid(objective_lane=0, objective_cell=10)
    s = _state(0, 6, speed=1)
    assert performance_score(s, s, g, ONLY_ETA) == pytest.approx(-4.0)


def test_eta_floor_applies_when_stationary():
    g = _grid(objective_lane=0, objective_cell=10)
    s = _state(0, 6, speed=0)
    p = replace(ONLY_ETA, v_min_eta=2.0)
    assert performance_score(s, s, g, p) == pytest.approx(-20.0 / 2.0)


def test_heading_term_uses_absolute_deviation():
    g = _grid(objective_lane=1, objective_cell=10)
    s = _state(1, 10, heading=-0.2)
    p = RewardParams(w_lat=0.0, w_dir=2.0, w_eta=0.0)
    assert performance_score(s, s, g, p) == pytest.approx(-0.4)


@settings(max_examples=200)
@given(st.integers(0, 2), st.integers(0, 19), st.integers(0, 4), st.sampled_from([-0.2, 0.0, 0.2]))
def test_performance_never_positive(lane, cell, speed, heading):
    g = _grid(objective_lane=1, objective_cell=15)
    s = _state(lane, cell, speed, heading)
    assert performance_score(s, s, g, RewardParams()) <= 0.0


# --------------------------------------------------------------------------- proximity

def test_user_beyond_radius_scores_zero():
    g = _grid()
    s = _state(0, 0, users=[_user(1, 0, 5)])  # 25 m away
    assert proximity_score(s, s, 1, g, RewardParams(r_prox=10.0)) == 0.0


def test_closing_speed_rise_from_one_to_three():
    # AV directly behind a user moving away; closing speed = AV speed - user speed.
    g = _grid(cell_length=1.0)
    s = _state(0, 0, speed=2, users=[_user(1, 0, 3, speed=1)])
    s1 = _state(0, 2, speed=4, users=[_user(1, 0, 4, speed=1)])
    p = RewardParams(c_st=-1.0, w_v=-2.0, r_prox=10.0)
    assert proximity_score(s, s1, 1, g, p) == pytest.approx(-1.0 + (-2.0) * (3.0 - 1.0))


def test_stationary_pair_inside_radius_scores_c_st():
    g = _grid()
    s = _state(0, 0, users=[_user(1, 1, 1)])
    p = RewardParams(c_st=-1.5, w_v=-2.0)
    assert proximity_score(s, s, 1, g, p) == -1.5


def test_unknown_user_is_state_mismatch():
    g = _grid()
    s = _state(0, 0, users=[_user(1, 1, 1)])
    with pytest.raises(StateMismatchError):
        proximity_score(s, s, 7, g, RewardParams())


# --------------------------------------------------------------------------- traffic

def test_compliant_state_scores_zero():
    g = _grid(speed_limit=3, sidewalk_lanes=0, objective_lane=1)
    assert traffic_score(_state(1, 4, speed=3), g, RewardParams()) == 0.0


def test_sidewalk_penalty():
    g = _grid(sidewalk_lanes=0, objective_lane=1)
    assert traffic_score(_state(0, 4, speed=1), g, RewardParams(p_sidewalk=-50.0)) == -50.0


def test_speeding_on_sidewalk_adds_up():
    g = _grid(speed_limit=2, sidewalk_lanes=0, objective_lane=1)
    p = RewardParams(p_speed=-10.0, p_sidewalk=-50.0)
    assert traffic_score(_state(0, 4, speed=3), g, p) == -60.0


def test_wrong_direction_only_while_moving():
    g = _grid(oncoming_lanes=2)
    p = RewardParams(p_wrongdir=-50.0)
    assert traffic_score(_state(2, 4, speed=1), g, p) == -50.0
    assert traffic_score(_state(2, 4, speed=0), g, p) == 0.0


# --------------------------------------------------------------------------- consequence

def _scenario_with(users, weights, r_prox=100.0, **params):
    sc = make_scenario(lanes=3, cells=20, v_max=4, av=(1, 0, 0), users=users)
    valences = ValenceTable(weights, "passenger")
    return replace(sc, valences=valences, reward_params=RewardParams(r_prox=r_prox, **params))


def test_consequence_zero_without_users():
    sc = _scenario_with([], {"passenger": 1.0})
    s = sc.initial
    assert consequence_score(s, s, sc) == 0.0


def test_consequence_one_weighted_user():
    users = [{"kind": "pedestrian", "class": "adult", "lane": 0, "cell": 2}]
    sc = _scenario_with(users, {"passenger": 1.0, "adult": 2.0}, c_st=-5.0)
    s = sc.initial
    assert consequence_score(s, s, sc) == pytest.approx(-10.0)


def test_consequence_two_users_and_traffic():
    sc = make_scenario(
        lanes=3, cells=20, v_max=4, av=(2, 0, 0),
        grid_extra="sidewalk_lanes = 0\nobjective_lane = 1\ncell_length = 4",
        users=[{"kind": "pedestrian", "class": "adult", "lane": 1, "cell": 5},
               {"kind": "pedestrian", "class": "child", "lane": 1, "cell": 9}],
        sections="[valences]\npassenger = 1\nadult = 2\nchild = 1")
    g, p = sc.grid, sc.reward_params
    # AV parked on the sidewalk; user 1 starts walking toward it at 4 m/s, user 2 stands still.
    s = _state(0, 0, users=[_user(1, 0, 3, cls="adult"), _user(2, 1, 1, cls="child")])
    s1 = _state(0, 0, users=[_user(1, 0, 2, speed=-1, cls="adult"), _user(2, 1, 1, cls="child")])
    assert proximity_score(s, s1, 1, g, p) == pytest.approx(-5.0)
    assert proximity_score(s, s1, 2, g, p) == pytest.approx(-1.0)
    assert traffic_score(s1, g, p) == -50.0
    assert consequence_score(s, s1, sc) == pytest.approx(-61.0)


# --------------------------------------------------------------------------- reward

def _collision_scenario(weights):
    users = [{"kind": "pedestrian", "class": f"c{i}", "lane": 0, "cell": 2 + i}
             for i in range(len(weights))]
    sc = make_scenario(lanes=1, cells=12, v_max=4, av=(0, 0, 4), users=users)
    table = {"passenger": 1.0} | {f"c{i}": w for i, w in enumerate(weights)}
    return replace(sc, valences=ValenceTable(table, "passenger"),
                   reward_params=RewardParams(c_col=-1000.0))


def _next(sc, a=Action.MAINTAIN):
    (s1, _), = successor_distribution(sc.initial, a, sc)
    return s1


def test_collision_reward_single_user():
    sc = _collision_scenario([3.0])
    s1 = _next(sc)
    assert reward(sc.initial, Action.MAINTAIN, s1, sc) == -3000.0


def test_collision_reward_simultaneous_matches_per_user_sum():
    sc = _collision_scenario([3.0, 1.0])
    s = sc.initial
    s1 = _next(sc)
    hits = detect_collisions(s, Action.MAINTAIN, s1, sc)
    assert len(hits) == 2
    oracle = sum(sc.valences.weight(s1.user(c.user_id).valence_class) * sc.reward_params.c_col
                 for c in hits)
    assert reward(s, Action.MAINTAIN, s1, sc) == oracle == -4000.0


def test_no_collision_reward_is_performance_plus_consequence():
    sc = make_scenario(lanes=2, cells=12, v_max=3, av=(0, 0, 2), users=[
        {"kind": "cyclist", "lane": 1, "cell": 3, "speed": 1}])
    s = sc.initial
    s1 = _next(sc, Action.ACCELERATE)
    assert not detect_collisions(s, Action.ACCELERATE, s1, sc)
    expected = (performance_score(s, s1, sc.grid, sc.reward_params, sc.step_seconds)
                + consequence_score(s, s1, sc))
    assert reward(s, Action.ACCELERATE, s1, sc) == expected


def test_valence_ranking_defaults_to_descending_weight():
    table = ValenceTable({"passenger": 1.0, "pedestrian": 3.0, "cyclist": 2.0}, "passenger")
    assert table.ranking == ("pedestrian", "cyclist", "passenger")
    assert table.rank("pedestrian") == 0
    assert math.isclose(table.scaled(10.0).weight("cyclist"), 20.0)

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_scenario
from evtdrive.harm import (
    DEFAULT_MASSES,
    ImpactModel,
    VulnerabilityTable,
    expected_harm,
    expected_harm_matrix,
    harm,
    post_collision_delta_v,
)
from evtdrive.scenario import load_scenario
from evtdrive.world import (
    ACTIONS,
    PASSENGER_ID,
    Action,
    Collision,
    Configuration,
    RoadUserKind,
    apply_maneuver,
    build_state_space,
    detect_collisions,
    is_dilemma,
    next_av,
    successor_distribution,
)

AV = RoadUserKind.AV_PASSENGER
PED = RoadUserKind.PEDESTRIAN


def _dv(closing, kinds, masses=None, e=0.0):
    impact = ImpactModel(masses or DEFAULT_MASSES, e)
    return post_collision_delta_v(Collision(1, closing, Configuration.FRONTAL), impact, kinds)


def test_zero_closing_speed_means_zero_delta_v():
    assert _dv(0.0, (AV, PED)) == (0.0, 0.0)


def test_equal_masses_split_evenly():
    masses = {AV: 1000.0, RoadUserKind.CAR_OCCUPANT: 1000.0}
    assert _dv(10.0, (AV, RoadUserKind.CAR_OCCUPANT), masses) == pytest.approx((5.0, 5.0))


def test_car_against_pedestrian():
    dv_car, dv_ped = _dv(10.0, (AV, PED))
    assert dv_ped == pytest.approx(1500 / 1575 * 10)
    assert dv_car == pytest.approx(75 / 1575 * 10)
    assert dv_ped == pytest.approx(9.52, abs=5e-3)
    assert dv_car == pytest.approx(0.476, abs=5e-4)


def test_restitution_scales_exchange():
    plastic = _dv(10.0, (AV, PED))
    elastic = _dv(10.0, (AV, PED), e=1.0)
    assert elastic == pytest.approx(tuple(2 * x for x in plastic))


@given(st.floats(0.0, 60.0), st.floats(1.0, 20000.0), st.floats(1.0, 20000.0))
def test_momentum_is_conserved(closing, m_a, m_b):
    masses = {AV: m_a, PED: m_b}
    dv_a, dv_b = _dv(closing, (AV, PED), masses)
    assert m_a * dv_a == pytest.approx(m_b * dv_b)
    assert dv_a + dv_b == pytest.approx(closing)


# --------------------------------------------------------------------------- per-transition harm

def _ped_scenario(vul_scale=1.0, **kw):
    kw.setdefault("users", [{"kind": "pedestrian", "lane": 0, "cell": 1}])
    sc = make_scenario(lanes=2, cells=10, v_max=4, av=(0, 0, 2), **kw)
    return replace(sc, vulnerability=sc.vulnerability.scaled(vul_scale))


def test_no_collision_no_harm():
    sc = _ped_scenario()
    (s1, _), = successor_distribution(sc.initial, Action.HARD_BRAKE, sc)
    assert not detect_collisions(sc.initial, Action.HARD_BRAKE, s1, sc)
    assert harm(sc.initial, Action.HARD_BRAKE, s1, 1, sc) == 0.0
    assert harm(sc.initial, Action.HARD_BRAKE, s1, PASSENGER_ID, sc) == 0.0


def test_harm_is_vulnerability_times_delta_v():
    sc = _ped_scenario()
    entries = dict(sc.vulnerability.entries)
    entries[(PED, Configuration.FRONTAL)] = 0.05
    sc = replace(sc, vulnerability=VulnerabilityTable(entries))
    (s1, _), = successor_distribution(sc.initial, Action.MAINTAIN, sc)
    (c,) = detect_collisions(sc.initial, Action.MAINTAIN, s1, sc)
    assert c.closing_speed == pytest.approx(10.0)
    assert harm(sc.initial, Action.MAINTAIN, s1, 1, sc) == pytest.approx(0.05 * 1500 / 1575 * 10)
    assert harm(sc.initial, Action.MAINTAIN, s1, 1, sc) == pytest.approx(0.476, abs=5e-4)


def test_doubling_vulnerability_doubles_harm():
    base, double = _ped_scenario(), _ped_scenario(vul_scale=2.0)
    (s1, _), = successor_distribution(base.initial, Action.MAINTAIN, base)
    for k in (1, PASSENGER_ID):
        assert harm(base.initial, Action.MAINTAIN, s1, k, double) == \
            2.0 * harm(base.initial, Action.MAINTAIN, s1, k, base)


def test_passenger_harm_accumulates_over_collisions():
    users = [{"kind": "pedestrian", "lane": 0, "cell": 1}, {"kind": "pedestrian", "lane": 0, "cell": 2}]
    sc = make_scenario(lanes=1, cells=10, v_max=4, av=(0, 0, 3), users=users)
    (s1, _), = successor_distribution(sc.initial, Action.MAINTAIN, sc)
    hits = detect_collisions(sc.initial, Action.MAINTAIN, s1, sc)
    assert len(hits) == 2
    impact = sc.impact
    expected = sum(sc.vulnerability.c_vul(AV, c.configuration)
                   * post_collision_delta_v(c, impact, (AV, PED))[0] for c in hits)
    assert harm(sc.initial, Action.MAINTAIN, s1, PASSENGER_ID, sc) == pytest.approx(expected)


# --------------------------------------------------------------------------- expected harm

def test_expected_harm_two_successors():
    sc = _ped_scenario(users=[{"kind": "pedestrian", "lane": 0, "cell": 2,
                               "behavior": "keep:0.7, shift_left:0.3"}])
    succ = dict(successor_distribution(sc.initial, Action.MAINTAIN, sc))
    harms = {s1: harm(sc.initial, Action.MAINTAIN, s1, 1, sc) for s1 in succ}
    assert sorted(succ.values()) == pytest.approx([0.3, 0.7])
    hit = [s1 for s1 in succ if harms[s1] > 0]
    assert len(hit) == 1 and succ[hit[0]] == pytest.approx(0.7)
    assert expected_harm(sc.initial, Action.MAINTAIN, 1, sc) == pytest.approx(0.7 * harms[hit[0]])


def test_deterministic_successor_expected_equals_harm():
    sc = _ped_scenario()
    (s1, _), = successor_distribution(sc.initial, Action.MAINTAIN, sc)
    assert expected_harm(sc.initial, Action.MAINTAIN, 1, sc) == harm(sc.initial, Action.MAINTAIN, s1, 1, sc)


def test_three_successors_match_manual_enumeration():
    sc = make_scenario(lanes=2, cells=12, v_max=4, av=(0, 0, 3), users=[
        {"kind": "cyclist", "lane": 0, "cell": 4, "speed": -1,
         "behavior": "keep:0.5, stop:0.3, shift_left:0.2"}])
    s, a = sc.initial, Action.MAINTAIN
    g = sc.grid
    total = 0.0
    for m, p in sc.behavior.for_user(1):
        u1 = apply_maneuver(s.user(1), m, g)
        s1 = replace(s, av=next_av(s.av, a, g), users=(u1,), step=1)
        s1 = replace(s1, crashed=bool(detect_collisions(s, a, s1, sc)))
        total += p * harm(s, a, s1, 1, sc)
    assert len(successor_distribution(s, a, sc)) == 3
    assert expected_harm(s, a, 1, sc) == pytest.approx(total)


# --------------------------------------------------------------------------- matrices

def test_single_action_single_user_shape():
    sc = _ped_scenario()
    m = expected_harm_matrix(sc.initial, [Action.MAINTAIN], sc)
    assert m.values.shape == (1, 2)
    assert m.users == (PASSENGER_ID, 1)
    assert m.classes[0] == sc.valences.passenger_class


def test_no_collisions_give_zero_matrix():
    sc = make_scenario(lanes=2, cells=10, av=(0, 0, 1), users=[{"kind": "pedestrian", "lane": 1, "cell": 8}])
    m = expected_harm_matrix(sc.initial, ACTIONS, sc)
    assert not m.values.any()


def test_boxed_in_matrix_matches_cellwise_recomputation():
    sc = load_scenario("boxed_in")
    space = build_state_space(sc)
    checked = 0
    for s in space:
        if not is_dilemma(s, sc):
            continue
        m = expected_harm_matrix(s, ACTIONS, sc)
        for i, a in enumerate(m.actions):
            for j, uid in enumerate(m.users):
                assert m.values[i, j] == pytest.approx(expected_harm(s, a, uid, sc), rel=1e-12, abs=1e-15)
        checked += 1
        if checked == 20:
            break
    assert checked == 20


def test_matrix_is_bit_identical_across_calls():
    sc = load_scenario("two_user")
    a = expected_harm_matrix(sc.initial, ACTIONS, sc)
    b = expected_harm_matrix(sc.initial, ACTIONS, sc)
    assert np.array_equal(a.values, b.values)
    assert a.values.tobytes() == b.values.tobytes()


def test_harm_values_nonnegative_on_shipped_scenarios():
    for name in ("boxed_in", "two_user", "sidewalk"):
        sc = load_scenario(name)
        m = expected_harm_matrix(sc.initial, ACTIONS, sc)
        assert (m.values >= 0).all()

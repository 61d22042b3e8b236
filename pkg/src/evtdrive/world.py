"""Discrete lane-grid driving world.

Lanes are indexed from the right (lane 0) to the left; cells grow in the
direction of travel of the AV. Positions map to metric coordinates as
``(lane * lane_width, cell * cell_length)``.
"""

from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator, Mapping

if TYPE_CHECKING:
    from .scenario import Scenario

# Reserved column id for the AV passenger in harm matrices; road users use ids >= 1.
PASSENGER_ID = 0
SUBSTEPS = 10
DEFAULT_STATE_LIMIT = 5_000_000


class RoadUserKind(str, enum.Enum):
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    MOTORCYCLIST = "motorcyclist"
    CAR_OCCUPANT = "car_occupant"
    TRUCK_OCCUPANT = "truck_occupant"
    AV_PASSENGER = "av_passenger"


class Action(str, enum.Enum):
    MAINTAIN = "maintain"
    ACCELERATE = "accelerate"
    DECELERATE = "decelerate"
    HARD_BRAKE = "hard_brake"
    LANE_LEFT = "lane_left"
    LANE_RIGHT = "lane_right"


# Canonical order, used for every tie-break.
ACTIONS: tuple[Action, ...] = tuple(Action)
ACTION_INDEX = {a: i for i, a in enumerate(ACTIONS)}


class Maneuver(str, enum.Enum):
    KEEP = "keep"
    SLOW = "slow"
    FAST = "fast"
    SHIFT_LEFT = "shift_left"
    SHIFT_RIGHT = "shift_right"
    STOP = "stop"


class Configuration(str, enum.Enum):
    """Impact configuration, seen from the AV."""

    FRONTAL = "frontal"
    SIDE = "side"
    REAR = "rear"


class StateMismatchError(LookupError):
    """A user id was requested that the state does not contain."""


class StateSpaceTooLarge(RuntimeError):
    def __init__(self, count: int, limit: int):
        super().__init__(f"state space exceeds limit: {count} states > {limit}")
        self.count = count
        self.limit = limit


@dataclass(frozen=True, slots=True)
class RoadUser:
    id: int
    kind: RoadUserKind
    valence_class: str
    lane: int
    cell: int
    speed: int = 0
    involved: bool = True


@dataclass(frozen=True, slots=True)
class AvState:
    lane: int
    cell: int
    speed: int = 0
    heading_dev: float = 0.0


@dataclass(frozen=True, slots=True)
class WorldState:
    av: AvState
    users: tuple[RoadUser, ...] = ()
    step: int = 0
    crashed: bool = False

    def __post_init__(self):
        ids = [u.id for u in self.users]
        if ids != sorted(ids):
            object.__setattr__(self, "users", tuple(sorted(self.users, key=lambda u: u.id)))

    def user(self, user_id: int) -> RoadUser:
        for u in self.users:
            if u.id == user_id:
                return u
        raise StateMismatchError(f"no road user with id {user_id} in state")

    def describe(self) -> str:
        av = self.av
        parts = [f"t={self.step} av=({av.lane},{av.cell}) v={av.speed}"]
        if av.heading_dev:
            parts.append(f"dth={av.heading_dev:+g}")
        for u in self.users:
            parts.append(f"u{u.id}=({u.lane},{u.cell}) v={u.speed}")
        if self.crashed:
            parts.append("crashed")
        return " ".join(parts)


@dataclass(frozen=True)
class Grid:
    n_lanes: int
    n_cells: int
    speed_limit: int
    v_max: int
    objective_lane: int
    objective_cell: int
    lane_width: float = 3.5
    cell_length: float = 5.0
    lane_change_heading: float = 0.2
    sidewalk_lanes: frozenset[int] = frozenset()
    oncoming_lanes: frozenset[int] = frozenset()

    def position(self, lane: float, cell: float) -> tuple[float, float]:
        return (lane * self.lane_width, cell * self.cell_length)

    def lane_ok(self, lane: int) -> bool:
        return 0 <= lane < self.n_lanes

    def cell_ok(self, cell: int) -> bool:
        return 0 <= cell < self.n_cells


@dataclass(frozen=True)
class BehaviorModel:
    """Per-user maneuver distributions; users without an entry always keep."""

    maneuvers: Mapping[int, tuple[tuple[Maneuver, float], ...]] = field(default_factory=dict)

    def for_user(self, user_id: int) -> tuple[tuple[Maneuver, float], ...]:
        return self.maneuvers.get(user_id, ((Maneuver.KEEP, 1.0),))


@dataclass(frozen=True, slots=True)
class Collision:
    user_id: int
    closing_speed: float
    configuration: Configuration


@dataclass(frozen=True)
class StateSpace:
    """Reachable states; ``successors[i][k]`` lists ``(j, p)`` for action ``ACTIONS[k]``.

    Terminal states have no successor entries.
    """

    states: tuple[WorldState, ...]
    index: Mapping[WorldState, int]
    successors: Mapping[int, tuple[tuple[tuple[int, float], ...], ...]] = field(
        default_factory=dict, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i: int) -> WorldState:
        return self.states[i]

    def __contains__(self, s: object) -> bool:
        return s in self.index

    def __iter__(self) -> Iterator[WorldState]:
        return iter(self.states)

    def index_of(self, s: WorldState) -> int:
        try:
            return self.index[s]
        except KeyError:
            raise KeyError(f"state not in state space: {s.describe()}") from None


def _clamp(x: int, lo: int, hi: int) -> int:
    return lo if x < lo else hi if x > hi else x


def _sign(x: int) -> int:
    return (x > 0) - (x < 0)


def next_av(av: AvState, a: Action, grid: Grid) -> AvState:
    speed, lane, heading = av.speed, av.lane, 0.0
    if a is Action.ACCELERATE:
        speed = min(speed + 1, grid.v_max)
    elif a is Action.DECELERATE:
        speed = max(speed - 1, 0)
    elif a is Action.HARD_BRAKE:
        speed = max(speed - 2, 0)
    elif a is Action.LANE_LEFT:
        lane = min(lane + 1, grid.n_lanes - 1)
        if lane != av.lane:
            heading = grid.lane_change_heading
    elif a is Action.LANE_RIGHT:
        lane = max(lane - 1, 0)
        if lane != av.lane:
            heading = -grid.lane_change_heading
    cell = min(av.cell + speed, grid.n_cells - 1)
    return AvState(lane, cell, speed, heading)


def apply_maneuver(u: RoadUser, m: Maneuver, grid: Grid) -> RoadUser:
    speed, lane = u.speed, u.lane
    if m is Maneuver.SLOW:
        speed -= _sign(speed)
    elif m is Maneuver.FAST:
        direction = _sign(speed) or (-1 if lane in grid.oncoming_lanes else 1)
        speed = _clamp(speed + direction, -grid.v_max, grid.v_max)
    elif m is Maneuver.SHIFT_LEFT:
        lane = min(lane + 1, grid.n_lanes - 1)
    elif m is Maneuver.SHIFT_RIGHT:
        lane = max(lane - 1, 0)
    elif m is Maneuver.STOP:
        speed = 0
    cell = _clamp(u.cell + speed, 0, grid.n_cells - 1)
    # On the sidewalk a user is never party to the interaction; stepping off it makes them one.
    if lane in grid.sidewalk_lanes:
        involved = False
    elif u.lane in grid.sidewalk_lanes:
        involved = True
    else:
        involved = u.involved
    return RoadUser(u.id, u.kind, u.valence_class, lane, cell, speed, involved)


def paths_overlap(a0: tuple[int, int], a1: tuple[int, int],
                  b0: tuple[int, int], b1: tuple[int, int],
                  substeps: int = SUBSTEPS) -> bool:
    """Swept test: do two bodies moving linearly overlap at any sub-step in (0, 1]?

    Positions are (lane, cell). Bodies overlap when their centres are less than one cell
    apart along the road and less than half a lane apart across it, so a lane-changing
    body leaves its origin lane at mid-step. Arithmetic is kept in integers scaled by
    ``substeps``.
    """
    dl0, dc0 = a0[0] - b0[0], a0[1] - b0[1]
    dl1, dc1 = a1[0] - b1[0], a1[1] - b1[1]
    # Relative motion is linear, so staying on one side of a slab means no overlap.
    if (dc0 >= 1 and dc1 >= 1) or (dc0 <= -1 and dc1 <= -1):
        return False
    if (2 * dl0 >= 1 and 2 * dl1 >= 1) or (2 * dl0 <= -1 and 2 * dl1 <= -1):
        return False
    n = substeps
    for k in range(1, n + 1):
        if 2 * abs(dl0 * (n - k) + dl1 * k) < n and abs(dc0 * (n - k) + dc1 * k) < n:
            return True
    return False


def _collision_with(av0: AvState, av1: AvState, u0: RoadUser, u1: RoadUser,
                    grid: Grid, step_seconds: float) -> Collision | None:
    if not paths_overlap((av0.lane, av0.cell), (av1.lane, av1.cell),
                         (u0.lane, u0.cell), (u1.lane, u1.cell)):
        return None
    lateral = ((av1.lane - av0.lane) - (u1.lane - u0.lane)) * grid.lane_width
    longitudinal = ((av1.cell - av0.cell) - (u1.cell - u0.cell)) * grid.cell_length
    closing = (lateral ** 2 + longitudinal ** 2) ** 0.5 / step_seconds
    changed_lane = av0.lane != av1.lane or u0.lane != u1.lane
    if changed_lane and av0.lane != u0.lane:
        config = Configuration.SIDE
    elif u0.cell >= av0.cell:
        config = Configuration.FRONTAL
    else:
        config = Configuration.REAR
    return Collision(u1.id, closing, config)


def detect_collisions(s: WorldState, a: Action, s_next: WorldState,
                      scenario: Scenario) -> list[Collision]:
    """Collisions between the AV and each road user over the step ``s -> s_next``."""
    grid = scenario.grid
    before = {u.id: u for u in s.users}
    found = []
    for u1 in s_next.users:
        u0 = before.get(u1.id)
        if u0 is None:
            continue
        c = _collision_with(s.av, s_next.av, u0, u1, grid, scenario.step_seconds)
        if c is not None:
            found.append(c)
    return found


def _user_outcomes(u: RoadUser, behavior: BehaviorModel, grid: Grid) -> list[tuple[RoadUser, float]]:
    merged: dict[RoadUser, float] = {}
    for m, p in behavior.for_user(u.id):
        if p <= 0.0:
            continue
        nu = apply_maneuver(u, m, grid)
        merged[nu] = merged.get(nu, 0.0) + p
    return list(merged.items())


def successor_distribution(s: WorldState, a: Action, scenario: Scenario) -> list[tuple[WorldState, float]]:
    """Kinematic successors of ``(s, a)`` with their probabilities.

    The AV moves deterministically; each road user samples a maneuver
    independently. Successors that coincide are merged.
    """
    grid = scenario.grid
    av1 = next_av(s.av, a, grid)
    per_user = [_user_outcomes(u, scenario.behavior, grid) for u in s.users]
    out: dict[WorldState, float] = {}
    for combo in itertools.product(*per_user):
        p = 1.0
        users = []
        crashed = False
        for (u0, (u1, pu)) in zip(s.users, combo):
            p *= pu
            users.append(u1)
            if not crashed and _collision_with(s.av, av1, u0, u1, grid, scenario.step_seconds):
                crashed = True
        nxt = WorldState(av1, tuple(users), s.step + 1, crashed)
        out[nxt] = out.get(nxt, 0.0) + p
    return list(out.items())


def at_objective(s: WorldState, grid: Grid) -> bool:
    return s.av.lane == grid.objective_lane and s.av.cell >= grid.objective_cell


def is_terminal(s: WorldState, scenario: Scenario) -> bool:
    """Absorbing states: post-collision, objective reached, or horizon exhausted."""
    return s.crashed or s.step >= scenario.horizon or at_objective(s, scenario.grid)


def collision_probability(s: WorldState, a: Action, scenario: Scenario) -> float:
    return sum(p for s1, p in successor_distribution(s, a, scenario)
               if detect_collisions(s, a, s1, scenario))


def colliding_action_set(s: WorldState, scenario: Scenario) -> frozenset[Action]:
    if is_terminal(s, scenario):
        return frozenset()
    floor = scenario.collision_prob_floor
    return frozenset(a for a in ACTIONS if collision_probability(s, a, scenario) > floor)


def is_dilemma(s: WorldState, scenario: Scenario) -> bool:
    return len(colliding_action_set(s, scenario)) == len(ACTIONS)


def build_state_space(scenario: Scenario, limit: int | None = None) -> StateSpace:
    """Breadth-first enumeration of every state reachable within the horizon.

    Terminal states are kept but not expanded. Index 0 is the initial state.
    """
    limit = scenario.state_limit if limit is None else limit
    start = scenario.initial
    index: dict[WorldState, int] = {start: 0}
    states = [start]
    successors = {}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        if is_terminal(s, scenario):
            continue
        per_action = []
        for a in ACTIONS:
            row = []
            for s1, p in successor_distribution(s, a, scenario):
                j = index.get(s1)
                if j is None:
                    j = index[s1] = len(states)
                    states.append(s1)
                    if len(states) > limit:
                        raise StateSpaceTooLarge(len(states), limit)
                    queue.append(s1)
                row.append((j, p))
            per_action.append(tuple(row))
        successors[index[s]] = tuple(per_action)
    return StateSpace(tuple(states), index, successors)


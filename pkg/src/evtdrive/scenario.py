"""Scenario files: a sectioned ``key = value`` format, validated on load.

See ``docs/scenario_format.md`` for the field-by-field reference.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .ethics import ContractarianConfig
from .harm import DEFAULT_MASSES, ImpactModel, VulnerabilityTable
from .reward import RewardParams, ValenceTable, shaped_reward_bound
from .solver import SolveConfig
from .world import (
    DEFAULT_STATE_LIMIT,
    PASSENGER_ID,
    AvState,
    BehaviorModel,
    Configuration,
    Grid,
    Maneuver,
    RoadUser,
    RoadUserKind,
    WorldState,
)

FORMAT_VERSION = 1
SECTIONS = ("grid", "av", "user", "reward", "valences", "vulnerability", "impact",
            "contractarian", "solve")


class ScenarioError(ValueError):
    """All problems found in one pass over a scenario file."""

    def __init__(self, issues: list[tuple[int | None, str]], source: str = "<scenario>"):
        self.issues = sorted(issues, key=lambda it: (it[0] or 0, it[1]))
        self.source = source
        lines = [f"{source}:{ln}: {msg}" if ln else f"{source}: {msg}" for ln, msg in self.issues]
        super().__init__("\n".join(lines))


class ScenarioWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Scenario:
    grid: Grid
    initial: WorldState
    behavior: BehaviorModel
    reward_params: RewardParams
    valences: ValenceTable
    vulnerability: VulnerabilityTable
    impact: ImpactModel
    contractarian: ContractarianConfig
    horizon: int
    step_seconds: float = 1.0
    epsilon: float = 1e-9
    max_sweeps: int = 10_000
    collision_prob_floor: float = 0.0
    state_limit: int = DEFAULT_STATE_LIMIT
    name: str = "scenario"

    def solve_config(self, **overrides) -> SolveConfig:
        kw = dict(epsilon=self.epsilon, max_sweeps=self.max_sweeps, gamma=self.reward_params.gamma)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return SolveConfig(**kw)

    def kinds(self) -> list[RoadUserKind]:
        seen = [RoadUserKind.AV_PASSENGER]
        for u in self.initial.users:
            if u.kind not in seen:
                seen.append(u.kind)
        return seen


# --------------------------------------------------------------------------- parsing

_SECTION_RE = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_]*)(?:\.(\d+))?\]$")
_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


@dataclass
class _Section:
    name: str
    line: int
    entries: dict[str, tuple[str, int]] = field(default_factory=dict)


class _Reader:
    """Typed access to one section's entries; problems go to the shared issue list."""

    def __init__(self, sec: _Section, issues: list):
        self.sec = sec
        self.issues = issues
        self.used: set[str] = set()

    def _err(self, line, msg):
        self.issues.append((line, f"[{self.sec.name}] {msg}"))

    def raw(self, key: str):
        self.used.add(key)
        return self.sec.entries.get(key)

    def get(self, key: str, conv, default=..., check=None, why=""):
        item = self.raw(key)
        if item is None:
            if default is ...:
                self._err(self.sec.line, f"missing required key '{key}'")
                return None
            return default
        text, line = item
        try:
            value = conv(text)
        except ValueError as exc:
            self._err(line, f"{key}: {exc}")
            return default if default is not ... else None
        if check is not None and not check(value):
            self._err(line, f"{key} = {text}: {why}")
        return value

    def leftover(self, allowed_prefixes=()):
        for key, (_, line) in self.sec.entries.items():
            if key in self.used or any(key.startswith(p) for p in allowed_prefixes):
                continue
            self._err(line, f"unknown key '{key}'")


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"expected an integer, got '{text}'") from None


def _float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"expected a number, got '{text}'") from None
    if math.isnan(value):
        raise ValueError("NaN is not allowed")
    return value


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got '{text}'")


def _int_set(text: str) -> frozenset[int]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    return frozenset(_int(t) for t in items)


def _names(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _enum(cls):
    def conv(text: str):
        try:
            return cls(text)
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ValueError(f"'{text}' is not one of: {choices}") from None
    return conv


def _behavior(text: str) -> tuple[tuple[Maneuver, float], ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, prob = part.partition(":")
        if not sep:
            raise ValueError(f"expected maneuver:probability, got '{part}'")
        m = _enum(Maneuver)(name.strip())
        if any(m is prev for prev, _ in out):
            raise ValueError(f"maneuver '{m.value}' listed twice")
        out.append((m, _float(prob.strip())))
    if not out:
        raise ValueError("empty behavior")
    return tuple(out)


def _tokenize(text: str, issues: list) -> tuple[dict[str, tuple[str, int]], list[_Section]]:
    top: dict[str, tuple[str, int]] = {}
    sections: list[_Section] = []
    current: _Section | None = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            m = _SECTION_RE.match(line)
            if not m:
                col = raw.index("[") + 1
                issues.append((ln, f"syntax error at column {col}: malformed section header '{line}'"))
                current = _Section("?", ln)
                continue
            base, num = m.group(1), m.group(2)
            if base not in SECTIONS or (base == "user") != (num is not None):
                issues.append((ln, f"unknown section '[{line[1:-1]}]'"))
                current = _Section("?", ln)
                continue
            name = f"{base}.{int(num)}" if num is not None else base
            if any(s.name == name for s in sections):
                what = f"duplicate user id {num}" if base == "user" else f"duplicate section [{name}]"
                issues.append((ln, what))
                current = _Section("?", ln)
                continue
            current = _Section(name, ln)
            sections.append(current)
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            col = len(raw) - len(raw.lstrip()) + 1
            issues.append((ln, f"syntax error at column {col}: expected 'key = value'"))
            continue
        if not _KEY_RE.match(key):
            col = raw.index(key[:1]) + 1 if key else raw.index("=") + 1
            issues.append((ln, f"syntax error at column {col}: invalid key '{key}'"))
            continue
        target = top if current is None else current.entries
        if key in target:
            issues.append((ln, f"duplicate key '{key}'"))
            continue
        target[key] = (value, ln)
    return top, sections


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    """Parse and validate a scenario; raises :class:`ScenarioError` listing every problem."""
    issues: list[tuple[int | None, str]] = []
    top, sections = _tokenize(text, issues)
    by_name = {s.name: s for s in sections}

    version, vline = top.pop("format_version", (str(FORMAT_VERSION), None))
    if version != str(FORMAT_VERSION):
        issues.append((vline, f"unsupported format_version {version!r} (expected {FORMAT_VERSION})"))
    name = top.pop("name", ("scenario", None))[0]
    for key, (_, line) in top.items():
        issues.append((line, f"unknown top-level key '{key}'"))

    def reader(sec_name: str, required: bool = True) -> _Reader:
        sec = by_name.get(sec_name)
        if sec is None:
            if required:
                issues.append((None, f"missing section [{sec_name}]"))
            sec = _Section(sec_name, 0)
        return _Reader(sec, issues)

    nonneg = (lambda v: v >= 0, "must be >= 0")
    pos = (lambda v: v > 0, "must be > 0")
    nonpos = (lambda v: v <= 0, "must be <= 0")

    # grid
    r = reader("grid")
    n_lanes = r.get("lanes", _int, ..., *pos) or 1
    n_cells = r.get("cells", _int, ..., *pos) or 1
    v_max = r.get("v_max", _int, ..., *nonneg) or 0
    speed_limit = r.get("speed_limit", _int, v_max, *nonneg)
    lane_ok = lambda v: 0 <= v < n_lanes
    grid_kw = dict(
        lane_width=r.get("lane_width", _float, 3.5, *pos),
        cell_length=r.get("cell_length", _float, 5.0, *pos),
        lane_change_heading=r.get("lane_change_heading", _float, 0.2, *nonneg),
        sidewalk_lanes=r.get("sidewalk_lanes", _int_set, frozenset(),
                             lambda s: all(lane_ok(x) for x in s), "lane out of range"),
        oncoming_lanes=r.get("oncoming_lanes", _int_set, frozenset(),
                             lambda s: all(lane_ok(x) for x in s), "lane out of range"),
    )
    objective_lane = r.get("objective_lane", _int, 0, lane_ok, "lane out of range")
    objective_cell = r.get("objective_cell", _int, n_cells - 1,
                           lambda v: 0 <= v < n_cells, "cell out of range")
    if speed_limit > v_max:
        issues.append((r.sec.line, "[grid] speed_limit must be <= v_max"))
    if objective_lane in grid_kw["sidewalk_lanes"]:
        issues.append((r.sec.line, "[grid] objective_lane is a sidewalk lane"))
    r.leftover()
    grid = Grid(n_lanes=n_lanes, n_cells=n_cells, speed_limit=speed_limit, v_max=v_max,
                objective_lane=objective_lane, objective_cell=objective_cell, **grid_kw)

    # av
    r = reader("av")
    av = AvState(
        lane=r.get("lane", _int, ..., lane_ok, "lane out of range") or 0,
        cell=r.get("cell", _int, ..., lambda v: 0 <= v < grid.n_cells, "cell out of range") or 0,
        speed=r.get("speed", _int, 0, lambda v: 0 <= v <= grid.v_max, "speed must lie in [0, v_max]"),
    )
    r.leftover()

    # valences
    r = reader("valences")
    passenger_class = r.get("passenger_class", str, "passenger")
    ranking = r.get("ranking", _names, ())
    weights: dict[str, float] = {}
    for key, (text, line) in r.sec.entries.items():
        if key in ("passenger_class", "ranking"):
            continue
        r.used.add(key)
        try:
            w = _float(text)
        except ValueError as exc:
            issues.append((line, f"[valences] {key}: {exc}"))
            continue
        if not w > 0:
            issues.append((line, f"[valences] {key} = {text}: valence weights must be > 0"))
        weights[key] = w
    vline = r.sec.line
    if passenger_class not in weights:
        issues.append((vline, f"[valences] passenger_class '{passenger_class}' has no weight"))
    if ranking and sorted(ranking) != sorted(weights):
        issues.append((vline, "[valences] ranking must list every valence class exactly once"))
    valences = ValenceTable(weights, passenger_class, tuple(ranking))

    # users
    users: list[RoadUser] = []
    maneuvers: dict[int, tuple[tuple[Maneuver, float], ...]] = {}
    for sec in sections:
        if not sec.name.startswith("user."):
            continue
        uid = int(sec.name.split(".", 1)[1])
        r = _Reader(sec, issues)
        if uid == PASSENGER_ID:
            r._err(sec.line, f"user id {PASSENGER_ID} is reserved for the AV passenger")
        kind = r.get("kind", _enum(RoadUserKind), ...) or RoadUserKind.PEDESTRIAN
        if kind is RoadUserKind.AV_PASSENGER:
            r._err(sec.line, "kind av_passenger is reserved for the AV occupant")
        cls = r.get("class", str, kind.value)
        if weights and cls not in weights:
            r._err(sec.line, f"valence class '{cls}' not in [valences]")
        lane = r.get("lane", _int, ..., lane_ok, "lane out of range") or 0
        cell = r.get("cell", _int, ..., lambda v: 0 <= v < grid.n_cells, "cell out of range") or 0
        speed = r.get("speed", _int, 0, lambda v: abs(v) <= grid.v_max, "|speed| must be <= v_max")
        on_sidewalk = lane in grid.sidewalk_lanes
        involved = r.get("involved", _bool, not on_sidewalk)
        if on_sidewalk and involved:
            r._err(sec.line, "users on a sidewalk lane cannot be involved")
        beh = r.get("behavior", _behavior, ((Maneuver.KEEP, 1.0),))
        if beh:
            if any(p < 0 for _, p in beh):
                r._err(r.sec.entries.get("behavior", ("", sec.line))[1],
                       f"user {uid}: behavior probabilities must be >= 0")
            total = sum(p for _, p in beh)
            if abs(total - 1.0) > 1e-9:
                r._err(r.sec.entries.get("behavior", ("", sec.line))[1],
                       f"user {uid}: behavior probabilities sum to {total:g}, not 1")
            maneuvers[uid] = beh
        if (lane, cell) == (av.lane, av.cell):
            r._err(sec.line, f"user {uid} starts in the AV's cell")
        r.leftover()
        users.append(RoadUser(uid, kind, cls, lane, cell, speed, involved))
    initial = WorldState(av, tuple(users), 0, False)

    # reward
    r = reader("reward", required=False)
    d = RewardParams()
    rp = RewardParams(
        w_lat=r.get("w_lat", _float, d.w_lat, *nonneg),
        w_dir=r.get("w_dir", _float, d.w_dir, *nonneg),
        w_eta=r.get("w_eta", _float, d.w_eta, *nonneg),
        c_st=r.get("c_st", _float, d.c_st, *nonpos),
        w_v=r.get("w_v", _float, d.w_v),
        c_col=r.get("c_col", _float, d.c_col, lambda v: v < 0, "must be < 0"),
        p_speed=r.get("p_speed", _float, d.p_speed, *nonpos),
        p_sidewalk=r.get("p_sidewalk", _float, d.p_sidewalk, *nonpos),
        p_wrongdir=r.get("p_wrongdir", _float, d.p_wrongdir, *nonpos),
        r_prox=r.get("r_prox", _float, d.r_prox, *pos),
        v_min_eta=r.get("v_min_eta", _float, d.v_min_eta, *pos),
        gamma=r.get("gamma", _float, d.gamma, lambda v: 0 < v < 1, "must lie in (0, 1)"),
    )
    r.leftover()

    # vulnerability
    r = reader("vulnerability")
    entries = {}
    for key, (text, line) in r.sec.entries.items():
        r.used.add(key)
        kind_s, _, conf_s = key.partition(".")
        try:
            k = _enum(RoadUserKind)(kind_s)
            c = _enum(Configuration)(conf_s)
            v = _float(text)
        except ValueError as exc:
            issues.append((line, f"[vulnerability] {key}: {exc}"))
            continue
        if v < 0:
            issues.append((line, f"[vulnerability] {key} = {text}: must be >= 0"))
        entries[(k, c)] = v
    vulnerability = VulnerabilityTable(entries)
    kinds = [RoadUserKind.AV_PASSENGER] + [u.kind for u in users]
    for k, c in vulnerability.missing(dict.fromkeys(kinds)):
        issues.append((r.sec.line or None, f"[vulnerability] missing entry {k.value}.{c.value}"))

    # impact
    r = reader("impact", required=False)
    restitution = r.get("restitution", _float, 0.0, lambda v: 0 <= v <= 1, "must lie in [0, 1]")
    masses = dict(DEFAULT_MASSES)
    for key, (text, line) in r.sec.entries.items():
        if not key.startswith("mass."):
            continue
        r.used.add(key)
        try:
            k = _enum(RoadUserKind)(key[5:])
            masses[k] = _float(text)
        except ValueError as exc:
            issues.append((line, f"[impact] {key}: {exc}"))
            continue
        if not masses[k] > 0:
            issues.append((line, f"[impact] {key} = {text}: masses must be > 0"))
    r.leftover()
    impact = ImpactModel(masses, restitution)

    # contractarian
    r = reader("contractarian", required=False)
    contractarian = ContractarianConfig(
        danger_threshold=r.get("danger_threshold", _float, math.inf, *nonneg),
        enforce_traffic_filter=r.get("traffic_filter", _bool, True),
        enforce_uninvolved_filter=r.get("uninvolved_filter", _bool, True),
        threshold_binds_all=r.get("threshold_binds_all", _bool, False),
    )
    r.leftover()

    # solve
    r = reader("solve")
    solve_kw = dict(
        horizon=r.get("horizon", _int, ..., *nonneg) or 0,
        step_seconds=r.get("step_seconds", _float, 1.0, *pos),
        epsilon=r.get("epsilon", _float, 1e-9, *pos),
        max_sweeps=r.get("max_sweeps", _int, 10_000, lambda v: v >= 1, "must be >= 1"),
        collision_prob_floor=r.get("collision_prob_floor", _float, 0.0,
                                   lambda v: 0 <= v < 1, "must lie in [0, 1)"),
        state_limit=r.get("state_limit", _int, DEFAULT_STATE_LIMIT, *pos),
    )
    r.leftover()

    if issues:
        raise ScenarioError(issues, source)
    scenario = Scenario(grid=grid, initial=initial, behavior=BehaviorModel(maneuvers),
                        reward_params=rp, valences=valences, vulnerability=vulnerability,
                        impact=impact, contractarian=contractarian, name=name, **solve_kw)
    check_collision_dominance(scenario)
    return scenario


def check_collision_dominance(scenario: Scenario) -> bool:
    """Warn unless every collision reward sits below every shaped reward."""
    min_w = min(scenario.valences.weight(u.valence_class) for u in scenario.initial.users) \
        if scenario.initial.users else 0.0
    bound = shaped_reward_bound(scenario)
    ok = not scenario.initial.users or abs(scenario.reward_params.c_col) * min_w > bound
    if not ok:
        warnings.warn(f"{scenario.name}: |c_col| * min(w_ETV) = "
                      f"{abs(scenario.reward_params.c_col) * min_w:g} does not exceed the "
                      f"shaped-reward bound {bound:g}; a collision may look better than driving on",
                      ScenarioWarning, stacklevel=3)
    return ok


# --------------------------------------------------------------------------- formatting

def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def format_scenario(sc: Scenario) -> str:
    """Canonical text for ``sc``; ``parse_scenario(format_scenario(sc)) == sc``."""
    g, rp, c = sc.grid, sc.reward_params, sc.contractarian
    out = [f"format_version = {FORMAT_VERSION}", f"name = {sc.name}", ""]

    def section(title, pairs):
        out.append(f"[{title}]")
        out.extend(f"{k} = {_fmt(v)}".rstrip() for k, v in pairs)
        out.append("")

    section("valences", [("passenger_class", sc.valences.passenger_class),
                         ("ranking", ", ".join(sc.valences.ranking)),
                         *sc.valences.weights.items()])
    section("contractarian", [("danger_threshold", c.danger_threshold),
                              ("traffic_filter", c.enforce_traffic_filter),
                              ("uninvolved_filter", c.enforce_uninvolved_filter),
                              ("threshold_binds_all", c.threshold_binds_all)])
    section("grid", [("lanes", g.n_lanes), ("cells", g.n_cells), ("lane_width", g.lane_width),
                     ("cell_length", g.cell_length),
                     ("sidewalk_lanes", ", ".join(map(str, sorted(g.sidewalk_lanes)))),
                     ("oncoming_lanes", ", ".join(map(str, sorted(g.oncoming_lanes)))),
                     ("speed_limit", g.speed_limit), ("v_max", g.v_max),
                     ("lane_change_heading", g.lane_change_heading),
                     ("objective_lane", g.objective_lane), ("objective_cell", g.objective_cell)])
    av = sc.initial.av
    section("av", [("lane", av.lane), ("cell", av.cell), ("speed", av.speed)])
    for u in sc.initial.users:
        beh = ", ".join(f"{m.value}:{_fmt(p)}" for m, p in sc.behavior.for_user(u.id))
        section(f"user.{u.id}", [("kind", u.kind.value), ("class", u.valence_class),
                                 ("lane", u.lane), ("cell", u.cell), ("speed", u.speed),
                                 ("involved", u.involved), ("behavior", beh)])
    section("reward", list(vars(rp).items()))
    section("vulnerability", [(f"{k.value}.{cf.value}", v) for (k, cf), v in sc.vulnerability.entries.items()])
    section("impact", [("restitution", sc.impact.restitution)]
            + [(f"mass.{k.value}", m) for k, m in sc.impact.masses.items()])
    section("solve", [("horizon", sc.horizon), ("step_seconds", sc.step_seconds),
                      ("epsilon", sc.epsilon), ("max_sweeps", sc.max_sweeps),
                      ("collision_prob_floor", sc.collision_prob_floor),
                      ("state_limit", sc.state_limit)])
    return "\n".join(out)


# --------------------------------------------------------------------------- loading

def shipped_scenarios() -> list[str]:
    root = resources.files("evtdrive") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def load_scenario(ref: str | Path) -> Scenario:
    """Load a scenario from a file path, or by name from the shipped corpus."""
    path = Path(ref)
    if path.is_file():
        return parse_scenario(path.read_text(), source=str(path))
    res = resources.files("evtdrive") / "scenarios" / f"{ref}.scn"
    if res.is_file():
        return parse_scenario(res.read_text(), source=f"{ref}.scn")
    raise FileNotFoundError(f"no scenario file or shipped scenario named '{ref}'")

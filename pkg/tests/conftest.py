"""Shared builders for small hand-made scenarios and harm matrices."""

import numpy as np

from evtdrive.harm import ILLUSTRATIVE_VULNERABILITY, ExpectedHarmMatrix
from evtdrive.scenario import parse_scenario
from evtdrive.world import ACTIONS, RoadUserKind


def scenario_text(lanes=1, cells=10, v_max=3, av=(0, 0, 0), users=(), horizon=5,
                  grid_extra="", sections="", speed_limit=None, name="test"):
    """Scenario file text; ``users`` holds dicts of user.N keys (``id`` picks N)."""
    kinds = {RoadUserKind.AV_PASSENGER} | {RoadUserKind(u["kind"]) for u in users}
    classes = {"passenger"} | {u.get("class", u["kind"]) for u in users}
    lines = ["format_version = 1", f"name = {name}", "", "[grid]", f"lanes = {lanes}",
             f"cells = {cells}", f"v_max = {v_max}"]
    if speed_limit is not None:
        lines.append(f"speed_limit = {speed_limit}")
    lines += [grid_extra, "", "[av]", f"lane = {av[0]}", f"cell = {av[1]}", f"speed = {av[2]}", ""]
    for n, u in enumerate(users, start=1):
        lines.append(f"[user.{u.get('id', n)}]")
        lines += [f"{k} = {v}" for k, v in u.items() if k != "id"]
        lines.append("")
    if "[valences]" not in sections:
        lines.append("[valences]")
        lines += [f"{c} = 1.0" for c in sorted(classes)]
        lines.append("")
    lines.append("[vulnerability]")
    for (kind, cfg), v in ILLUSTRATIVE_VULNERABILITY.items():
        if kind in kinds:
            lines.append(f"{kind.value}.{cfg.value} = {v}")
    lines += ["", sections, "", "[solve]", f"horizon = {horizon}", ""]
    return "\n".join(lines)


def make_scenario(**kw):
    return parse_scenario(scenario_text(**kw))


def harm_matrix(rows, weights=None, classes=None, involved=None, actions=None):
    """Matrix over the first ``len(rows)`` canonical actions unless ``actions`` is given."""
    values = np.asarray(rows, dtype=float)
    n_users = values.shape[1]
    actions = tuple(actions) if actions is not None else ACTIONS[: len(values)]
    classes = tuple(classes) if classes is not None else ("passenger",) + tuple(
        f"c{j}" for j in range(1, n_users))
    return ExpectedHarmMatrix(
        actions=actions,
        users=tuple(range(n_users)),
        values=values,
        weights=tuple(float(w) for w in (weights if weights is not None else [1.0] * n_users)),
        classes=classes,
        involved=tuple(involved) if involved is not None else (True,) * n_users,
    )

"""Command-line interface.

Exit status: 0 success, 1 usage error, 2 scenario error, 3 value iteration did
not converge.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .ethics import PROFILES, Profile, ethical_deliberation
from .harm import expected_harm_matrix
from .results import serialize_results
from .scenario import Scenario, ScenarioError, load_scenario
from .solver import compile_model, extract_policy, simulate, solve, value_iteration
from .world import ACTIONS, PASSENGER_ID, StateSpaceTooLarge, build_state_space, is_dilemma

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_NONCONVERGED = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _profile(text: str) -> Profile:
    try:
        return Profile(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown profile '{text}' (choose from {', '.join(p.value for p in PROFILES)})") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evtdrive", description="Valence-weighted driving MDP planner")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="run value iteration and extract the policy")
    p.add_argument("scenario", help="scenario file or shipped scenario name")
    p.add_argument("--profile", type=_profile, required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--out", type=Path, help="results file (default: stdout)")

    p = sub.add_parser("simulate", help="solve, then roll out episodes")
    p.add_argument("scenario")
    p.add_argument("--profile", type=_profile, required=True)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, help="default: scenario horizon")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("explain", help="harm matrix and every profile's choice for one state")
    p.add_argument("scenario")
    p.add_argument("--state", default="initial",
                   help="state index, 'initial', or 'dilemma[:N]' for the N-th dilemma state")

    p = sub.add_parser("compare", help="solve under every profile and report disagreements")
    p.add_argument("scenario")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)
    return parser


def _config(scenario: Scenario, args):
    try:
        return scenario.solve_config(epsilon=args.epsilon, gamma=args.gamma)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _cmd_solve(args) -> int:
    scenario = load_scenario(args.scenario)
    sol = solve(scenario, args.profile, _config(scenario, args))
    _emit(serialize_results(sol.policy, sol.values, (), scenario.name), args.out)
    return EXIT_OK if sol.values.converged else EXIT_NONCONVERGED


def _cmd_simulate(args) -> int:
    if args.episodes < 0:
        raise _UsageError("--episodes must be >= 0")
    scenario = load_scenario(args.scenario)
    cfg = _config(scenario, args)
    sol = solve(scenario, args.profile, cfg)
    max_steps = args.max_steps if args.max_steps is not None else scenario.horizon
    traces = [simulate(scenario, sol.policy, max_steps, seed=args.seed + k, gamma=cfg.gamma)
              for k in range(args.episodes)]
    _emit(serialize_results(sol.policy, sol.values, traces, scenario.name), args.out)
    return EXIT_OK if sol.values.converged else EXIT_NONCONVERGED


def _resolve_state(space, scenario, ref: str) -> int:
    if ref == "initial":
        return 0
    if ref.startswith("dilemma"):
        _, _, n = ref.partition(":")
        want = int(n) if n else 0
        found = [i for i, s in enumerate(space) if is_dilemma(s, scenario)]
        if want >= len(found):
            raise _UsageError(f"scenario has only {len(found)} dilemma states")
        return found[want]
    try:
        i = int(ref)
    except ValueError:
        raise _UsageError(f"bad --state '{ref}'") from None
    if not 0 <= i < len(space):
        raise _UsageError(f"state index {i} out of range (0..{len(space) - 1})")
    return i


def _cmd_explain(args) -> int:
    scenario = load_scenario(args.scenario)
    space = build_state_space(scenario)
    i = _resolve_state(space, scenario, args.state)
    s = space[i]
    dilemma = is_dilemma(s, scenario)
    m = expected_harm_matrix(s, ACTIONS, scenario)
    print(f"state {i}: {s.describe()}")
    print("dilemma: yes" if dilemma else "dilemma: no (value iteration chooses here; "
          "profiles shown as if deliberating)")
    labels = ["passenger" if u == PASSENGER_ID else f"user {u}" for u in m.users]
    width = 2 + max(10, *(len(x) for x in labels + list(m.classes)))
    print()
    print("expected harm".ljust(14) + "".join(x.rjust(width) for x in labels))
    print("class".ljust(14) + "".join(c.rjust(width) for c in m.classes))
    print("weight".ljust(14) + "".join(f"{w:g}".rjust(width) for w in m.weights))
    for a in m.actions:
        print(a.value.ljust(14) + "".join(f"{h:.4f}".rjust(width) for h in m.row(a)))
    print()
    outcomes = {p: ethical_deliberation(s, ACTIONS, scenario, p, matrix=m) for p in PROFILES}
    print("action".ljust(12) + "".join(p.value.rjust(22) for p in PROFILES))
    for a in ACTIONS:
        cells = []
        for p in PROFILES:
            out = outcomes[p]
            if a in out.filtered_out and not out.filters_vacated:
                cells.append(f"[{out.filtered_out[a]}]")
            else:
                score = out.per_action_scores.get(a)
                mark = " *" if out.chosen is a else ""
                cells.append("-" if score is None else f"{score:.4f}{mark}")
        print(a.value.ljust(12) + "".join(c.rjust(22) for c in cells))
    print("chosen".ljust(12) + "".join(outcomes[p].chosen.value.rjust(22) for p in PROFILES))
    for p in PROFILES:
        notes = []
        if outcomes[p].fallback_used:
            notes.append("fallback rule used")
        if outcomes[p].filters_vacated:
            notes.append("filters vacated")
        if notes:
            print(f"{p.value}: {', '.join(notes)}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    scenario = load_scenario(args.scenario)
    model = compile_model(scenario)
    v = value_iteration(model, _config(scenario, args))
    policies = {p: extract_policy(model, v, p) for p in PROFILES}
    dilemmas = [i for i in range(len(model.space)) if policies[PROFILES[0]].dilemma[i]]
    print(f"{scenario.name}: {len(model.space)} states, {len(dilemmas)} dilemma state{'' if len(dilemmas) == 1 else 's'}")
    print("state".ljust(8) + "".join(p.value.rjust(22) for p in PROFILES) + "  agree")
    disagreements = 0
    for i in dilemmas:
        chosen = [policies[p].actions[i] for p in PROFILES]
        agree = len(set(chosen)) == 1
        disagreements += not agree
        print(str(i).ljust(8) + "".join(a.value.rjust(22) for a in chosen)
              + ("  yes" if agree else "  NO"))
    print(f"disagreements: {disagreements} of {len(dilemmas)} dilemma states")
    return EXIT_OK if v.converged else EXIT_NONCONVERGED


COMMANDS = {"solve": _cmd_solve, "simulate": _cmd_simulate, "explain": _cmd_explain,
            "compare": _cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, FileNotFoundError, StateSpaceTooLarge) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    raise SystemExit(main())

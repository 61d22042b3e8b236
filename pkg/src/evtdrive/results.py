"""Results documents: solve metadata, dilemma breakdowns and rollout metrics as JSON."""

from __future__ import annotations

import json
from collections import Counter
from typing import Sequence

from .solver import Policy, Trace, ValueFunction, trace_metrics
from .world import ACTIONS

RESULTS_FORMAT_VERSION = 1


def results_document(policy: Policy, v: ValueFunction, traces: Sequence[Trace] = (),
                     scenario_name: str = "scenario") -> dict:
    space = policy.space
    counts = Counter(policy.actions)
    dilemmas = []
    for i in sorted(policy.outcomes):
        entry = {"state": i, "description": space[i].describe(), "value": float(v.values[i])}
        entry.update(policy.outcomes[i].to_dict())
        dilemmas.append(entry)
    return {
        "format_version": RESULTS_FORMAT_VERSION,
        "scenario": scenario_name,
        "profile": policy.profile.value,
        "solve": {
            "states": len(space),
            "sweeps": v.sweeps,
            "mse": float(v.mse),
            "converged": v.converged,
            "refined": v.refined,
            "epsilon": v.epsilon,
            "gamma": v.gamma,
        },
        "initial": {
            "description": space[0].describe(),
            "value": float(v.values[0]),
            "action": policy.actions[0].value,
            "dilemma": bool(policy.dilemma[0]),
        },
        "policy_summary": {
            "dilemma_states": int(policy.dilemma.sum()),
            "action_counts": {a.value: counts.get(a, 0) for a in ACTIONS},
        },
        "dilemma_states": dilemmas,
        "traces": [
            {"seed": t.seed, "actions": [st.action.value for st in t.steps],
             "metrics": trace_metrics(t).to_dict()}
            for t in traces
        ],
    }


def serialize_results(policy: Policy, v: ValueFunction, traces: Sequence[Trace] = (),
                      scenario_name: str = "scenario") -> str:
    doc = results_document(policy, v, traces, scenario_name)
    return json.dumps(doc, indent=1) + "\n"


def read_results(text: str) -> dict:
    doc = json.loads(text)
    version = doc.get("format_version")
    if version != RESULTS_FORMAT_VERSION:
        raise ValueError(f"unsupported results format_version {version!r}")
    return doc

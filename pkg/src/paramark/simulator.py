"""Ground-truth trace generation for action-level chain models.

Samples the action label first from the policy weights, then the
destination from that action's row, so per-action counts are observable
in the traces. Missions are independently seeded from one root seed via
a splittable generator; the algorithm identifier travels in the trace
header so replays can refuse a mismatched random source.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dtmc import PolicyModel, expr_evaluate, row_non_complement
from .estimators import TransitionCounts

GENERATOR_ID = "numpy-pcg64-seedseq-v1"

STEP_CAP = 10_000


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruth:
    values: Mapping[str, Fraction]
    gamma: Fraction

    def with_gamma(self, gamma: Fraction) -> GroundTruth:
        return GroundTruth(values=self.values, gamma=gamma)


@dataclass(frozen=True)
class TraceEvent:
    mission: int
    step: int
    source: int
    action: str
    dest: int


@dataclass(frozen=True)
class Mission:
    mission_id: int
    gamma: Fraction
    events: tuple[TraceEvent, ...]
    terminal: int
    truncated: bool = False


def _dest_tables(
    pm: PolicyModel, values: Mapping[str, Fraction]
) -> dict[tuple[int, str], tuple[list[int], list[float]]]:
    """Per-action destination distributions at the true values.

    Row sums are checked exactly before the float conversion.
    """
    tables = {}
    for (s, a), row in pm.action_rows.items():
        sibs = row_non_complement(row)
        dests, probs, total = [], [], Fraction(0)
        for d, e in row.items():
            p = expr_evaluate(e, values, sibs)
            if p < 0 or p > 1:
                raise SimulationError(
                    f"{pm.name_of(s)}/{a}: probability {p} outside [0, 1]"
                )
            total += p
            if p > 0:
                dests.append(d)
                probs.append(float(p))
        if total != 1:
            raise SimulationError(
                f"{pm.name_of(s)}/{a}: row sums to {total}, not 1"
            )
        tables[(s, a)] = (dests, np.cumsum(probs).tolist())
    return tables


def _policy_table(
    pm: PolicyModel, gamma: Fraction
) -> dict[int, tuple[list[str], list[float]]]:
    out = {}
    for s in pm.states:
        policy = pm.policies.get(s, ())
        if not policy:
            raise SimulationError(f"{pm.name_of(s)}: no policy block")
        weights = [w.at(gamma) for _, w in policy]
        if any(w < 0 for w in weights) or sum(weights) != 1:
            raise SimulationError(
                f"{pm.name_of(s)}: policy weights at gamma={gamma} "
                "are not a distribution"
            )
        labels = [a for a, _ in policy]
        out[s] = (labels, np.cumsum([float(w) for w in weights]).tolist())
    return out


def _absorbing(pm: PolicyModel, s: int) -> bool:
    return all(
        set(pm.action_rows.get((s, a), {})) == {s} for a in pm.actions_of(s)
    )


def _pick(rng, items: Sequence, cum: Sequence[float]):
    u = rng.random()
    for item, c in zip(items, cum):
        if u < c:
            return item
    return items[-1]


def simulate_mission(
    pm: PolicyModel,
    truth: GroundTruth,
    seed,
    mission_id: int = 1,
    step_cap: int = STEP_CAP,
    _dest_cache=None,
) -> Mission:
    """One sampled path from the initial state to absorption or cap."""
    rng = np.random.default_rng(seed)
    dest_tables = _dest_cache or _dest_tables(pm, truth.values)
    policy = _policy_table(pm, truth.gamma)
    events = []
    s = pm.initial
    truncated = False
    while not _absorbing(pm, s):
        if len(events) >= step_cap:
            truncated = True
            break
        labels, wcum = policy[s]
        a = _pick(rng, labels, wcum)
        dests, dcum = dest_tables[(s, a)]
        d = _pick(rng, dests, dcum)
        events.append(
            TraceEvent(
                mission=mission_id,
                step=len(events),
                source=s,
                action=a,
                dest=d,
            )
        )
        s = d
    return Mission(
        mission_id=mission_id,
        gamma=truth.gamma,
        events=tuple(events),
        terminal=s,
        truncated=truncated,
    )


GAMMA_RANGE = (Fraction(25, 40), Fraction(35, 40))


def generate_campaign(
    pm: PolicyModel,
    truth: GroundTruth,
    n_missions: int = 49,
    gamma_range: tuple[Fraction, Fraction] = GAMMA_RANGE,
    seed: int = 0,
    step_cap: int = STEP_CAP,
) -> list[Mission]:
    """n_missions independent missions, each with its own drawn gamma.

    Sub-seeds are spawned from the root seed; mission k is reproducible
    without regenerating the first k-1.
    """
    lo, hi = gamma_range
    if not 0 <= lo <= hi <= 1:
        raise SimulationError(f"gamma range [{lo}, {hi}] outside [0, 1]")
    root = np.random.SeedSequence(seed)
    gamma_seed, *mission_seeds = root.spawn(n_missions + 1)
    grng = np.random.default_rng(gamma_seed)
    tables = _dest_tables(pm, truth.values)
    missions = []
    for k in range(n_missions):
        # 53-bit draw, kept rational so gamma substitutes exactly.
        u = Fraction(int(grng.integers(0, 2**53)), 2**53)
        gamma = lo + (hi - lo) * u
        missions.append(
            simulate_mission(
                pm,
                truth.with_gamma(gamma),
                mission_seeds[k],
                mission_id=k + 1,
                step_cap=step_cap,
                _dest_cache=tables,
            )
        )
    return missions


def followup_mission(
    pm: PolicyModel,
    truth: GroundTruth,
    seed: int,
    mission_id: int,
    gamma: Fraction = Fraction(3, 4),
    step_cap: int = STEP_CAP,
) -> Mission:
    """An extra mission at a pinned gamma, seeded independently of any
    campaign drawn from the same root."""
    child = np.random.SeedSequence(seed).spawn(mission_id + 1)[-1]
    return simulate_mission(
        pm,
        truth.with_gamma(gamma),
        child,
        mission_id=mission_id,
        step_cap=step_cap,
    )


def pick_longest(missions: Iterable[Mission]) -> Mission:
    """The mission with the most events; ties break to the lowest id."""
    pool = list(missions)
    if not pool:
        raise SimulationError("no missions to pick from")
    return max(pool, key=lambda m: (len(m.events), -m.mission_id))


def count_transitions(
    missions: Iterable[Mission],
) -> dict[tuple[int, str], TransitionCounts]:
    """Exact per-(state, action) tallies across missions."""
    tally: dict[tuple[int, str], dict[int, int]] = {}
    for mission in missions:
        prev: TraceEvent | None = None
        for e in mission.events:
            if prev is not None and (
                e.source != prev.dest or e.step != prev.step + 1
            ):
                raise SimulationError(
                    f"mission {mission.mission_id}: broken chain at "
                    f"step {e.step}"
                )
            tally.setdefault((e.source, e.action), {})
            tally[(e.source, e.action)][e.dest] = (
                tally[(e.source, e.action)].get(e.dest, 0) + 1
            )
            prev = e
    return {
        key: TransitionCounts(total=sum(d.values()), per_destination=d)
        for key, d in tally.items()
    }


def pooled_counts(
    missions: Iterable[Mission],
) -> dict[int, TransitionCounts]:
    """Per-state tallies with actions merged."""
    merged: dict[int, dict[int, int]] = {}
    for (s, _), c in count_transitions(missions).items():
        row = merged.setdefault(s, {})
        for d, k in c.per_destination.items():
            row[d] = row.get(d, 0) + k
    return {
        s: TransitionCounts(total=sum(d.values()), per_destination=d)
        for s, d in merged.items()
    }


def write_trace(
    path,
    pm: PolicyModel,
    missions: Sequence[Mission],
    truth: GroundTruth,
    seed: int,
) -> None:
    header = {
        "kind": "header",
        "generator": GENERATOR_ID,
        "seed": seed,
        "truth": {p: str(v) for p, v in sorted(truth.values.items())},
        "gammas": {str(m.mission_id): str(m.gamma) for m in missions},
        "truncated": sorted(m.mission_id for m in missions if m.truncated),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for m in missions:
            for e in m.events:
                fh.write(
                    json.dumps(
                        {
                            "mission": e.mission,
                            "step": e.step,
                            "from": pm.name_of(e.source),
                            "action": e.action,
                            "to": pm.name_of(e.dest),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def read_trace(path, pm: PolicyModel) -> tuple[dict, list[Mission]]:
    """Trace file back into missions, resolving state names."""
    ids = {pm.name_of(s): s for s in pm.states}
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise SimulationError("trace file is missing its header line")
    header = lines[0]
    if header.get("generator") != GENERATOR_ID:
        raise SimulationError(
            f"trace was produced by {header.get('generator')!r}, "
            f"expected {GENERATOR_ID!r}"
        )
    by_mission: dict[int, list[TraceEvent]] = {
        int(k): [] for k in header["gammas"]
    }
    for rec in lines[1:]:
        try:
            ev = TraceEvent(
                mission=rec["mission"],
                step=rec["step"],
                source=ids[rec["from"]],
                action=rec["action"],
                dest=ids[rec["to"]],
            )
        except KeyError as exc:
            raise SimulationError(f"unresolvable trace record: {rec}") from exc
        by_mission.setdefault(ev.mission, []).append(ev)
    truncated = set(header.get("truncated", ()))
    missions = []
    for mid in sorted(by_mission):
        events = sorted(by_mission[mid], key=lambda e: e.step)
        terminal = events[-1].dest if events else pm.initial
        missions.append(
            Mission(
                mission_id=mid,
                gamma=Fraction(header["gammas"][str(mid)]),
                events=tuple(events),
                terminal=terminal,
                truncated=mid in truncated,
            )
        )
    return header, missions

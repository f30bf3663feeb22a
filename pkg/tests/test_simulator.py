import math
from fractions import Fraction as F

import pytest

from paramark.dtmc import (
    Complement,
    Constant,
    Dtmc,
    LayerTag,
    Param,
    PolicyModel,
    Weight,
    induce,
)
from paramark.paramcheck import ReachQuery, eliminate
from paramark.simulator import (
    GENERATOR_ID,
    GroundTruth,
    Mission,
    SimulationError,
    TraceEvent,
    count_transitions,
    followup_mission,
    generate_campaign,
    pick_longest,
    pooled_counts,
    read_trace,
    simulate_mission,
    write_trace,
)

GOAL, TRAP = 3, 4


def patrol_model() -> PolicyModel:
    # Two-action survey state; goal and trap absorbing.
    return PolicyModel(
        states=(1, 2, 3, 4),
        initial=1,
        labels={GOAL: frozenset({"done"})},
        tags={TRAP: LayerTag.FAILURE},
        policies={
            1: (("fast", Weight(F(0), F(1))), ("slow", Weight(F(1), F(-1)))),
            2: (("cruise", Weight(F(1))),),
            3: (("idle", Weight(F(1))),),
            4: (("idle", Weight(F(1))),),
        },
        action_rows={
            (1, "fast"): {2: Param("p"), 4: Param("q"), 1: Complement()},
            (1, "slow"): {2: Constant(F(1, 8)), 1: Complement()},
            (2, "cruise"): {3: Constant(F(1, 2)), 1: Complement()},
            (3, "idle"): {3: Constant(F(1))},
            (4, "idle"): {4: Constant(F(1))},
        },
        boxes={"p": (F(1, 100), F(1, 2)), "q": (F(1, 100), F(1, 4))},
    )


TRUTH = GroundTruth(values={"p": F(1, 5), "q": F(1, 20)}, gamma=F(3, 4))


def one_hop_model() -> PolicyModel:
    return PolicyModel(
        states=(1, 2),
        initial=1,
        labels={2: frozenset({"done"})},
        tags={},
        policies={1: (("go", Weight(F(1))),), 2: (("idle", Weight(F(1))),)},
        action_rows={
            (1, "go"): {2: Constant(F(1))},
            (2, "idle"): {2: Constant(F(1))},
        },
    )


def ping_pong_model() -> PolicyModel:
    return PolicyModel(
        states=(1, 2),
        initial=1,
        labels={},
        tags={},
        policies={1: (("go", Weight(F(1))),), 2: (("back", Weight(F(1))),)},
        action_rows={
            (1, "go"): {2: Param("p"), 1: Complement()},
            (2, "back"): {1: Constant(F(1))},
        },
        boxes={"p": (F(1, 100), F(1, 2))},
    )


def test_certain_transition_gives_single_event_mission():
    m = simulate_mission(one_hop_model(), GroundTruth({}, F(1)), seed=7)
    assert len(m.events) == 1
    assert m.events[0] == TraceEvent(1, 0, 1, "go", 2)
    assert m.terminal == 2
    assert not m.truncated


def test_fixed_seed_replays_identically():
    a = simulate_mission(patrol_model(), TRUTH, seed=123)
    b = simulate_mission(patrol_model(), TRUTH, seed=123)
    assert a == b
    c = simulate_mission(patrol_model(), TRUTH, seed=124)
    assert a != c  # overwhelmingly likely for any nontrivial path


def test_campaign_is_deterministic():
    m1 = generate_campaign(patrol_model(), TRUTH, n_missions=8, seed=42)
    m2 = generate_campaign(patrol_model(), TRUTH, n_missions=8, seed=42)
    assert m1 == m2


def test_empty_campaign():
    assert generate_campaign(patrol_model(), TRUTH, n_missions=0) == []


def test_collapsed_gamma_range_pins_every_mission():
    g = F(7, 10)
    ms = generate_campaign(
        patrol_model(), TRUTH, n_missions=5, gamma_range=(g, g), seed=3
    )
    assert all(m.gamma == g for m in ms)


def test_gammas_vary_and_stay_inside_range():
    lo, hi = F(25, 40), F(35, 40)
    ms = generate_campaign(patrol_model(), TRUTH, n_missions=12, seed=5)
    assert all(lo <= m.gamma <= hi for m in ms)
    assert len({m.gamma for m in ms}) > 1


def test_bad_gamma_range_rejected():
    with pytest.raises(SimulationError):
        generate_campaign(
            patrol_model(), TRUTH, n_missions=1, gamma_range=(F(1, 2), F(2))
        )


def test_absorption_rate_matches_closed_form():
    pm = patrol_model()
    induced = induce(pm, F(3, 4))
    cf = eliminate(induced, ReachQuery(1, "done"))
    p_goal = float(cf.function.evaluate(TRUTH.values))
    n = 10_000
    ms = generate_campaign(
        pm, TRUTH, n_missions=n, gamma_range=(F(3, 4), F(3, 4)), seed=99
    )
    hit = sum(1 for m in ms if m.terminal == GOAL) / n
    se = math.sqrt(p_goal * (1 - p_goal) / n)
    assert abs(hit - p_goal) <= 3 * se


def test_step_cap_flags_truncation():
    m = simulate_mission(
        ping_pong_model(),
        GroundTruth({"p": F(1, 5)}, F(1)),
        seed=1,
        step_cap=50,
    )
    assert m.truncated
    assert len(m.events) == 50
    assert m.terminal == m.events[-1].dest


def test_count_transitions_tally():
    events = (
        TraceEvent(1, 0, 1, "speed-1", 1),
        TraceEvent(1, 1, 1, "speed-1", 2),
    )
    m = Mission(1, F(3, 4), events, terminal=2)
    counts = count_transitions([m])
    assert counts[(1, "speed-1")].total == 2
    assert dict(counts[(1, "speed-1")].per_destination) == {1: 1, 2: 1}
    assert count_transitions([]) == {}


def test_broken_chain_rejected():
    events = (
        TraceEvent(1, 0, 1, "a", 2),
        TraceEvent(1, 1, 1, "a", 2),  # source should be 2
    )
    with pytest.raises(SimulationError):
        count_transitions([Mission(1, F(1, 2), events, terminal=2)])


def test_pooled_counts_reconcile_with_per_action():
    ms = generate_campaign(patrol_model(), TRUTH, n_missions=30, seed=8)
    per_action = count_transitions(ms)
    pooled = pooled_counts(ms)
    for s, c in pooled.items():
        total = sum(
            v.total for (src, _), v in per_action.items() if src == s
        )
        assert c.total == total
    merged: dict[int, dict[int, int]] = {}
    for (s, _), c in per_action.items():
        for d, k in c.per_destination.items():
            merged.setdefault(s, {})[d] = merged.get(s, {}).get(d, 0) + k
    assert {s: dict(c.per_destination) for s, c in pooled.items()} == merged


def test_frequencies_converge_to_truth():
    # One capped mission visits state 1 tens of thousands of times.
    truth = GroundTruth({"p": F(3, 10)}, F(1))
    m = simulate_mission(
        ping_pong_model(), truth, seed=17, step_cap=250_000
    )
    counts = pooled_counts([m])[1]
    n = counts.total
    assert n >= 100_000
    freq = counts.per_destination.get(2, 0) / n
    p = 0.3
    assert abs(freq - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_pick_longest_breaks_ties_to_lowest_id():
    e = (TraceEvent(1, 0, 1, "a", 2),)
    short = Mission(1, F(1, 2), (), terminal=1)
    long_a = Mission(2, F(1, 2), e, terminal=2)
    long_b = Mission(3, F(1, 2), e, terminal=2)
    assert pick_longest([short, long_a, long_b]) is long_a
    with pytest.raises(SimulationError):
        pick_longest([])


def test_followup_mission_pins_gamma_and_differs_from_campaign():
    pm = patrol_model()
    campaign = generate_campaign(pm, TRUTH, n_missions=5, seed=11)
    extra = followup_mission(pm, TRUTH, seed=11, mission_id=6)
    assert extra.gamma == F(3, 4)
    assert extra.mission_id == 6
    assert all(m.events != extra.events or not m.events for m in campaign)


def test_trace_round_trip(tmp_path):
    pm = patrol_model()
    ms = generate_campaign(pm, TRUTH, n_missions=6, seed=21)
    path = tmp_path / "trace.jsonl"
    write_trace(path, pm, ms, TRUTH, seed=21)
    header, back = read_trace(path, pm)
    assert header["generator"] == GENERATOR_ID
    assert header["seed"] == 21
    assert back == ms
    # Identical rewrite is byte-identical.
    path2 = tmp_path / "trace2.jsonl"
    write_trace(path2, pm, ms, TRUTH, seed=21)
    assert path.read_bytes() == path2.read_bytes()


def test_trace_generator_mismatch_rejected(tmp_path):
    pm = patrol_model()
    ms = generate_campaign(pm, TRUTH, n_missions=1, seed=2)
    path = tmp_path / "trace.jsonl"
    write_trace(path, pm, ms, TRUTH, seed=2)
    text = path.read_text().replace(GENERATOR_ID, "other-rng-v0")
    path.write_text(text)
    with pytest.raises(SimulationError):
        read_trace(path, pm)


def test_invalid_policy_weights_rejected():
    pm = PolicyModel(
        states=(1, 2),
        initial=1,
        labels={},
        tags={},
        policies={
            1: (("only", Weight(F(1, 2))),),
            2: (("idle", Weight(F(1))),),
        },
        action_rows={
            (1, "only"): {2: Constant(F(1))},
            (2, "idle"): {2: Constant(F(1))},
        },
    )
    with pytest.raises(SimulationError):
        simulate_mission(pm, GroundTruth({}, F(1, 2)), seed=0)


def test_bad_row_sum_at_truth_rejected():
    pm = one_hop_model()
    bad = PolicyModel(
        states=pm.states,
        initial=pm.initial,
        labels=pm.labels,
        tags=pm.tags,
        policies=pm.policies,
        action_rows={
            (1, "go"): {2: Constant(F(1, 2))},
            (2, "idle"): {2: Constant(F(1))},
        },
    )
    with pytest.raises(SimulationError):
        simulate_mission(bad, GroundTruth({}, F(1)), seed=0)

"""Shared test utilities: random model generation and valuation drawing."""

from __future__ import annotations

import random
from fractions import Fraction as F

from paramark.dtmc import (
    Complement,
    Constant,
    Dtmc,
    LayerTag,
    Param,
    PolicyMix,
    row_non_complement,
    expr_evaluate,
)

GOAL = "goal"


def random_parametric_dtmc(
    rng: random.Random, max_states: int = 20, max_params: int = 6
) -> Dtmc:
    """A validating parametric chain with absorbing goal and trap states.

    Mirrors the shape of hand-built models: mostly constant edges, each
    parameter appearing on at most two edges, forward-biased topology
    with occasional back edges. Row budgets keep every row sum strictly
    below 1 at the box-corner maximum, so the complement self-loop stays
    positive and boxes are interior for every denominator produced by
    elimination. A row is occasionally left with no outgoing edges at
    all; its complement self-loop is then exactly 1 and elimination must
    route around it.
    """
    n = rng.randint(3, max_states)
    states = tuple(range(1, n + 1))
    goal = n
    trap = n - 1
    k = rng.randint(1, max_params)
    params = [f"g{i}" for i in range(1, k + 1)]
    boxes = {}
    uses = {}
    for p in params:
        hi = F(rng.randint(5, 40), 100)
        boxes[p] = (hi / 5, hi)
        uses[p] = rng.randint(1, 2)
    rows: dict[int, dict] = {
        goal: {goal: Constant(F(1))},
        trap: {trap: Constant(F(1))},
    }
    labels = {goal: frozenset({GOAL})}
    tags = {trap: LayerTag.FAILURE, goal: LayerTag.NORMAL}
    for s in states[:-2]:
        if rng.random() < 0.08:
            # No way out: this state is a sink.
            rows[s] = {s: Complement()}
            continue
        forward = [d for d in states if d > s]
        backward = [d for d in states if d < s]
        dests = {min(s + 1, goal)}
        if forward and rng.random() < 0.7:
            dests.add(rng.choice(forward))
        if backward and rng.random() < 0.25:
            dests.add(rng.choice(backward))
        budget = F(9, 10)
        row: dict[int, object] = {}
        free = [p for p in params if uses[p] > 0]
        for d in sorted(dests):
            r = rng.random()
            if r < 0.35:
                fitting = [p for p in free if boxes[p][1] <= budget]
                if fitting:
                    p = rng.choice(fitting)
                    row[d] = Param(p)
                    uses[p] -= 1
                    free.remove(p)
                    budget -= boxes[p][1]
                    continue
            elif r < 0.45 and len(free) >= 2:
                pairs = [
                    (p, q)
                    for p in free
                    for q in free
                    if p < q and max(boxes[p][1], boxes[q][1]) <= budget
                ]
                if pairs:
                    p, q = rng.choice(pairs)
                    w = F(rng.randint(1, 3), 4)
                    row[d] = PolicyMix(((w, p), (1 - w, q)))
                    for x in (p, q):
                        uses[x] -= 1
                        free.remove(x)
                    budget -= max(boxes[p][1], boxes[q][1])
                    continue
            c = F(rng.randint(1, max(1, int(budget * 40))), 40)
            if c <= budget:
                row[d] = Constant(c)
                budget -= c
        if not row:
            row[min(s + 1, goal)] = Constant(F(1, 4))
        row[s] = Complement()
        rows[s] = row
    return Dtmc(
        states=states,
        initial=1,
        labels=labels,
        tags=tags,
        rows=rows,
        boxes=boxes,
    )


def draw_valuation(rng: random.Random, boxes) -> dict[str, F]:
    v = {}
    for p, (lo, hi) in boxes.items():
        v[p] = lo + (hi - lo) * F(rng.randint(0, 997), 997)
    return v


def concrete_rows(m: Dtmc, valuation) -> dict[int, dict[int, float]]:
    out = {}
    for s in m.states:
        row = m.rows[s]
        sibs = row_non_complement(row)
        out[s] = {
            d: float(expr_evaluate(e, valuation, sibs)) for d, e in row.items()
        }
    return out

"""Parametric DTMC data model and policy-induced transition construction.

States are 1-based integer ids. A transition entry is a constant, a bare
parameter, a policy mix (weighted sum of per-action probabilities), or
the row's complement. At most one entry per row may be the complement;
it stands for one minus the sum of its siblings, so self-loops need not
be written out.

`PolicyModel` keeps the per-action structure (action rows plus policy
weight schedules) so a simulator can attribute observed transitions to
actions; `induce` collapses it to a `Dtmc` at a concrete policy-mix
setting.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

from .ratfunc import ONE, Polynomial, RationalFunction, rf_sum


class ModelError(ValueError):
    pass


class ValidationError(ModelError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class Constant:
    value: Fraction


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class PolicyMix:
    """Weighted per-action probabilities; offset folds constant actions."""

    terms: tuple[tuple[Fraction, str], ...]
    offset: Fraction = Fraction(0)


@dataclass(frozen=True)
class Complement:
    """Marker: one minus the sum of the row's other entries."""


TransitionExpr = Constant | Param | PolicyMix | Complement


def expr_weight_total(expr: PolicyMix) -> Fraction:
    return sum((w for w, _ in expr.terms), Fraction(0))


class LayerTag(Enum):
    NORMAL = "normal"
    UNSAFE = "unsafe"
    FAILURE = "failure"
    CATASTROPHIC = "catastrophic"

    @property
    def is_failure(self) -> bool:
        return self in (LayerTag.FAILURE, LayerTag.CATASTROPHIC)


Box = tuple[Fraction, Fraction]


@dataclass(frozen=True, eq=True)
class Dtmc:
    states: tuple[int, ...]
    initial: int
    labels: Mapping[int, frozenset[str]]
    tags: Mapping[int, LayerTag]
    rows: Mapping[int, Mapping[int, TransitionExpr]]
    boxes: Mapping[str, Box] = field(default_factory=dict)
    state_names: Mapping[int, str] = field(default_factory=dict)

    def __hash__(self) -> int:  # mapping fields; identity is fine here
        return id(self)

    def name_of(self, s: int) -> str:
        return self.state_names.get(s, f"S{s}")

    def states_with_label(self, label: str) -> tuple[int, ...]:
        return tuple(s for s in self.states if label in self.labels.get(s, frozenset()))

    def parameters(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for s in self.states:
            for expr in self.rows.get(s, {}).values():
                if isinstance(expr, Param):
                    seen.setdefault(expr.name)
                elif isinstance(expr, PolicyMix):
                    for _, name in expr.terms:
                        seen.setdefault(name)
        return tuple(seen)


def induce_transition(
    policy: Sequence[tuple[str, Fraction]],
    per_action_probs: Sequence[Param | Constant],
) -> TransitionExpr:
    """Mix per-action transition probabilities by policy weights.

    A single action of weight 1 returns its probability unchanged; an
    all-constant mix folds to a constant.
    """
    if not policy:
        raise ModelError("empty action list")
    if len(policy) != len(per_action_probs):
        raise ModelError("policy and probability lists differ in length")
    weights = [w for _, w in policy]
    if any(w < 0 for w in weights):
        raise ModelError("negative policy weight")
    if sum(weights) != 1:
        raise ModelError(f"policy weights sum to {sum(weights)}, not 1")
    if len(policy) == 1:
        return per_action_probs[0]
    terms: list[tuple[Fraction, str]] = []
    offset = Fraction(0)
    for (_, w), prob in zip(policy, per_action_probs):
        if isinstance(prob, Constant):
            offset += w * prob.value
        else:
            terms.append((w, prob.name))
    if not terms:
        return Constant(offset)
    return PolicyMix(tuple(terms), offset)


def expr_to_rf(
    expr: TransitionExpr, siblings: Sequence[TransitionExpr] = ()
) -> RationalFunction:
    if isinstance(expr, Constant):
        return RationalFunction.constant(expr.value)
    if isinstance(expr, Param):
        return RationalFunction.variable(expr.name)
    if isinstance(expr, PolicyMix):
        poly = Polynomial.constant(expr.offset)
        for w, name in expr.terms:
            poly = poly + Polynomial.variable(name).scale(w)
        return RationalFunction(poly, Polynomial.constant(1))
    if isinstance(expr, Complement):
        return ONE - rf_sum(expr_to_rf(s) for s in siblings)
    raise ModelError(f"unknown transition expression {expr!r}")


def expr_evaluate(
    expr: TransitionExpr,
    valuation: Mapping[str, Fraction],
    siblings: Sequence[TransitionExpr] = (),
) -> Fraction:
    if isinstance(expr, Constant):
        return expr.value
    if isinstance(expr, Param):
        return Fraction(valuation[expr.name])
    if isinstance(expr, PolicyMix):
        return expr.offset + sum(
            (w * Fraction(valuation[n]) for w, n in expr.terms), Fraction(0)
        )
    if isinstance(expr, Complement):
        return 1 - sum(
            (expr_evaluate(s, valuation) for s in siblings), Fraction(0)
        )
    raise ModelError(f"unknown transition expression {expr!r}")


def row_non_complement(row: Mapping[int, TransitionExpr]) -> list[TransitionExpr]:
    return [e for e in row.values() if not isinstance(e, Complement)]


def default_reference_valuations(
    m: Dtmc, max_corners: int = 1024
) -> list[dict[str, Fraction]]:
    """Box corners plus the box midpoint; corner set sampled when huge."""
    params = m.parameters()
    boxes = {p: m.boxes.get(p, (Fraction(0), Fraction(1))) for p in params}
    if not params:
        return [{}]
    mid = {p: (lo + hi) / 2 for p, (lo, hi) in boxes.items()}
    corners: list[dict[str, Fraction]] = []
    if 2 ** len(params) <= max_corners:
        for picks in itertools.product((0, 1), repeat=len(params)):
            corners.append(
                {p: boxes[p][k] for p, k in zip(params, picks)}
            )
    else:
        rng = random.Random(20_24)
        for _ in range(max_corners):
            corners.append(
                {p: boxes[p][rng.randrange(2)] for p in params}
            )
    return corners + [mid]


def validate(
    m: Dtmc,
    reference_valuations: Sequence[Mapping[str, Fraction]] | None = None,
) -> list[str]:
    """Structural and row-sum checks; violations are data, not faults."""
    out: list[str] = []
    state_set = set(m.states)
    if m.initial not in state_set:
        out.append(f"initial state {m.initial} is not a declared state")
    for s in m.states:
        row = m.rows.get(s)
        if not row:
            out.append(f"{m.name_of(s)}: no outgoing transitions")
            continue
        for dest in row:
            if dest not in state_set:
                out.append(f"{m.name_of(s)}: transition to undeclared state {dest}")
        comps = [e for e in row.values() if isinstance(e, Complement)]
        if len(comps) > 1:
            out.append(f"{m.name_of(s)}: more than one complement entry")
        for dest, e in row.items():
            if isinstance(e, Constant) and not 0 <= e.value <= 1:
                out.append(
                    f"{m.name_of(s)}->{m.name_of(dest)}: constant {e.value} outside [0, 1]"
                )
            if isinstance(e, PolicyMix):
                wsum = expr_weight_total(e)
                if any(w < 0 for w, _ in e.terms) or e.offset < 0:
                    out.append(f"{m.name_of(s)}->{m.name_of(dest)}: negative mix weight")
                if wsum > 1:
                    out.append(
                        f"{m.name_of(s)}->{m.name_of(dest)}: mix weights exceed 1"
                    )
        if m.tags.get(s, LayerTag.NORMAL).is_failure:
            loop = row.get(s)
            others = {d: e for d, e in row.items() if d != s}
            absorbing = (
                isinstance(loop, Constant)
                and loop.value == 1
                and all(
                    isinstance(e, Constant) and e.value == 0
                    for e in others.values()
                )
            ) or (isinstance(loop, Complement) and not others)
            if not absorbing:
                out.append(f"{m.name_of(s)}: failure state is not absorbing")
    if out:
        return out
    if reference_valuations is None:
        reference_valuations = default_reference_valuations(m)
    for v in reference_valuations:
        for s in m.states:
            row = m.rows[s]
            sibs = row_non_complement(row)
            total = Fraction(0)
            for dest, e in row.items():
                val = expr_evaluate(e, v, sibs)
                if not 0 <= val <= 1:
                    out.append(
                        f"{m.name_of(s)}->{m.name_of(dest)}: value {val} outside "
                        f"[0, 1] at {_fmt_valuation(v)}"
                    )
                total += val
            if total != 1:
                out.append(
                    f"{m.name_of(s)}: row sums to {total} at {_fmt_valuation(v)}"
                )
    return out


def _fmt_valuation(v: Mapping[str, Fraction]) -> str:
    return "{" + ", ".join(f"{k}={v[k]}" for k in sorted(v)) + "}"


def to_parametric_matrix(m: Dtmc) -> dict[int, dict[int, RationalFunction]]:
    """Render every row to rational functions, expanding complements."""
    violations = validate(m)
    if violations:
        raise ValidationError(violations)
    out: dict[int, dict[int, RationalFunction]] = {}
    for s in m.states:
        row = m.rows[s]
        sibs = row_non_complement(row)
        out[s] = {
            dest: expr_to_rf(e, sibs) for dest, e in row.items()
        }
    return out


# --- action-level model ------------------------------------------------------


@dataclass(frozen=True)
class Weight:
    """Policy weight affine in the mix setting gamma: a + b*gamma."""

    a: Fraction
    b: Fraction = Fraction(0)

    def at(self, gamma: Fraction) -> Fraction:
        return self.a + self.b * gamma


@dataclass(frozen=True, eq=True)
class PolicyModel:
    states: tuple[int, ...]
    initial: int
    labels: Mapping[int, frozenset[str]]
    tags: Mapping[int, LayerTag]
    policies: Mapping[int, tuple[tuple[str, Weight], ...]]
    action_rows: Mapping[tuple[int, str], Mapping[int, TransitionExpr]]
    boxes: Mapping[str, Box] = field(default_factory=dict)
    state_names: Mapping[int, str] = field(default_factory=dict)

    def __hash__(self) -> int:
        return id(self)

    def name_of(self, s: int) -> str:
        return self.state_names.get(s, f"S{s}")

    def actions_of(self, s: int) -> tuple[str, ...]:
        return tuple(a for a, _ in self.policies.get(s, ()))


def induce(pm: PolicyModel, gamma: Fraction) -> Dtmc:
    """Collapse per-action rows to a Dtmc at one policy-mix setting.

    Complements of all actions of a state must sit on the same
    destination (the canonical self-loop), so the induced row can carry
    a single complement entry.
    """
    rows: dict[int, dict[int, TransitionExpr]] = {}
    for s in pm.states:
        policy = [(a, w.at(gamma)) for a, w in pm.policies.get(s, ())]
        if not policy:
            raise ModelError(f"{pm.name_of(s)}: no policy block")
        comp_dest: int | None = None
        dests: dict[int, None] = {}
        for a, _ in policy:
            arow = pm.action_rows.get((s, a))
            if arow is None:
                raise ModelError(f"{pm.name_of(s)}: no row for action {a!r}")
            for dest, e in arow.items():
                if isinstance(e, Complement):
                    if comp_dest is not None and comp_dest != dest:
                        raise ModelError(
                            f"{pm.name_of(s)}: complements of different actions "
                            f"target different states"
                        )
                    comp_dest = dest
                else:
                    dests.setdefault(dest)
        row: dict[int, TransitionExpr] = {}
        for dest in dests:
            if dest == comp_dest:
                raise ModelError(
                    f"{pm.name_of(s)}: destination {pm.name_of(dest)} mixes "
                    f"complement and explicit entries"
                )
            probs: list[Param | Constant] = []
            for a, _ in policy:
                e = pm.action_rows[(s, a)].get(dest, Constant(Fraction(0)))
                if isinstance(e, Complement):
                    raise ModelError("unreachable: complement filtered above")
                probs.append(e)
            row[dest] = induce_transition(policy, probs)
        if comp_dest is not None:
            row[comp_dest] = Complement()
        rows[s] = row
    return Dtmc(
        states=pm.states,
        initial=pm.initial,
        labels=pm.labels,
        tags=pm.tags,
        rows=rows,
        boxes=pm.boxes,
        state_names=pm.state_names,
    )

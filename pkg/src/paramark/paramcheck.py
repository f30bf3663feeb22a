"""Reachability checking for parametric DTMCs.

State elimination produces the reachability probability as a closed-form
rational function of the model parameters; monotonicity analysis signs
its partial derivatives over a parameter box; bound evaluation turns a
box of parameter values into an interval of probabilities, by exact
corner substitution in the monotone case and by adaptive box refinement
otherwise.

Monotone directions are weak: Increasing means the partial derivative is
provably >= 0 over the box (boxes may touch values where a derivative
vanishes, e.g. a parameter at 0). Corner bounds are unaffected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from math import lcm
from typing import Mapping

from .dtmc import Dtmc, row_non_complement, expr_evaluate, to_parametric_matrix
from .intervals import Interval, poly_range
from .ratfunc import ONE, ZERO, Polynomial, RationalFunction

log = logging.getLogger(__name__)

_ZP = Polynomial.zero()
_ONE_P = Polynomial.constant(1)

_elimination_calls = 0


def elimination_call_count() -> int:
    """Total eliminate() invocations in this process (instrumentation)."""
    return _elimination_calls


class SingularBoundaryError(ValueError):
    """Denominator may vanish inside the requested box."""


class OutsideBoxError(ValueError):
    """A valuation lies outside the declared parameter box."""


@dataclass(frozen=True)
class Next:
    pass


@dataclass(frozen=True)
class BoundedUntil:
    t: int
    constraint: str | None = None


@dataclass(frozen=True)
class UnboundedUntil:
    constraint: str | None = None


QueryForm = Next | BoundedUntil | UnboundedUntil


@dataclass(frozen=True)
class ReachQuery:
    initial: int
    target_label: str
    form: QueryForm = UnboundedUntil()


class Direction(Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"
    CONSTANT = "constant"
    INDETERMINATE = "indeterminate"


ParamBox = Mapping[str, Interval]


@dataclass(frozen=True)
class ClosedForm:
    query: ReachQuery
    function: RationalFunction
    monotonicity: Mapping[str, Direction] = field(default_factory=dict)
    box: ParamBox | None = None


@dataclass(frozen=True)
class BoundResult:
    lo: Fraction
    hi: Fraction
    exact: bool  # False: conservative outward-rounded enclosure


def _box_covers(outer: ParamBox | None, inner: ParamBox, names) -> bool:
    if outer is None:
        return False
    for n in names:
        if n not in outer or n not in inner:
            return False
        if not outer[n].contains_interval(inner[n]):
            return False
    return True


_B = "__target__"  # augmented column: one-step probability into targets


def eliminate(m: Dtmc, query: ReachQuery) -> ClosedForm:
    """Closed-form unbounded-reachability probability from query.initial.

    Eliminates non-initial, non-target states in ascending degree.
    Each elimination resolves the state's self-loop by the 1/(1 - loop)
    rescaling, carried fraction-free: every entry is a polynomial
    numerator over a shared pivot chain, and each update divides exactly
    by the previous pivot, which keeps intermediate expressions at minor
    size instead of accumulating uncancelled denominator products.

    Constraint label, when present, restricts paths: states satisfying
    neither the constraint nor the target contribute nothing. States
    that cannot reach a target at all (including self-loop-1 sinks) are
    routed around; the result is the least fixpoint of the reachability
    equations, matching value iteration from below.
    """
    global _elimination_calls
    _elimination_calls += 1
    if not isinstance(query.form, UnboundedUntil):
        raise ValueError("eliminate handles unbounded-until queries only")
    mat = to_parametric_matrix(m)
    targets = set(m.states_with_label(query.target_label))
    if not targets:
        log.warning(
            "target label %r matches no state; probability is 0",
            query.target_label,
        )
        return ClosedForm(query, ZERO)
    if query.initial in targets:
        return ClosedForm(query, ONE)
    constraint = query.form.constraint
    if constraint is not None:
        allowed = set(m.states_with_label(constraint)) | targets
    else:
        allowed = set(m.states)
    if query.initial not in allowed:
        return ClosedForm(query, ZERO)

    # Entries out of to_parametric_matrix are polynomials over a
    # constant denominator; fold the constant in.
    def as_poly(rf: RationalFunction):
        return rf.num.scale(1 / rf.den.constant_value())

    edges: dict[int, dict[int, object]] = {}
    for s in m.states:
        if s in targets or s not in allowed:
            continue
        row = {}
        for d, rf in mat[s].items():
            if not rf.is_zero():
                row[d] = as_poly(rf)
        edges[s] = row

    # Restrict to states with a symbolic path to a target; the rest
    # carry probability 0 and their incoming mass is dropped.
    can_reach = set(targets)
    frontier = list(targets)
    preds: dict[int, set[int]] = {s: set() for s in m.states}
    for s, row in edges.items():
        for d in row:
            if d in preds and d != s:
                preds[d].add(s)
    while frontier:
        d = frontier.pop()
        for s in preds.get(d, ()):
            if s not in can_reach and s in edges:
                can_reach.add(s)
                frontier.append(s)
    if query.initial not in can_reach:
        return ClosedForm(query, ZERO)
    transient = [s for s in m.states if s in edges and s in can_reach]

    # Coefficients ride as plain ints over exponent tuples: each row is
    # cleared of denominators by its coefficient lcm, which leaves the
    # linear system's solution unchanged and keeps the Bareiss updates
    # in integer arithmetic.
    names = list(m.parameters())
    index = {p: i for i, p in enumerate(names)}
    width = len(names)
    zero_mono = (0,) * width

    def vec(mono) -> tuple[int, ...]:
        row = [0] * width
        for p, e in mono:
            row[index[p]] = e
        return tuple(row)

    def to_int_row(row: dict) -> dict:
        denoms = [
            c.denominator for poly in row.values() for c in poly.terms.values()
        ]
        scale = lcm(*denoms) if denoms else 1
        out = {}
        for j, poly in row.items():
            entry = {}
            for mono, c in poly.terms.items():
                v = c * scale
                entry[vec(mono)] = v.numerator
            out[j] = entry
        return out

    # Augmented system M x = b over the transient states: row s holds
    # -Q[s][d] off-diagonal, 1 - Q[s][s] on the diagonal, and the
    # one-step target probability in the _B column.
    M: dict[int, dict[object, dict]] = {}
    for s in transient:
        row: dict[object, Polynomial] = {}
        for d, p in edges[s].items():
            if d == s:
                continue
            if d in targets:
                row[_B] = row.get(_B, _ZP) + p
            elif d in can_reach:
                row[d] = -p
        diag = _ONE_P - edges[s].get(s, _ZP)
        if not diag.is_zero():
            row[s] = diag
        M[s] = to_int_row(
            {k: v for k, v in row.items() if not v.is_zero()}
        )

    active = set(transient)
    # Fraction-free with lazy scaling: rows not incident to the pivot
    # column keep their old scale; the per-step factors telescope, so a
    # later catch-up is a single exact multiply-divide. The final
    # quotient shares its row's scale, which cancels.
    unit = {zero_mono: 1}
    pivots = [unit]
    epoch = {s: 0 for s in transient}

    def catch_up(i: int, cur: int) -> None:
        e = epoch[i]
        if e == cur:
            return
        irow = M[i]
        for j, a in list(irow.items()):
            irow[j] = _ip_div(_ip_mul(a, pivots[cur]), pivots[e])
        epoch[i] = cur

    def degree(s: int) -> int:
        cols = len([d for d in M[s] if d != s and d != _B])
        rows = sum(1 for i in active if i != s and s in M[i])
        return cols + rows

    while len(active) > 1:
        s = min(
            (c for c in active if c != query.initial),
            key=lambda c: (degree(c), c),
        )
        cur = len(pivots) - 1
        catch_up(s, cur)
        pivot = M[s].get(s)
        if not pivot:
            # Self-loop is symbolically 1: the state never escapes, so
            # it is a sink and is routed around.
            active.remove(s)
            del M[s]
            del epoch[s]
            for i in active:
                M[i].pop(s, None)
            continue
        srow = M[s]
        prev = pivots[cur]
        for i in active:
            if i == s or s not in M[i]:
                continue
            catch_up(i, cur)
            irow = M[i]
            r = irow.pop(s)
            for j in set(irow) | (set(srow) - {s}):
                term = _ip_mul(pivot, irow.get(j, {}))
                c = srow.get(j)
                if c is not None:
                    rc = _ip_mul(r, c)
                    for mono, v in rc.items():
                        nv = term.get(mono, 0) - v
                        if nv:
                            term[mono] = nv
                        else:
                            term.pop(mono, None)
                q = _ip_div(term, prev)
                if q:
                    irow[j] = q
                else:
                    irow.pop(j, None)
            epoch[i] = cur + 1
        active.remove(s)
        del M[s]
        del epoch[s]
        pivots.append(pivot)

    final = M[query.initial]
    pivot = final.get(query.initial)
    rhs = final.get(_B)
    if not pivot or not rhs:
        return ClosedForm(query, ZERO)

    def to_poly(entry: dict) -> Polynomial:
        return Polynomial(
            {
                tuple((names[i], e) for i, e in enumerate(v) if e): Fraction(c)
                for v, c in entry.items()
            }
        )

    return ClosedForm(query, RationalFunction(to_poly(rhs), to_poly(pivot)))


def _ip_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            k = tuple(x + y for x, y in zip(ma, mb))
            v = out.get(k, 0) + ca * cb
            if v:
                out[k] = v
            else:
                out.pop(k, None)
    return out


def _ip_div(f: dict, g: dict) -> dict:
    """Exact division of integer-coefficient exponent-tuple dicts.

    Leading terms under lex order on the exponent tuples; inexactness
    here means the fraction-free invariant was broken, which is a bug,
    not an input condition.
    """
    if not f:
        return {}
    gl = max(g)
    glc = g[gl]
    if len(g) == 1 and not any(gl):
        if glc == 1:
            return dict(f)
        out = {}
        for mono, c in f.items():
            q, r = divmod(c, glc)
            if r:
                raise RuntimeError("inexact division in elimination")
            out[mono] = q
        return out
    g_rest = [(mono, c) for mono, c in g.items() if mono != gl]
    rem = dict(f)
    qt: dict = {}
    while rem:
        rl = max(rem)
        diff = tuple(x - y for x, y in zip(rl, gl))
        if any(e < 0 for e in diff):
            raise RuntimeError("inexact division in elimination")
        qc, rr = divmod(rem.pop(rl), glc)
        if rr:
            raise RuntimeError("inexact division in elimination")
        qt[diff] = qt.get(diff, 0) + qc
        for gm, gc in g_rest:
            t = tuple(x + y for x, y in zip(diff, gm))
            nv = rem.get(t, 0) - qc * gc
            if nv:
                rem[t] = nv
            else:
                rem.pop(t, None)
    return qt


def check_next(m: Dtmc, query: ReachQuery) -> ClosedForm:
    """One-step probability of entering a target-labeled state."""
    if not isinstance(query.form, Next):
        raise ValueError("check_next handles next queries only")
    mat = to_parametric_matrix(m)
    targets = set(m.states_with_label(query.target_label))
    if not targets:
        log.warning(
            "target label %r matches no state; probability is 0",
            query.target_label,
        )
        return ClosedForm(query, ZERO)
    f = ZERO
    for dest, rf in mat[query.initial].items():
        if dest in targets:
            f = f + rf
    return ClosedForm(query, f)


def check_bounded(
    m: Dtmc, query: ReachQuery, valuation: Mapping[str, Fraction]
) -> Fraction:
    """Bounded-until probability at a concrete valuation (numeric path)."""
    if not isinstance(query.form, BoundedUntil):
        raise ValueError("check_bounded handles bounded-until queries only")
    for p, (lo, hi) in m.boxes.items():
        if p in valuation and not lo <= valuation[p] <= hi:
            raise OutsideBoxError(
                f"{p}={valuation[p]} outside [{lo}, {hi}]"
            )
    targets = set(m.states_with_label(query.target_label))
    constraint = query.form.constraint
    allowed = (
        set(m.states)
        if constraint is None
        else set(m.states_with_label(constraint)) | targets
    )
    concrete: dict[int, dict[int, Fraction]] = {}
    for s in m.states:
        row = m.rows[s]
        sibs = row_non_complement(row)
        concrete[s] = {
            d: expr_evaluate(e, valuation, sibs) for d, e in row.items()
        }
    v = {s: Fraction(1) if s in targets else Fraction(0) for s in m.states}
    for _ in range(query.form.t):
        nxt = {}
        for s in m.states:
            if s in targets:
                nxt[s] = Fraction(1)
            elif s not in allowed:
                nxt[s] = Fraction(0)
            else:
                nxt[s] = sum(
                    (p * v[d] for d, p in concrete[s].items()), Fraction(0)
                )
        v = nxt
    return v[query.initial]


def _poly_sign(poly, box: ParamBox, depth: int) -> int | None:
    """+1 / -1 when the polynomial's sign is proven constant; else None.

    Termwise interval evaluation, refined by bisection on the widest
    parameter. Weak signs: a polynomial that is >= 0 with zeros inside
    the box reports +1.
    """
    rng = poly_range(poly, box)
    if rng.lo >= 0:
        return 1
    if rng.hi <= 0:
        return -1
    if depth <= 0:
        return None
    names = [n for n in poly.parameters() if box[n].width > 0]
    if not names:
        return None
    widest = max(names, key=lambda n: (box[n].width, n))
    iv = box[widest]
    mid = iv.midpoint
    left = dict(box)
    left[widest] = Interval(iv.lo, mid)
    right = dict(box)
    right[widest] = Interval(mid, iv.hi)
    s1 = _poly_sign(poly, left, depth - 1)
    if s1 is None:
        return None
    s2 = _poly_sign(poly, right, depth - 1)
    if s2 is None or s1 != s2:
        return None
    return s1


def analyze_monotonicity(cf: ClosedForm, box: ParamBox) -> ClosedForm:
    """Sign each partial derivative of cf.function over the box.

    Directions are recorded for every parameter in the box; parameters
    absent from the function are Constant.
    """
    f = cf.function
    fparams = f.parameters()
    missing = sorted(fparams - set(box))
    if missing:
        raise ValueError(f"box does not cover parameters {missing}")
    dirs: dict[str, Direction] = {}
    for p in box:
        if p not in fparams:
            dirs[p] = Direction.CONSTANT
            continue
        d = f.partial_derivative(p)
        if d.is_zero():
            dirs[p] = Direction.CONSTANT
            continue
        num_sign = _poly_sign(d.num, box, depth=4)
        den_sign = _poly_sign(d.den, box, depth=4)
        if num_sign is None or den_sign is None:
            dirs[p] = Direction.INDETERMINATE
        elif num_sign * den_sign > 0:
            dirs[p] = Direction.INCREASING
        else:
            dirs[p] = Direction.DECREASING
    return replace(cf, monotonicity=dirs, box=dict(box))


def _corner(box: ParamBox, dirs: Mapping[str, Direction], low: bool):
    v = {}
    for p, iv in box.items():
        d = dirs.get(p, Direction.CONSTANT)
        if d is Direction.DECREASING:
            v[p] = iv.hi if low else iv.lo
        else:
            v[p] = iv.lo if low else iv.hi
    return v


def _rf_enclosure(f: RationalFunction, box: ParamBox) -> Interval:
    num = poly_range(f.num, box)
    den = poly_range(f.den, box)
    if den.contains(Fraction(0)):
        raise SingularBoundaryError(
            "singular at boundary: denominator interval contains zero"
        )
    cands = (
        num.lo / den.lo,
        num.lo / den.hi,
        num.hi / den.lo,
        num.hi / den.hi,
    )
    return Interval(min(cands), max(cands))


def bound_evaluate(
    cf: ClosedForm, box: ParamBox, max_depth: int = 8
) -> BoundResult:
    """Interval of cf.function over the box.

    Monotone (or constant) in every parameter: exact corner
    evaluations. Otherwise: adaptive bisection on the indeterminate
    parameters; cells that resolve to monotone are cornered exactly,
    depth-exhausted cells contribute an outward-rounded enclosure from
    cell-wise derivative bounds and the result is flagged non-exact.
    """
    f = cf.function
    fparams = f.parameters()
    if not fparams:
        v = f.evaluate({})
        return BoundResult(v, v, True)
    sub = {p: box[p] for p in sorted(fparams)}
    den_sign = _poly_sign(f.den, sub, depth=6)
    if den_sign is None:
        raise SingularBoundaryError(
            "singular at boundary: denominator sign not constant over box"
        )
    if _box_covers(cf.box, sub, fparams):
        dirs = cf.monotonicity
    else:
        dirs = analyze_monotonicity(cf, sub).monotonicity
    return _bound_rec(f, sub, dirs, max_depth)


def _bound_rec(
    f: RationalFunction,
    box: ParamBox,
    dirs: Mapping[str, Direction],
    depth: int,
) -> BoundResult:
    bad = [
        p
        for p, d in dirs.items()
        if d is Direction.INDETERMINATE and p in box and box[p].width > 0
    ]
    if not bad:
        lo = f.evaluate(_corner(box, dirs, low=True))
        hi = f.evaluate(_corner(box, dirs, low=False))
        if lo > hi:
            lo, hi = hi, lo
        return BoundResult(lo, hi, True)
    if depth <= 0:
        enc = _outward_cell(f, box, bad)
        return BoundResult(enc.lo, enc.hi, False)
    split = max(bad, key=lambda p: (box[p].width, p))
    mid = box[split].midpoint
    halves = []
    for iv in (Interval(box[split].lo, mid), Interval(mid, box[split].hi)):
        cell = dict(box)
        cell[split] = iv
        cf_cell = analyze_monotonicity(ClosedForm(_ANY_QUERY, f), cell)
        halves.append(_bound_rec(f, cell, cf_cell.monotonicity, depth - 1))
    return BoundResult(
        min(h.lo for h in halves),
        max(h.hi for h in halves),
        all(h.exact for h in halves),
    )


_ANY_QUERY = ReachQuery(initial=0, target_label="")


def _outward_cell(
    f: RationalFunction, box: ParamBox, bad: list[str]
) -> Interval:
    names = sorted(box)
    k = len(names)
    if k > 12:
        # Corner enumeration would explode; a raw interval quotient is
        # sound, just looser.
        return _rf_enclosure(f, box)
    out: list[Mapping[str, Fraction]] = []
    for mask in range(1 << k):
        out.append(
            {
                n: (box[n].hi if mask >> i & 1 else box[n].lo)
                for i, n in enumerate(names)
            }
        )
    ev = [f.evaluate(v) for v in out]
    lo, hi = min(ev), max(ev)
    # Outward rounding: |f'| bounded per parameter via interval
    # quotients of the derivative, times the cell half-width.
    slack = Fraction(0)
    for p in bad:
        d = f.partial_derivative(p)
        try:
            enc = _rf_enclosure(d, box)
        except SingularBoundaryError:
            enc = None
        if enc is None:
            return _rf_enclosure(f, box)
        mag = max(abs(enc.lo), abs(enc.hi))
        slack += mag * box[p].width / 2
    return Interval(lo - slack, hi + slack)

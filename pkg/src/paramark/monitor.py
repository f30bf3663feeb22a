"""Runtime verification loop: ingest events, learn, re-bound, alarm.

Pre-mission work does all symbolic analysis: one closed form per query
per possible current state, with monotone directions proven over the
declared parameter boxes. The runtime path only tallies counts, updates
posteriors, substitutes into cached forms, and compares against
thresholds; it never eliminates states.

Conflict handling separates reporting from alarming. Raw conflict flags
(frequency outside the prior interval) are reported every step, but
classification requires the flag to persist for a full window of row
updates AND to be statistically significant under an exact binomial
tail test at the nearest prior endpoint. Early-mission flags on a
handful of samples are expected and stay quiet.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .dtmc import Dtmc, LayerTag, Param, PolicyModel
from .estimators import (
    CbiPrior,
    ImprecisePrior,
    PosteriorInterval,
    TransitionCounts,
    cbi_bound,
    imprecise_update,
)
from .intervals import Interval
from .paramcheck import (
    BoundResult,
    ClosedForm,
    ReachQuery,
    UnboundedUntil,
    analyze_monotonicity,
    bound_evaluate,
    eliminate,
)
from .simulator import Mission, TraceEvent, count_transitions


class MonitorError(ValueError):
    pass


class ChainError(MonitorError):
    """Event source does not match the tracked current state."""


class Status(Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    INDETERMINATE = "indeterminate"
    REPORTED = "reported"


class Hint(Enum):
    CONTINUE = "continue"
    ABORT = "abort"
    RESTART = "restart"


@dataclass(frozen=True)
class Threshold:
    bound: Fraction
    direction: str  # ">=" or "<="

    def __post_init__(self):
        if self.direction not in (">=", "<="):
            raise MonitorError(f"bad threshold direction {self.direction!r}")


@dataclass(frozen=True)
class QuerySpec:
    query_id: str
    target_label: str
    constraint: str | None = None
    threshold: Threshold | None = None


@dataclass(frozen=True)
class ParamBinding:
    """Where a tracked parameter lives: one destination of one action
    row, learned either as an interval or as a conservative bound."""

    name: str
    state: int
    action: str
    dest: int
    kind: str  # "interval" or "cbi"


@dataclass(frozen=True)
class Verdict:
    step: int
    query_id: str
    lo: Fraction
    hi: Fraction
    status: Status
    hint: Hint


@dataclass(frozen=True)
class ConflictReport:
    step: int
    flags: Mapping[str, bool]
    kind: str  # "none", "known-unknown", "unknown-unknown"
    params: tuple[str, ...] = ()


@dataclass(frozen=True)
class MonitorConfig:
    window: int = 10
    alpha: float = 0.05


@dataclass
class PremissionReport:
    posteriors: dict[str, PosteriorInterval]
    cbi_bounds: dict[str, Fraction]
    bounds: dict[str, BoundResult]
    cache: dict[tuple[str, int], ClosedForm]
    runtime_priors: dict[str, ImprecisePrior]
    cbi_baseline: dict[str, int]
    conflicts: dict[str, bool] = field(default_factory=dict)


def bindings_of(
    pm: PolicyModel, cbi_params: Iterable[str] = ()
) -> dict[str, ParamBinding]:
    """Parameter locations read off the action rows. A parameter may
    appear on only one edge to be learnable from counts."""
    cbi = set(cbi_params)
    found: dict[str, ParamBinding] = {}
    for (s, a), row in pm.action_rows.items():
        for d, e in row.items():
            if isinstance(e, Param):
                if e.name in found:
                    raise MonitorError(
                        f"parameter {e.name} bound to more than one edge"
                    )
                kind = "cbi" if e.name in cbi else "interval"
                found[e.name] = ParamBinding(e.name, s, a, d, kind)
    return found


def _absorbing(m: Dtmc, s: int) -> bool:
    return set(m.rows[s]) == {s}


def _catastrophic_query(m: Dtmc, q: QuerySpec) -> bool:
    return any(
        m.tags.get(s) is LayerTag.CATASTROPHIC
        for s in m.states_with_label(q.target_label)
    )


def _binom_tail_significant(
    n: int, k: int, p_lo: Fraction, p_hi: Fraction, alpha: float
) -> bool:
    """Is observing k of n incompatible with every p in [p_lo, p_hi]?

    Only the nearest endpoint matters: the tail probability is monotone
    in p. Terms are accumulated by ratio recursion in floats; this gate
    tunes alarm sensitivity, it does not affect posterior arithmetic.
    """
    if n == 0:
        return False
    freq = Fraction(k, n)
    if freq > p_hi:
        p = float(p_hi)
        if p == 0.0:
            return True  # any hit is impossible under p = 0
        # P(X >= k | p): sum down from the top is short when k is large
        tail = 0.0
        t = p**n
        for i in range(n, k - 1, -1):
            tail += t
            if i > 0:
                t *= i / (n - i + 1) * (1 - p) / p
        return tail < alpha
    if freq < p_lo:
        p = float(p_lo)
        if p == 1.0:
            return True
        tail = 0.0
        t = (1 - p) ** n
        for i in range(0, k + 1):
            tail += t
            t *= (n - i) / (i + 1) * p / (1 - p)
        return tail < alpha
    return False


def build_cache(
    m: Dtmc,
    queries: Sequence[QuerySpec],
    envelope: Mapping[str, Interval],
) -> dict[tuple[str, int], ClosedForm]:
    """One analyzed closed form per query per non-absorbing state."""
    cache: dict[tuple[str, int], ClosedForm] = {}
    for q in queries:
        targets = set(m.states_with_label(q.target_label))
        form = UnboundedUntil(q.constraint)
        for s in m.states:
            if s in targets or _absorbing(m, s):
                continue
            cf = eliminate(m, ReachQuery(s, q.target_label, form))
            cover = {p: envelope[p] for p in cf.function.parameters()}
            cache[(q.query_id, s)] = analyze_monotonicity(cf, cover)
    return cache


def query_box(
    m: Dtmc,
    posteriors: Mapping[str, PosteriorInterval],
    cbi_bounds: Mapping[str, Fraction],
) -> dict[str, Interval]:
    """Substitution box: posterior intervals clamped to the declared
    domain, conservative bounds pinned to a point."""
    out = {}
    for p, (lo, hi) in m.boxes.items():
        if p in cbi_bounds:
            b = min(max(cbi_bounds[p], lo), hi)
            out[p] = Interval(b, b)
        elif p in posteriors:
            post = posteriors[p]
            clo = min(max(post.lower, lo), hi)
            chi = min(max(post.upper, lo), hi)
            out[p] = Interval(clo, chi)
        else:
            out[p] = Interval(lo, hi)
    return out


def premission_verify(
    m: Dtmc,
    bindings: Mapping[str, ParamBinding],
    priors: Mapping[str, ImprecisePrior | CbiPrior],
    previous_missions: Sequence[Mission],
    queries: Sequence[QuerySpec],
    initial: int | None = None,
) -> PremissionReport:
    """Posterior table from campaign data, pre-mission bounds, and the
    runtime closed-form cache.

    Runtime priors are the posteriors re-based: expectation intervals
    become the posterior intervals and pseudo-counts absorb the
    campaign sample sizes, so the runtime estimator continues from the
    pre-mission state instead of relearning.
    """
    counts = count_transitions(previous_missions)
    posteriors: dict[str, PosteriorInterval] = {}
    cbi_bounds: dict[str, Fraction] = {}
    runtime_priors: dict[str, ImprecisePrior] = {}
    cbi_baseline: dict[str, int] = {}
    conflicts: dict[str, bool] = {}
    for name, b in bindings.items():
        prior = priors[name]
        row = counts.get(
            (b.state, b.action), TransitionCounts(0, {})
        )
        if b.kind == "cbi":
            if not isinstance(prior, CbiPrior):
                raise MonitorError(f"{name}: cbi binding needs a CbiPrior")
            failures = row.count(b.dest)
            cbi_bounds[name] = cbi_bound(prior, row.total, failures=failures)
            cbi_baseline[name] = row.total
        else:
            if not isinstance(prior, ImprecisePrior):
                raise MonitorError(
                    f"{name}: interval binding needs an ImprecisePrior"
                )
            post = imprecise_update(prior, row, b.dest)
            posteriors[name] = post
            conflicts[name] = post.conflict
            runtime_priors[name] = ImprecisePrior(
                pseudo_count_interval=(
                    prior.pseudo_count_interval[0] + row.total,
                    prior.pseudo_count_interval[1] + row.total,
                ),
                expectation_interval=(post.lower, post.upper),
            )
    envelope = {p: Interval(lo, hi) for p, (lo, hi) in m.boxes.items()}
    cache = build_cache(m, queries, envelope)
    box = query_box(m, posteriors, cbi_bounds)
    start = m.initial if initial is None else initial
    bounds: dict[str, BoundResult] = {}
    for q in queries:
        targets = set(m.states_with_label(q.target_label))
        if start in targets:
            bounds[q.query_id] = BoundResult(Fraction(1), Fraction(1), True)
        elif (q.query_id, start) in cache:
            cf = cache[(q.query_id, start)]
            sub = {p: box[p] for p in cf.function.parameters()}
            bounds[q.query_id] = bound_evaluate(cf, sub)
        else:
            bounds[q.query_id] = BoundResult(Fraction(0), Fraction(0), True)
    return PremissionReport(
        posteriors=posteriors,
        cbi_bounds=cbi_bounds,
        bounds=bounds,
        cache=cache,
        runtime_priors=runtime_priors,
        cbi_baseline=cbi_baseline,
        conflicts=conflicts,
    )


class Monitor:
    """Single-writer runtime loop over one mission's events."""

    def __init__(
        self,
        m: Dtmc,
        bindings: Mapping[str, ParamBinding],
        report: PremissionReport,
        queries: Sequence[QuerySpec],
        cbi_priors: Mapping[str, CbiPrior],
        config: MonitorConfig = MonitorConfig(),
        actions_of: Mapping[int, tuple[str, ...]] | None = None,
    ):
        self.m = m
        self.actions_of = dict(actions_of) if actions_of else None
        self.bindings = dict(bindings)
        self.queries = list(queries)
        self.cache = report.cache
        self.priors = dict(report.runtime_priors)
        self.cbi_priors = dict(cbi_priors)
        self.cbi_baseline = dict(report.cbi_baseline)
        self.config = config
        self.current_state = m.initial
        self.step = 0
        self.counts: dict[tuple[int, str], dict[int, int]] = {}
        self.posteriors: dict[str, PosteriorInterval] = dict(
            report.posteriors
        )
        self.cbi_bounds: dict[str, Fraction] = dict(report.cbi_bounds)
        self.cbi_failed: set[str] = set()
        self.consecutive: dict[str, int] = {b: 0 for b in bindings}
        self.verdict_log: list[Verdict] = []
        self.conflict_log: list[ConflictReport] = []
        self.series: list[dict] = []
        self._catastrophic = {
            q.query_id: _catastrophic_query(m, q) for q in queries
        }
        self._targets = {
            q.query_id: set(m.states_with_label(q.target_label))
            for q in queries
        }
        self._row_params: dict[tuple[int, str], list[str]] = {}
        for name, b in bindings.items():
            self._row_params.setdefault((b.state, b.action), []).append(name)
        self._record(report.bounds)

    def _row_counts(self, key: tuple[int, str]) -> TransitionCounts:
        row = self.counts.get(key, {})
        return TransitionCounts(total=sum(row.values()), per_destination=row)

    def ingest(
        self, event: TraceEvent
    ) -> tuple[list[Verdict], ConflictReport]:
        if event.source != self.current_state:
            raise ChainError(
                f"event departs {self.m.name_of(event.source)} but the "
                f"monitor is at {self.m.name_of(self.current_state)}"
            )
        if event.source not in self.m.states or (
            event.dest not in self.m.states
        ):
            raise MonitorError(f"unknown state in event {event}")
        if self.actions_of is not None and event.action not in (
            self.actions_of.get(event.source, ())
        ):
            raise MonitorError(
                f"unknown action {event.action!r} from "
                f"{self.m.name_of(event.source)}"
            )
        key = (event.source, event.action)
        row = self.counts.setdefault(key, {})
        row[event.dest] = row.get(event.dest, 0) + 1
        self.step += 1
        self.current_state = event.dest
        self._update_row(key)
        flags = {p: self.posteriors[p].conflict for p in self.posteriors}
        conflict = self._classify(flags)
        self.conflict_log.append(conflict)
        verdicts = self._verify()
        self.verdict_log.extend(verdicts)
        bounds = {
            v.query_id: BoundResult(v.lo, v.hi, True) for v in verdicts
        }
        self._record(bounds)
        return verdicts, conflict

    def _update_row(self, key: tuple[int, str]) -> None:
        counts = self._row_counts(key)
        for name in self._row_params.get(key, ()):
            b = self.bindings[name]
            if b.kind == "cbi":
                failures = counts.count(b.dest)
                if failures > 0:
                    self.cbi_failed.add(name)
                    continue  # keep the last sound bound
                n = self.cbi_baseline[name] + counts.total
                self.cbi_bounds[name] = cbi_bound(self.cbi_priors[name], n)
                continue
            post = imprecise_update(self.priors[name], counts, b.dest)
            self.posteriors[name] = post
            gated = post.conflict and _binom_tail_significant(
                counts.total,
                counts.count(b.dest),
                self.priors[name].expectation_interval[0],
                self.priors[name].expectation_interval[1],
                self.config.alpha,
            )
            if gated:
                self.consecutive[name] += 1
            else:
                self.consecutive[name] = 0

    def _classify(self, flags: Mapping[str, bool]) -> ConflictReport:
        w = self.config.window
        persistent = tuple(
            sorted(p for p, c in self.consecutive.items() if c >= w)
        )
        if persistent:
            by_state: dict[int, list[str]] = {}
            for name, b in self.bindings.items():
                if b.kind == "interval":
                    by_state.setdefault(b.state, []).append(name)
            for s, params in sorted(by_state.items()):
                if len(params) > 1 and all(
                    p in persistent for p in params
                ):
                    return ConflictReport(
                        self.step,
                        flags,
                        "unknown-unknown",
                        tuple(sorted(params)),
                    )
            return ConflictReport(
                self.step, flags, "known-unknown", persistent
            )
        return ConflictReport(self.step, flags, "none")

    def _verify(self) -> list[Verdict]:
        box = query_box(self.m, self.posteriors, self.cbi_bounds)
        out = []
        for q in self.queries:
            s = self.current_state
            if s in self._targets[q.query_id]:
                res = BoundResult(Fraction(1), Fraction(1), True)
            elif (q.query_id, s) in self.cache:
                cf = self.cache[(q.query_id, s)]
                sub = {p: box[p] for p in cf.function.parameters()}
                res = bound_evaluate(cf, sub)
            else:
                res = BoundResult(Fraction(0), Fraction(0), True)
            status, hint = self._judge(q, res)
            out.append(
                Verdict(self.step, q.query_id, res.lo, res.hi, status, hint)
            )
        return out

    def _judge(
        self, q: QuerySpec, res: BoundResult
    ) -> tuple[Status, Hint]:
        if q.threshold is None:
            return Status.REPORTED, Hint.CONTINUE
        t = q.threshold
        if t.direction == ">=":
            if res.lo >= t.bound:
                status = Status.SATISFIED
            elif res.hi < t.bound:
                status = Status.VIOLATED
            else:
                status = Status.INDETERMINATE
        else:
            if res.hi <= t.bound:
                status = Status.SATISFIED
            elif res.lo > t.bound:
                status = Status.VIOLATED
            else:
                status = Status.INDETERMINATE
        if status is not Status.VIOLATED:
            return status, Hint.CONTINUE
        if self._catastrophic[q.query_id]:
            return status, Hint.ABORT
        return status, Hint.RESTART

    def _record(self, bounds: Mapping[str, BoundResult]) -> None:
        row: dict = {"step": self.step, "state": self.m.name_of(
            self.current_state
        )}
        for name in sorted(self.bindings):
            b = self.bindings[name]
            if b.kind == "cbi":
                row[f"{name}_lo"] = Fraction(0)
                row[f"{name}_hi"] = self.cbi_bounds[name]
            else:
                post = self.posteriors[name]
                row[f"{name}_lo"] = post.lower
                row[f"{name}_hi"] = post.upper
        for q in self.queries:
            res = bounds.get(q.query_id)
            if res is None:
                row[f"{q.query_id}_lo"] = Fraction(0)
                row[f"{q.query_id}_hi"] = Fraction(1)
            else:
                row[f"{q.query_id}_lo"] = res.lo
                row[f"{q.query_id}_hi"] = res.hi
        self.series.append(row)

    def replay(
        self, events: Iterable[TraceEvent]
    ) -> tuple[list[Verdict], list[ConflictReport]]:
        for e in events:
            self.ingest(e)
        return self.verdict_log, self.conflict_log


def emit_series(monitor: Monitor, path) -> None:
    """Per-step parameter and query intervals as CSV."""
    params = sorted(monitor.bindings)
    queries = [q.query_id for q in monitor.queries]
    cols = ["step", "state"]
    for p in params:
        cols += [f"{p}_lo", f"{p}_hi"]
    for q in queries:
        cols += [f"{q}_lo", f"{q}_hi"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in monitor.series:
            cells = []
            for c in cols:
                v = row[c]
                if isinstance(v, Fraction):
                    cells.append(repr(float(v)))
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")


def emit_verdicts(monitor: Monitor, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in monitor.verdict_log:
            fh.write(
                f"{v.step},{v.query_id},{float(v.lo)!r},{float(v.hi)!r},"
                f"{v.status.value},{v.hint.value}\n"
            )


def emit_conflicts(monitor: Monitor, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in monitor.conflict_log:
            raised = ";".join(c.params)
            flagged = ";".join(sorted(p for p, f in c.flags.items() if f))
            fh.write(f"{c.step},{c.kind},{raised},{flagged}\n")

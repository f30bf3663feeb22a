"""Bayesian transition-parameter estimators.

Three learners over observed transition counts: Dirichlet point
updates, interval updates over a box of priors with prior-data-conflict
detection, and a conservative upper bound for parameters whose
transitions have never been observed. All arithmetic is exact rational;
only the numeric optimizer returns floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping


class EstimatorError(ValueError):
    pass


class CbiRegimeViolated(EstimatorError):
    """A catastrophic transition was observed; the conservative bound
    assumes failure-free data and no longer applies."""


@dataclass(frozen=True)
class TransitionCounts:
    """Observed outgoing transitions from one state."""

    total: int
    per_destination: Mapping[object, int]

    def __post_init__(self):
        if self.total < 0:
            raise EstimatorError("negative transition count")
        if any(c < 0 for c in self.per_destination.values()):
            raise EstimatorError("negative destination count")
        if sum(self.per_destination.values()) != self.total:
            raise EstimatorError("destination counts do not sum to total")

    def count(self, j) -> int:
        return self.per_destination.get(j, 0)


@dataclass(frozen=True)
class DirichletPrior:
    """Pseudo-count and per-destination expectations.

    A zero pseudo-count is the improper no-information prior; updating
    it with data gives plain empirical frequencies.
    """

    pseudo_count: Fraction
    expectations: Mapping[object, Fraction]

    def __post_init__(self):
        if self.pseudo_count < 0:
            raise EstimatorError("pseudo-count must be non-negative")
        if any(not 0 <= p <= 1 for p in self.expectations.values()):
            raise EstimatorError("expectations must lie in [0, 1]")
        if sum(self.expectations.values()) != 1:
            raise EstimatorError("expectations must sum to 1")


@dataclass(frozen=True)
class ImprecisePrior:
    pseudo_count_interval: tuple[Fraction, Fraction]
    expectation_interval: tuple[Fraction, Fraction]

    def __post_init__(self):
        n_lo, n_hi = self.pseudo_count_interval
        p_lo, p_hi = self.expectation_interval
        if not 0 < n_lo <= n_hi:
            raise EstimatorError("pseudo-count interval must be positive")
        if not 0 <= p_lo <= p_hi <= 1:
            raise EstimatorError("expectation interval must lie in [0, 1]")


@dataclass(frozen=True)
class CbiPrior:
    theta: Fraction

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise EstimatorError("theta must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class PosteriorInterval:
    lower: Fraction
    upper: Fraction
    conflict: bool
    sample_size: int

    def __post_init__(self):
        if self.lower > self.upper:
            raise EstimatorError("empty posterior interval")


def dirichlet_update(
    prior: DirichletPrior, counts: TransitionCounts
) -> tuple[DirichletPrior, dict[object, Fraction]]:
    """Conjugate update: pseudo-count accumulates, each expectation
    becomes the pseudo-count-weighted mix of prior and frequency."""
    n0 = prior.pseudo_count
    n = counts.total
    if n0 == 0 and n == 0:
        raise EstimatorError("no prior mass and no data")
    estimates = {
        j: (n0 * p0 + counts.count(j)) / (n0 + n)
        for j, p0 in prior.expectations.items()
    }
    posterior = DirichletPrior(pseudo_count=n0 + n, expectations=estimates)
    return posterior, estimates


def imprecise_update(
    prior: ImprecisePrior, counts: TransitionCounts, j
) -> PosteriorInterval:
    """Posterior envelope over the prior box for destination j.

    The posterior is monotone increasing in the prior expectation, and
    monotone in the pseudo-count with the sign of (expectation -
    frequency), so each bound is attained at a box corner; the branch
    on the empirical frequency picks that corner. Conflict is frequency
    outside the closed expectation interval; with no data there is no
    frequency and no conflict.
    """
    n_lo, n_hi = prior.pseudo_count_interval
    p_lo, p_hi = prior.expectation_interval
    n = counts.total
    if n == 0:
        return PosteriorInterval(p_lo, p_hi, conflict=False, sample_size=0)
    nij = counts.count(j)
    freq = Fraction(nij, n)
    if freq >= p_lo:
        lower = (n_hi * p_lo + nij) / (n_hi + n)
    else:
        lower = (n_lo * p_lo + nij) / (n_lo + n)
    if freq <= p_hi:
        upper = (n_hi * p_hi + nij) / (n_hi + n)
    else:
        upper = (n_lo * p_hi + nij) / (n_lo + n)
    conflict = not p_lo <= freq <= p_hi
    return PosteriorInterval(lower, upper, conflict=conflict, sample_size=n)


def cbi_bound(prior: CbiPrior, n: int, failures: int = 0) -> Fraction:
    """Conservative upper bound on a never-observed failure probability
    after n failure-free transitions.

    Exact closed form (1-theta)/(theta*(n+1)) * (1 - 1/(n+1))^n, using
    the 0^0 = 1 convention at n = 0. Non-increasing in n and in theta.
    """
    _check_regime(n, failures)
    t = prior.theta
    m = Fraction(n, n + 1)
    return (1 - t) / (t * (n + 1)) * m**n


def cbi_bound_numeric(
    prior: CbiPrior, n: int, failures: int = 0, tol: float = 1e-12
) -> float:
    """Upper bound via direct maximization over the two-point prior.

    Maximizes (1-theta)*q*(1-q)^n / (theta + (1-theta)*(1-q)^n) on
    [0, 1] by a coarse scan followed by golden-section refinement. The
    closed form of cbi_bound relaxes this twice, so the numeric value
    never exceeds it.
    """
    _check_regime(n, failures)
    t = float(prior.theta)

    def g(q: float) -> float:
        decay = (1.0 - q) ** n
        return (1.0 - t) * q * decay / (t + (1.0 - t) * decay)

    grid = [i / 128 for i in range(129)]
    best = max(range(129), key=lambda i: g(grid[i]))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, 128)]
    inv_phi = (5**0.5 - 1) / 2
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    gc, gd = g(c), g(d)
    while b - a > tol:
        if gc > gd:
            b, d, gd = d, c, gc
            c = b - inv_phi * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + inv_phi * (b - a)
            gd = g(d)
    return max(g(a), g(b), gc, gd)


def _check_regime(n: int, failures: int) -> None:
    if n < 0 or failures < 0:
        raise EstimatorError("negative count")
    if failures > 0:
        raise CbiRegimeViolated(
            f"{failures} catastrophic transition(s) observed; "
            "revise the model instead of updating this bound"
        )

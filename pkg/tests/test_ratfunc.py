import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paramark import ratfunc
from paramark.ratfunc import (
    ONE,
    ZERO,
    DomainError,
    MissingParameterError,
    ParseError,
    Polynomial,
    RationalFunction,
    ZeroDenominatorError,
    parse,
)

P = RationalFunction.variable
C = RationalFunction.constant

PARAMS = ("p", "q", "r")


def rand_valuation(rng, names, lo=Fraction(1, 100), hi=Fraction(99, 100)):
    span = hi - lo
    return {n: lo + span * Fraction(rng.randrange(1, 997), 997) for n in names}


# --- arithmetic -------------------------------------------------------------


def test_add_polynomials():
    assert P("p") + P("q") == parse("p + q")


def test_add_additive_inverse():
    f = ONE / P("p")
    assert (f + (-f)) == ZERO
    assert (f - f).is_zero()


def test_add_common_denominator_oracle():
    # p/(1-r) + r/(1-r) against (p+r)/(1-r) by evaluation at 20 random
    # rational valuations.
    rng = random.Random(1201)
    f = P("p") / (ONE - P("r"))
    g = P("r") / (ONE - P("r"))
    h = (P("p") + P("r")) / (ONE - P("r"))
    assert f + g == h
    for _ in range(20):
        v = rand_valuation(rng, ("p", "r"))
        assert (f + g).evaluate(v) == f.evaluate(v) + g.evaluate(v)
        assert (f + g).evaluate(v) == h.evaluate(v)


def test_mul_inverse():
    assert P("p") * (ONE / P("p")) == ONE


def test_mul_zero_absorbs():
    f = parse("(p + 3*q) / (1 - r)")
    assert (ZERO * f).is_zero()


def test_div_cancels_common_factor():
    rng = random.Random(1202)
    f = (P("p") * P("q")) / P("q")
    assert f == P("p")
    for _ in range(20):
        v = rand_valuation(rng, ("p", "q"))
        assert f.evaluate(v) == v["p"]


def test_div_by_zero_function_raises():
    with pytest.raises(ZeroDenominatorError):
        ONE / ZERO
    with pytest.raises(ZeroDenominatorError):
        RationalFunction(Polynomial.constant(1), Polynomial.zero())


# --- evaluation -------------------------------------------------------------


def test_evaluate_policy_mix():
    f = parse("0.75*a1 + 0.25*a2")
    v = {"a1": Fraction("0.05"), "a2": Fraction("0.03")}
    assert f.evaluate(v) == Fraction("0.045")


def test_evaluate_constant():
    assert ONE.evaluate({}) == 1
    assert ONE.evaluate({"p": Fraction(1, 3)}) == 1


def test_evaluate_ratio():
    f = parse("p / (1 - r)")
    assert f.evaluate({"p": Fraction(1, 2), "r": Fraction(1, 2)}) == 1


def test_evaluate_missing_parameter():
    with pytest.raises(MissingParameterError):
        parse("p + q").evaluate({"p": Fraction(1, 2)})


def test_evaluate_singular_valuation():
    with pytest.raises(DomainError):
        parse("p / (1 - r)").evaluate({"p": Fraction(1, 2), "r": Fraction(1)})


# --- derivatives ------------------------------------------------------------


def test_derivative_linear():
    assert P("p").partial_derivative("p") == ONE


def test_derivative_quotient_structural():
    f = parse("p / (1 - r)")
    assert f.partial_derivative("p") == ONE / (ONE - P("r"))
    sq = (ONE - P("r")) * (ONE - P("r"))
    assert f.partial_derivative("r") == P("p") / sq


@pytest.mark.parametrize(
    "text",
    ["p / (1 - r)", "(p + q*r) / (1 - q*r)", "(2*p - q^2) / (3 - p - q)"],
)
def test_derivative_finite_difference_oracle(text):
    # Central differences with exact rational step; relative error is then
    # pure truncation, h^2-small.
    f = parse(text)
    h = Fraction(1, 2**14)
    rng = random.Random(1203)
    for _ in range(10):
        v = rand_valuation(rng, sorted(f.parameters()), Fraction(1, 10), Fraction(9, 10))
        for name in sorted(f.parameters()):
            up = dict(v, **{name: v[name] + h})
            dn = dict(v, **{name: v[name] - h})
            approx = (f.evaluate(up) - f.evaluate(dn)) / (2 * h)
            exact = f.partial_derivative(name).evaluate(v)
            if exact == 0:
                assert abs(approx) < Fraction(1, 10**9)
            else:
                assert abs(approx - exact) / abs(exact) < Fraction(1, 10**6)


# --- normalization ----------------------------------------------------------


def test_zero_normalizes_to_zero_over_one():
    f = RationalFunction(Polynomial.zero(), Polynomial.constant(Fraction(7, 3)))
    assert f.num == Polynomial.zero()
    assert f.den == Polynomial.constant(1)


def test_denominator_sign_fixed():
    # Construct p / (-1 + r); the first canonical denominator term must
    # come out positive.
    f = RationalFunction(
        Polynomial.variable("p"),
        Polynomial.constant(-1) + Polynomial.variable("r"),
    )
    lead = min(f.den.terms)
    assert f.den.terms[lead] > 0


def test_integer_content_form():
    f = parse("(3/4*a1 + 1/4*a2) / (1 - r)")
    coeffs = list(f.num.terms.values()) + list(f.den.terms.values())
    assert all(c.denominator == 1 for c in coeffs)
    assert str(f) == "(3*a1 + a2) / (4 - 4*r)"


# --- hypothesis property checks --------------------------------------------

small_fraction = st.fractions(
    min_value=Fraction(-4), max_value=Fraction(4), max_denominator=8
)
monomial = st.dictionaries(
    st.sampled_from(PARAMS), st.integers(min_value=1, max_value=3), max_size=3
).map(lambda d: tuple(sorted(d.items())))
polynomial = st.dictionaries(monomial, small_fraction, max_size=5).map(Polynomial)
nonzero_polynomial = polynomial.filter(lambda f: not f.is_zero())


@st.composite
def ratfuncs(draw):
    num = draw(polynomial)
    den = draw(nonzero_polynomial)
    return RationalFunction(num, den)


interior = st.fractions(
    min_value=Fraction(1, 7), max_value=Fraction(6, 7), max_denominator=97
)
valuations = st.fixed_dictionaries({n: interior for n in PARAMS})


def defined(f, v):
    return f.den.evaluate(v) != 0


@settings(max_examples=100)
@given(ratfuncs(), ratfuncs(), valuations)
def test_add_mul_evaluation_homomorphism(f, g, v):
    if not (defined(f, v) and defined(g, v)):
        return
    assert (f + g).evaluate(v) == f.evaluate(v) + g.evaluate(v)
    assert (f * g).evaluate(v) == f.evaluate(v) * g.evaluate(v)


@settings(max_examples=100)
@given(ratfuncs(), ratfuncs(), valuations)
def test_div_evaluation_homomorphism(f, g, v):
    if g.is_zero() or not (defined(f, v) and defined(g, v)):
        return
    q = f / g
    if g.evaluate(v) == 0 or not defined(q, v):
        return
    assert q.evaluate(v) == f.evaluate(v) / g.evaluate(v)


@settings(max_examples=100)
@given(ratfuncs())
def test_normalization_idempotent(f):
    again = RationalFunction(f.num, f.den)
    assert again.num.terms == f.num.terms
    assert again.den.terms == f.den.terms


@settings(max_examples=100)
@given(ratfuncs(), ratfuncs())
def test_no_zero_coefficients_or_exponents(f, g):
    for h in (f + g, f * g, f - g):
        for poly in (h.num, h.den):
            for mono, coeff in poly.terms.items():
                assert coeff != 0
                assert all(e > 0 for _, e in mono)


@settings(max_examples=100)
@given(ratfuncs())
def test_parse_format_round_trip(f):
    assert parse(str(f)) == f


@settings(max_examples=50)
@given(ratfuncs(), valuations)
def test_derivative_sum_rule(f, v):
    # d/dp (f + f) == 2 df/dp wherever defined.
    if not defined(f, v):
        return
    d1 = (f + f).partial_derivative("p")
    d2 = f.partial_derivative("p")
    if defined(d1, v) and defined(d2, v):
        assert d1.evaluate(v) == 2 * d2.evaluate(v)


# --- parsing ----------------------------------------------------------------


def test_parse_spec_text_form():
    f = parse("(3/4*a1 + 1/4*a2) / (1 - r)")
    v = {"a1": Fraction(1, 5), "a2": Fraction(1, 10), "r": Fraction(1, 2)}
    assert f.evaluate(v) == (Fraction(3, 20) + Fraction(1, 40)) / Fraction(1, 2)


def test_parse_powers_and_unary_minus():
    assert parse("-p^2") == -(P("p") * P("p"))
    assert parse("2e-3").evaluate({}) == Fraction(1, 500)


@pytest.mark.parametrize("bad", ["", "p +", "(p", "p ? q", "p ^ q", "3..5"])
def test_parse_rejects_malformed(bad):
    with pytest.raises(ParseError):
        parse(bad)


def test_rf_sum():
    fs = [P("p"), P("q"), C(Fraction(1, 2))]
    assert ratfunc.rf_sum(fs) == parse("p + q + 1/2")
    assert ratfunc.rf_sum([]) == ZERO

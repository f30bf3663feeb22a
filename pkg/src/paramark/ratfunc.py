"""Exact sparse multivariate polynomials and rational functions.

Coefficients are `fractions.Fraction` throughout; floating point never
enters symbolic computation.  A monomial is a sorted tuple of
``(parameter, exponent)`` pairs with no zero exponents; the empty tuple
is the constant monomial.  Terms print in a fixed total order
(constant first, then lexicographically by parameter identifiers and
degree), so equal values have identical text.

Rational functions normalize on construction: zero collapses to 0/1, a
common monomial factor is cancelled, the denominator is divided out of
the numerator (or vice versa) when the division is exact, coefficients
are scaled to integers with overall gcd 1, and the denominator's first
printed term is made positive.  Structural equality of normalized forms
therefore implies mathematical equality; the converse is not promised
(full multivariate gcd is deliberately out of scope).
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from typing import Iterable, Iterator, Mapping

Mono = tuple[tuple[str, int], ...]

_F0 = Fraction(0)

_CONST_MONO: Mono = ()


class RatFuncError(ValueError):
    """Base error for symbolic arithmetic."""


class ZeroDenominatorError(RatFuncError):
    """Denominator is the identically-zero polynomial."""


class MissingParameterError(RatFuncError):
    """A valuation does not cover every parameter of the expression."""


class DomainError(RatFuncError):
    """The denominator evaluates to zero at the given valuation."""


class ParseError(RatFuncError):
    """Malformed expression text."""


def _mono_mul(a: Mono, b: Mono) -> Mono:
    if not a:
        return b
    if not b:
        return a
    exps: dict[str, int] = dict(a)
    for name, e in b:
        exps[name] = exps.get(name, 0) + e
    return tuple(sorted(exps.items()))


def _mono_div(a: Mono, b: Mono) -> Mono | None:
    """a / b, or None if b does not divide a."""
    exps = dict(a)
    for name, e in b:
        r = exps.get(name, 0) - e
        if r < 0:
            return None
        if r == 0:
            exps.pop(name, None)
        else:
            exps[name] = r
    return tuple(sorted(exps.items()))


def _mono_gcd(a: Mono, b: Mono) -> Mono:
    if not a or not b:
        return _CONST_MONO
    db = dict(b)
    out = []
    for name, e in a:
        if name in db:
            out.append((name, min(e, db[name])))
    return tuple(out)


class Polynomial:
    """Immutable sparse polynomial: map monomial -> nonzero Fraction."""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Mono, Fraction]):
        self._terms: dict[Mono, Fraction] = {
            m: c for m, c in terms.items() if c != 0
        }
        self._hash: int | None = None

    @classmethod
    def zero(cls) -> Polynomial:
        return cls({})

    @classmethod
    def constant(cls, value: Fraction | int) -> Polynomial:
        return cls({_CONST_MONO: Fraction(value)})

    @classmethod
    def variable(cls, name: str) -> Polynomial:
        return cls({((name, 1),): Fraction(1)})

    @property
    def terms(self) -> Mapping[Mono, Fraction]:
        return self._terms

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return not self._terms or set(self._terms) == {_CONST_MONO}

    def constant_value(self) -> Fraction:
        """Value of a constant polynomial.

        Raises:
            ValueError: if the polynomial has a non-constant term.
        """
        if not self._terms:
            return Fraction(0)
        if not self.is_constant():
            raise ValueError("polynomial is not constant")
        return self._terms[_CONST_MONO]

    def parameters(self) -> frozenset[str]:
        return frozenset(n for m in self._terms for n, _ in m)

    def __add__(self, other: Polynomial) -> Polynomial:
        out = dict(self._terms)
        for m, c in other._terms.items():
            s = out.get(m, Fraction(0)) + c
            if s == 0:
                out.pop(m, None)
            else:
                out[m] = s
        return Polynomial(out)

    def __neg__(self) -> Polynomial:
        return Polynomial({m: -c for m, c in self._terms.items()})

    def __sub__(self, other: Polynomial) -> Polynomial:
        return self + (-other)

    def __mul__(self, other: Polynomial) -> Polynomial:
        if not self._terms or not other._terms:
            return Polynomial.zero()
        out: dict[Mono, Fraction] = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = _mono_mul(ma, mb)
                s = out.get(m, Fraction(0)) + ca * cb
                if s == 0:
                    out.pop(m, None)
                else:
                    out[m] = s
        return Polynomial(out)

    def scale(self, k: Fraction) -> Polynomial:
        if k == 0:
            return Polynomial.zero()
        return Polynomial({m: c * k for m, c in self._terms.items()})

    def evaluate(self, valuation: Mapping[str, Fraction]) -> Fraction:
        total = Fraction(0)
        for mono, coeff in self._terms.items():
            v = coeff
            for name, e in mono:
                if name not in valuation:
                    raise MissingParameterError(
                        f"no value for parameter {name!r}"
                    )
                v *= Fraction(valuation[name]) ** e
            total += v
        return total

    def derivative(self, param: str) -> Polynomial:
        out: dict[Mono, Fraction] = {}
        for mono, coeff in self._terms.items():
            exps = dict(mono)
            e = exps.get(param, 0)
            if e == 0:
                continue
            if e == 1:
                exps.pop(param)
            else:
                exps[param] = e - 1
            m = tuple(sorted(exps.items()))
            s = out.get(m, Fraction(0)) + coeff * e
            if s == 0:
                out.pop(m, None)
            else:
                out[m] = s
        return Polynomial(out)

    def content(self) -> Fraction:
        """Positive gcd of all coefficients; 0 for the zero polynomial."""
        if not self._terms:
            return Fraction(0)
        num = 0
        den = 1
        for c in self._terms.values():
            num = math.gcd(num, abs(c.numerator))
            den = den * c.denominator // math.gcd(den, c.denominator)
        return Fraction(num, den)

    def monomial_content(self) -> Mono:
        """Largest monomial dividing every term."""
        it = iter(self._terms)
        try:
            g = next(it)
        except StopIteration:
            return _CONST_MONO
        for m in it:
            if not g:
                break
            g = _mono_gcd(g, m)
        return g

    def divide_monomial(self, mono: Mono) -> Polynomial:
        if not mono:
            return self
        out = {}
        for m, c in self._terms.items():
            q = _mono_div(m, mono)
            if q is None:
                raise ValueError("monomial does not divide every term")
            out[q] = c
        return Polynomial(out)

    def sorted_terms(self) -> list[tuple[Mono, Fraction]]:
        """Terms in canonical print order (constant first)."""
        return sorted(self._terms.items(), key=lambda kv: kv[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        parts: list[str] = []
        for i, (mono, coeff) in enumerate(self.sorted_terms()):
            mag = _format_term(mono, abs(coeff))
            if i == 0:
                parts.append(mag if coeff > 0 else f"-{mag}")
            else:
                parts.append(f"+ {mag}" if coeff > 0 else f"- {mag}")
        return " ".join(parts)

    def __repr__(self) -> str:
        return f"Polynomial({self})"


def _format_term(mono: Mono, coeff: Fraction) -> str:
    cs = str(coeff)
    if not mono:
        return cs
    vs = "*".join(n if e == 1 else f"{n}^{e}" for n, e in mono)
    return vs if coeff == 1 else f"{cs}*{vs}"


def _exact_div(f: Polynomial, g: Polynomial) -> Polynomial | None:
    """f / g when the division is exact, else None.

    Leading-term division under a lex order on the joint exponent
    vectors; admissibility of that order makes failure of a leading-term
    step a proof of inexactness. Works on plain exponent tuples so the
    inner loop compares and subtracts without building intermediate
    polynomials.
    """
    if g.is_zero():
        return None
    if f.is_zero():
        return Polynomial.zero()
    if g.is_constant():
        return f.scale(1 / g.constant_value())
    names = sorted(f.parameters() | g.parameters())
    index = {n: i for i, n in enumerate(names)}
    width = len(names)

    def vec(m: Mono) -> tuple[int, ...]:
        row = [0] * width
        for n, e in m:
            row[index[n]] = e
        return tuple(row)

    def unvec(v: tuple[int, ...]) -> Mono:
        return tuple((names[i], e) for i, e in enumerate(v) if e)

    rem = {vec(m): c for m, c in f.terms.items()}
    gv = sorted(((vec(m), c) for m, c in g.terms.items()), reverse=True)
    g_lead, g_lead_c = gv[0]
    g_rest = gv[1:]
    qt: dict[tuple[int, ...], Fraction] = {}
    # Each step strictly lowers the remainder's leading monomial.
    while rem:
        r_lead = max(rem)
        diff = tuple(a - b for a, b in zip(r_lead, g_lead))
        if any(e < 0 for e in diff):
            return None
        qc = rem.pop(r_lead) / g_lead_c
        qt[diff] = qt.get(diff, Fraction(0)) + qc
        for gm, gc in g_rest:
            t = tuple(a + b for a, b in zip(diff, gm))
            nc = rem.get(t, _F0) - qc * gc
            if nc:
                rem[t] = nc
            else:
                rem.pop(t, None)
    return Polynomial({unvec(v): c for v, c in qt.items()})


class RationalFunction:
    """Ratio of two polynomials, normalized on construction."""

    __slots__ = ("num", "den")

    def __init__(self, num: Polynomial, den: Polynomial):
        if den.is_zero():
            raise ZeroDenominatorError("denominator is identically zero")
        num, den = _normalize(num, den)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    def __setattr__(self, name: str, value: object) -> None:
        raise AttributeError("RationalFunction is immutable")

    @classmethod
    def constant(cls, value: Fraction | int) -> RationalFunction:
        return cls(Polynomial.constant(value), Polynomial.constant(1))

    @classmethod
    def variable(cls, name: str) -> RationalFunction:
        return cls(Polynomial.variable(name), Polynomial.constant(1))

    def is_zero(self) -> bool:
        return self.num.is_zero()

    def is_one(self) -> bool:
        return self.num == self.den

    def is_constant(self) -> bool:
        return self.num.is_constant() and self.den.is_constant()

    def constant_value(self) -> Fraction:
        return self.num.constant_value() / self.den.constant_value()

    def parameters(self) -> frozenset[str]:
        return self.num.parameters() | self.den.parameters()

    def __add__(self, other: RationalFunction) -> RationalFunction:
        if self.den == other.den:
            return RationalFunction(self.num + other.num, self.den)
        return RationalFunction(
            self.num * other.den + other.num * self.den,
            self.den * other.den,
        )

    def __sub__(self, other: RationalFunction) -> RationalFunction:
        return self + (-other)

    def __neg__(self) -> RationalFunction:
        return RationalFunction(-self.num, self.den)

    def __mul__(self, other: RationalFunction) -> RationalFunction:
        return RationalFunction(
            self.num * other.num, self.den * other.den
        )

    def __truediv__(self, other: RationalFunction) -> RationalFunction:
        if other.num.is_zero():
            raise ZeroDenominatorError(
                "division by the identically-zero function"
            )
        return RationalFunction(
            self.num * other.den, self.den * other.num
        )

    def evaluate(self, valuation: Mapping[str, Fraction]) -> Fraction:
        """Exact value at a parameter valuation.

        Args:
            valuation: parameter name -> exact rational.

        Raises:
            MissingParameterError: a parameter of the expression has no
                value.
            DomainError: the denominator vanishes at the valuation.
        """
        d = self.den.evaluate(valuation)
        if d == 0:
            raise DomainError("denominator is zero at this valuation")
        return self.num.evaluate(valuation) / d

    def partial_derivative(self, param: str) -> RationalFunction:
        """Quotient-rule derivative with respect to one parameter."""
        n, d = self.num, self.den
        return RationalFunction(
            n.derivative(param) * d - n * d.derivative(param), d * d
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RationalFunction):
            return NotImplemented
        return self.num == other.num and self.den == other.den

    def __hash__(self) -> int:
        return hash((self.num, self.den))

    def __str__(self) -> str:
        return f"({self.num}) / ({self.den})"

    def __repr__(self) -> str:
        return f"RationalFunction({self})"


def _normalize(num: Polynomial, den: Polynomial) -> tuple[Polynomial, Polynomial]:
    if num.is_zero():
        return Polynomial.zero(), Polynomial.constant(1)
    # Shared monomial factor: sound because results are compared by
    # evaluation where both sides are defined.
    mg = _mono_gcd(num.monomial_content(), den.monomial_content())
    if mg:
        num = num.divide_monomial(mg)
        den = den.divide_monomial(mg)
    if not den.is_constant():
        q = _exact_div(num, den)
        if q is not None:
            num, den = q, Polynomial.constant(1)
        elif not num.is_constant():
            q = _exact_div(den, num)
            if q is not None:
                num, den = Polynomial.constant(1), q
    c_num = num.content()
    c_den = den.content()
    c = Fraction(
        math.gcd(c_num.numerator, c_den.numerator),
        (c_num.denominator * c_den.denominator)
        // math.gcd(c_num.denominator, c_den.denominator),
    )
    if c != 1:
        num = num.scale(1 / c)
        den = den.scale(1 / c)
    # Sign convention: first canonical term of the denominator positive.
    lead = min(den.terms)
    if den.terms[lead] < 0:
        num = -num
        den = -den
    return num, den


ZERO = RationalFunction.constant(0)
ONE = RationalFunction.constant(1)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> Iterator[tuple[str, str]]:
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip():
                raise ParseError(
                    f"unexpected character {text[pos:].strip()[0]!r}"
                )
            return
        pos = m.end()
        for kind in ("num", "name", "op"):
            tok = m.group(kind)
            if tok is not None:
                yield kind, tok
                break
    return


def parse(text: str) -> RationalFunction:
    """Parse infix expression text into a rational function.

    Accepts `+ - * / ^` with usual precedence, parentheses, parameter
    identifiers, and integer or decimal literals (decimals are exact:
    "0.05" is 1/20).  This is the inverse of `str()` on any
    RationalFunction.
    """
    tokens = list(_tokenize(text))
    pos = 0

    def peek() -> tuple[str, str] | None:
        return tokens[pos] if pos < len(tokens) else None

    def take() -> tuple[str, str]:
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of expression")
        tok = tokens[pos]
        pos += 1
        return tok

    def parse_expr() -> RationalFunction:
        node = parse_term()
        while (t := peek()) is not None and t[1] in ("+", "-"):
            take()
            rhs = parse_term()
            node = node + rhs if t[1] == "+" else node - rhs
        return node

    def parse_term() -> RationalFunction:
        node = parse_factor()
        while (t := peek()) is not None and t[1] in ("*", "/"):
            take()
            rhs = parse_factor()
            node = node * rhs if t[1] == "*" else node / rhs
        return node

    def parse_factor() -> RationalFunction:
        t = peek()
        if t is not None and t[1] in ("+", "-"):
            take()
            f = parse_factor()
            return f if t[1] == "+" else -f
        node = parse_atom()
        if (t := peek()) is not None and t[1] == "^":
            take()
            kind, val = take()
            if kind != "num" or not val.isdigit():
                raise ParseError("exponent must be a non-negative integer")
            out = ONE
            for _ in range(int(val)):
                out = out * node
            return out
        return node

    def parse_atom() -> RationalFunction:
        kind, val = take()
        if kind == "num":
            return RationalFunction.constant(Fraction(val))
        if kind == "name":
            return RationalFunction.variable(val)
        if val == "(":
            node = parse_expr()
            k, v = take()
            if v != ")":
                raise ParseError("expected ')'")
            return node
        raise ParseError(f"unexpected token {val!r}")

    node = parse_expr()
    if pos != len(tokens):
        raise ParseError(f"trailing input at token {tokens[pos][1]!r}")
    return node


def rf_sum(items: Iterable[RationalFunction]) -> RationalFunction:
    total = ZERO
    for f in items:
        total = total + f
    return total

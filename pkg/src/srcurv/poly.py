"""Exact multivariate polynomials, vector fields and Lie brackets.

Coefficients are either `fractions.Fraction` (exact mode) or `float`
(double mode).  A polynomial carries a single mode; conversion between the
two is explicit via :meth:`Polynomial.to_float`.  Exactness matters because
rank decisions downstream (growth vectors, bracket-generation tests) must
not depend on rounding.
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

Coeff = Union[Fraction, float]
Monomial = tuple[int, ...]


class PolyError(ValueError):
    pass


class ParseError(PolyError):
    """Syntax error in a polynomial expression, with source position."""

    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos}: {text!r}")
        self.pos = pos
        self.text = text


class Polynomial:
    """A polynomial in variables x1..xn, stored as monomial -> coefficient.

    Invariants: no zero coefficients, no duplicate monomials, exponents
    non-negative.  All operations return new objects; instances are
    treated as immutable.
    """

    __slots__ = ("dimension", "terms")

    def __init__(self, dimension: int, terms: Mapping[Monomial, Coeff] | None = None):
        if dimension < 0:
            raise PolyError("dimension must be non-negative")
        clean: dict[Monomial, Coeff] = {}
        for mono, c in (terms or {}).items():
            if len(mono) != dimension:
                raise PolyError(f"monomial {mono} has wrong arity for dimension {dimension}")
            if any(e < 0 for e in mono):
                raise PolyError(f"negative exponent in monomial {mono}")
            if c == 0:
                continue
            key = tuple(int(e) for e in mono)
            if key in clean:
                c = clean[key] + c
                if c == 0:
                    del clean[key]
                    continue
            clean[key] = c
        self.dimension = dimension
        self.terms = clean

    # -- constructors -------------------------------------------------

    @staticmethod
    def zero(dimension: int) -> "Polynomial":
        return Polynomial(dimension, {})

    @staticmethod
    def constant(dimension: int, value: Coeff) -> "Polynomial":
        return Polynomial(dimension, {(0,) * dimension: value})

    @staticmethod
    def variable(dimension: int, index: int) -> "Polynomial":
        """x_{index} with 1-based index."""
        if not 1 <= index <= dimension:
            raise PolyError(f"variable index {index} out of range 1..{dimension}")
        mono = tuple(1 if i == index - 1 else 0 for i in range(dimension))
        return Polynomial(dimension, {mono: Fraction(1)})

    # -- mode ----------------------------------------------------------

    @property
    def exact(self) -> bool:
        return all(isinstance(c, Fraction) for c in self.terms.values())

    def to_float(self) -> "Polynomial":
        return Polynomial(self.dimension, {m: float(c) for m, c in self.terms.items()})

    def to_exact(self) -> "Polynomial":
        return Polynomial(self.dimension, {m: Fraction(c) for m, c in self.terms.items()})

    # -- algebra -------------------------------------------------------

    def _check(self, other: "Polynomial"):
        if self.dimension != other.dimension:
            raise PolyError("dimension mismatch")

    def __add__(self, other: "Polynomial") -> "Polynomial":
        self._check(other)
        terms = dict(self.terms)
        for m, c in other.terms.items():
            terms[m] = terms.get(m, 0) + c
        return Polynomial(self.dimension, terms)

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.dimension, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            self._check(other)
            terms: dict[Monomial, Coeff] = {}
            for m1, c1 in self.terms.items():
                for m2, c2 in other.terms.items():
                    m = tuple(a + b for a, b in zip(m1, m2))
                    terms[m] = terms.get(m, 0) + c1 * c2
            return Polynomial(self.dimension, terms)
        return Polynomial(self.dimension, {m: c * other for m, c in self.terms.items()})

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> "Polynomial":
        if exponent < 0:
            raise PolyError("negative exponent")
        result = Polynomial.constant(self.dimension, Fraction(1))
        base = self
        e = exponent
        while e:
            if e & 1:
                result = result * base
            base = base * base
            e >>= 1
        return result

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Polynomial)
            and self.dimension == other.dimension
            and self.terms == other.terms
        )

    def __hash__(self):
        return hash((self.dimension, frozenset(self.terms.items())))

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self.terms), default=-1)

    # -- calculus ------------------------------------------------------

    def partial(self, index: int) -> "Polynomial":
        """Exact partial derivative with respect to x_{index} (1-based)."""
        if not 1 <= index <= self.dimension:
            raise PolyError(f"variable index {index} out of range")
        i = index - 1
        terms: dict[Monomial, Coeff] = {}
        for m, c in self.terms.items():
            if m[i] == 0:
                continue
            dm = list(m)
            dm[i] -= 1
            terms[tuple(dm)] = terms.get(tuple(dm), 0) + c * m[i]
        return Polynomial(self.dimension, terms)

    def gradient(self) -> list["Polynomial"]:
        return [self.partial(i + 1) for i in range(self.dimension)]

    def __call__(self, point: Sequence) -> Coeff:
        total = 0
        for m, c in self.terms.items():
            v = c
            for x, e in zip(point, m):
                if e:
                    v = v * x**e
            total = total + v
        return total

    def embed(self, dimension: int, offset: int = 0) -> "Polynomial":
        """Reinterpret in a larger variable space; x_i becomes x_{i+offset}."""
        if offset + self.dimension > dimension:
            raise PolyError("embedding does not fit")
        pad_l = (0,) * offset
        pad_r = (0,) * (dimension - offset - self.dimension)
        return Polynomial(dimension, {pad_l + m + pad_r: c for m, c in self.terms.items()})

    # -- printing ------------------------------------------------------

    def __repr__(self):
        return f"Polynomial({self.dimension}, {format_polynomial(self)!r})"

    def __str__(self):
        return format_polynomial(self)


def _coeff_str(c: Coeff) -> str:
    if isinstance(c, Fraction):
        return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"
    return repr(float(c))


def format_polynomial(p: Polynomial) -> str:
    """Canonical printer: graded-lexicographic, descending.

    The output conforms to the parser grammar, so print -> parse is the
    identity on normalized polynomials.
    """
    if not p.terms:
        return "0"
    keys = sorted(p.terms, key=lambda m: (sum(m), m), reverse=True)
    parts: list[str] = []
    for m in keys:
        c = p.terms[m]
        neg = c < 0
        mag = -c if neg else c
        factors = [
            f"x{i + 1}" + (f"^{e}" if e > 1 else "")
            for i, e in enumerate(m)
            if e > 0
        ]
        if not factors:
            body = _coeff_str(mag)
        elif mag == 1 and isinstance(mag, Fraction):
            body = "*".join(factors)
        else:
            body = "*".join([_coeff_str(mag)] + factors)
        if not parts:
            parts.append(("-" if neg else "") + body)
        else:
            parts.append((" - " if neg else " + ") + body)
    return "".join(parts)


# ---------------------------------------------------------------------
# Parser.  Grammar:
#   expr   := term (("+"|"-") term)*
#   term   := coeff ("*" factor)* | factor ("*" factor)*
#   factor := var ("^" uint)?
#   var    := "x" uint
#   coeff  := rational ("p/q") | decimal | integer
# Whitespace insignificant.
# ---------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<var>x\d+)|(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<op>[-+*/^]))"
)


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tokens: list[tuple[str, str, int]] = []
        while self.pos < len(text):
            m = _TOKEN_RE.match(text, self.pos)
            if m is None or m.end() == self.pos:
                if text[self.pos :].strip() == "":
                    break
                raise ParseError("unexpected character", text, self.pos)
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            self.pos = m.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, len(self.text))

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok


def parse_polynomial(text: str, dimension: int) -> Polynomial:
    """Parse one polynomial expression into exact-rational form.

    Decimal literals are converted exactly (0.5 -> 1/2).  Raises
    :class:`ParseError` with position on malformed input, unknown
    variables or negative exponents.
    """
    tz = _Tokenizer(text)
    result = Polynomial.zero(dimension)
    sign = 1
    first = True
    while True:
        kind, val, pos = tz.peek()
        if kind is None:
            if first:
                raise ParseError("empty expression", text, pos)
            break
        if kind == "op" and val in "+-":
            tz.next()
            sign = 1 if val == "+" else -1
            kind, val, pos = tz.peek()
        elif not first:
            raise ParseError("expected '+' or '-'", text, pos)
        term = _parse_term(tz, text, dimension)
        result = result + (term * Fraction(sign))
        first = False
    return result


def _parse_coeff(tz: _Tokenizer, text: str) -> Fraction:
    kind, val, pos = tz.next()
    assert kind == "num"
    num = Fraction(val)
    kind, nval, npos = tz.peek()
    if kind == "op" and nval == "/":
        tz.next()
        kind, dval, dpos = tz.next()
        if kind != "num" or "." in (dval or ""):
            raise ParseError("expected integer denominator", text, dpos)
        den = int(dval)
        if den == 0:
            raise ParseError("zero denominator", text, dpos)
        num = num / den
    return num


def _parse_factor(tz: _Tokenizer, text: str, dimension: int) -> Polynomial:
    kind, val, pos = tz.next()
    if kind != "var":
        raise ParseError("expected variable", text, pos)
    index = int(val[1:])
    if not 1 <= index <= dimension:
        raise ParseError(f"unknown variable {val} (dimension {dimension})", text, pos)
    p = Polynomial.variable(dimension, index)
    kind, nval, npos = tz.peek()
    if kind == "op" and nval == "^":
        tz.next()
        kind, eval_, epos = tz.peek()
        if kind == "op" and eval_ == "-":
            raise ParseError("negative exponent", text, epos)
        kind, eval_, epos = tz.next()
        if kind != "num" or "." in (eval_ or "") or "e" in (eval_ or "").lower():
            raise ParseError("expected non-negative integer exponent", text, epos)
        p = p ** int(eval_)
    return p


def _parse_term(tz: _Tokenizer, text: str, dimension: int) -> Polynomial:
    kind, val, pos = tz.peek()
    if kind == "num":
        term = Polynomial.constant(dimension, _parse_coeff(tz, text))
    elif kind == "var":
        term = _parse_factor(tz, text, dimension)
    else:
        raise ParseError("expected coefficient or variable", text, pos)
    while True:
        kind, val, pos = tz.peek()
        if kind == "op" and val == "*":
            tz.next()
            term = term * _parse_factor(tz, text, dimension)
        else:
            return term


# ---------------------------------------------------------------------
# Vector fields
# ---------------------------------------------------------------------


class PolyVectorField:
    """A polynomial vector field: n components, each a polynomial in x1..xn."""

    __slots__ = ("dimension", "components")

    def __init__(self, components: Sequence[Polynomial]):
        components = tuple(components)
        if not components:
            raise PolyError("empty vector field")
        n = len(components)
        for c in components:
            if c.dimension != n:
                raise PolyError(
                    f"component dimension {c.dimension} != field dimension {n}"
                )
        self.dimension = n
        self.components = components

    @staticmethod
    def from_expressions(expressions: Sequence[str]) -> "PolyVectorField":
        n = len(expressions)
        return PolyVectorField([parse_polynomial(e, n) for e in expressions])

    @property
    def exact(self) -> bool:
        return all(c.exact for c in self.components)

    def to_float(self) -> "PolyVectorField":
        return PolyVectorField([c.to_float() for c in self.components])

    def __call__(self, point: Sequence) -> list:
        return [c(point) for c in self.components]

    def jacobian(self) -> list[list[Polynomial]]:
        """Matrix of exact partials: J[i][j] = d(components[i])/d(x_{j+1})."""
        return [[c.partial(j + 1) for j in range(self.dimension)] for c in self.components]

    def __eq__(self, other):
        return (
            isinstance(other, PolyVectorField) and self.components == other.components
        )

    def __hash__(self):
        return hash(self.components)

    def __add__(self, other: "PolyVectorField") -> "PolyVectorField":
        if self.dimension != other.dimension:
            raise PolyError("dimension mismatch")
        return PolyVectorField(
            [a + b for a, b in zip(self.components, other.components)]
        )

    def __sub__(self, other: "PolyVectorField") -> "PolyVectorField":
        if self.dimension != other.dimension:
            raise PolyError("dimension mismatch")
        return PolyVectorField(
            [a - b for a, b in zip(self.components, other.components)]
        )

    def scale(self, factor) -> "PolyVectorField":
        """Multiply by a scalar or by a Polynomial coefficient."""
        return PolyVectorField([factor * c for c in self.components])

    def apply_to(self, f: Polynomial) -> Polynomial:
        """Directional derivative V(f) = sum_i V_i df/dx_i."""
        out = Polynomial.zero(self.dimension)
        for i, v in enumerate(self.components):
            out = out + v * f.partial(i + 1)
        return out

    def __repr__(self):
        return "PolyVectorField([" + ", ".join(str(c) for c in self.components) + "])"


def parse_polynomial_field(expressions: Sequence[str]) -> PolyVectorField:
    """Build a vector field from one expression per component.

    The component count fixes the dimension, so every expression must use
    only variables x1..xn with n = len(expressions).
    """
    return PolyVectorField.from_expressions(list(expressions))


def zero_field(dimension: int) -> PolyVectorField:
    return PolyVectorField([Polynomial.zero(dimension)] * dimension)


def lie_bracket(v: PolyVectorField, w: PolyVectorField) -> PolyVectorField:
    """Exact Lie bracket [V, W] = (DW)V - (DV)W."""
    if v.dimension != w.dimension:
        raise PolyError("dimension mismatch in lie_bracket")
    n = v.dimension
    comps = []
    for k in range(n):
        acc = Polynomial.zero(n)
        wk = w.components[k]
        vk = v.components[k]
        for j in range(n):
            acc = acc + wk.partial(j + 1) * v.components[j]
            acc = acc - vk.partial(j + 1) * w.components[j]
        comps.append(acc)
    return PolyVectorField(comps)

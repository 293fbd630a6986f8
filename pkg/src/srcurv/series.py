"""Truncated Taylor series over floats or exact rationals.

Series are plain lists of coefficients [c0, c1, ..., c_order]; all
operations truncate at the order of the shorter operand's container.
The main consumer is the Taylor-mode propagation of a Hamiltonian
extremal, where the polynomial right-hand side makes the recursion for
the coefficients exact.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

from .poly import Polynomial


def s_const(value, order: int) -> list:
    zero = value * 0
    return [value] + [zero] * order


def s_add(a: list, b: list) -> list:
    return [x + y for x, y in zip(a, b)]


def s_scale(a: list, factor) -> list:
    return [factor * x for x in a]


def s_mul(a: list, b: list) -> list:
    order = min(len(a), len(b)) - 1
    zero = a[0] * 0
    out = [zero] * (order + 1)
    for i, ai in enumerate(a[: order + 1]):
        if ai == 0:
            continue
        for j in range(order + 1 - i):
            out[i + j] = out[i + j] + ai * b[j]
    return out


def s_diff(a: list) -> list:
    """Derivative; the result is one order shorter, padded with zero."""
    zero = a[0] * 0
    if len(a) == 1:
        return [zero]
    return [(i + 1) * a[i + 1] for i in range(len(a) - 1)] + [zero]


def s_pow(a: list, exponent: int) -> list:
    one = a[0] * 0 + (Fraction(1) if isinstance(a[0], Fraction) else 1.0)
    out = s_const(one, len(a) - 1)
    base = a
    e = exponent
    while e:
        if e & 1:
            out = s_mul(out, base)
        base = s_mul(base, base)
        e >>= 1
    return out


def poly_on_series(p: Polynomial, series: Sequence[list]) -> list:
    """Evaluate a polynomial with a Taylor series substituted per variable."""
    order = len(series[0]) - 1 if series else 0
    exact = all(isinstance(c, Fraction) for s in series for c in s)
    zero = Fraction(0) if exact else 0.0
    out = s_const(zero, order)
    cache: dict[tuple[int, int], list] = {}

    def var_power(i: int, e: int) -> list:
        key = (i, e)
        if key not in cache:
            cache[key] = s_pow(series[i], e)
        return cache[key]

    for mono, coeff in p.terms.items():
        term = s_const(zero + coeff, order)
        for i, e in enumerate(mono):
            if e:
                term = s_mul(term, var_power(i, e))
        out = s_add(out, term)
    return out


def extremal_taylor(flow: Sequence[Polynomial], z0: Sequence, order: int) -> list[list]:
    """Taylor coefficients of z(t) with z' = flow(z), z(0) = z0.

    Standard Taylor-mode recursion: with z known to order o-1, the o-th
    coefficient is flow(z)_{o-1} / o.  Exact when z0 and the flow are
    rational; float otherwise.
    """
    dim = len(flow)
    exact = all(isinstance(c, Fraction) for c in z0) and all(p.exact for p in flow)
    if exact:
        zs = [s_const(Fraction(z0[i]), order) for i in range(dim)]
    else:
        zs = [s_const(float(z0[i]), order) for i in range(dim)]
    for o in range(1, order + 1):
        rhs = [poly_on_series(p, zs) for p in flow]
        for i in range(dim):
            div = Fraction(o) if exact else float(o)
            zs[i][o] = rhs[i][o - 1] / div
    return zs

"""Closed-form invariants of linear-quadratic problems.

For x' = Ax + Bu with cost |u|^2/2 everything is computable from the
controllability Gramian

    C(t) = int_0^t e^{-sA} B B^T e^{-sA^T} ds:

the family Q(t) = -B^T (d/dt C(t)^{-1}) B, the leading operator with the
squared Kronecker indices as eigenvalues, and the curvature
R = -(3/2) (d^2/dt^2)|_0 (t B^T C(t)^{-1} B).  The Laurent coefficients
are extracted from an exact rational series for C(t), so this module is
an independent oracle for the generic Jacobi pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm

from .linalg import exact_rank


class LQError(ValueError):
    pass


class SeriesBoundError(RuntimeError):
    """The rigorous truncation bound could not be met at the allowed order."""


@dataclass(frozen=True)
class LQSystem:
    a: tuple
    b: tuple
    n: int
    k: int
    depth: int
    kronecker_indices: tuple[int, ...]
    kalman_ranks: tuple[int, ...]

    @staticmethod
    def from_matrices(a_rows, b_rows) -> "LQSystem":
        a = tuple(tuple(Fraction(x) for x in row) for row in a_rows)
        b = tuple(tuple(Fraction(x) for x in row) for row in b_rows)
        n = len(a)
        if any(len(row) != n for row in a):
            raise LQError("A must be square")
        if len(b) != n:
            raise LQError("B must have n rows")
        k = len(b[0])

        def matmul(m1, m2):
            return tuple(
                tuple(sum(m1[i][l] * m2[l][j] for l in range(len(m2))) for j in range(len(m2[0])))
                for i in range(len(m1))
            )

        ranks = []
        block = b
        columns: list[list[Fraction]] = []
        for _i in range(n):
            columns.extend([[block[r][c] for r in range(n)] for c in range(k)])
            ranks.append(exact_rank(columns))
            if ranks[-1] == n:
                break
            block = matmul(a, block)
        if ranks[-1] != n:
            raise LQError("system is not controllable (Kalman rank deficient)")
        depth = len(ranks)
        diffs = [ranks[0]] + [ranks[i] - ranks[i - 1] for i in range(1, depth)]
        if any(diffs[i + 1] > diffs[i] for i in range(len(diffs) - 1)):
            raise LQError("Kalman rank increments must be non-increasing")
        indices = tuple(
            sum(1 for d in diffs if d >= j) for j in range(1, diffs[0] + 1)
        )
        return LQSystem(
            a=a, b=b, n=n, k=k, depth=depth,
            kronecker_indices=indices, kalman_ranks=tuple(ranks),
        )

    def a_float(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.a])

    def b_float(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.b])


# ---------------------------------------------------------------------
# Gramian
# ---------------------------------------------------------------------


def _gramian_series_terms(sys: LQSystem, order: int, exact: bool):
    """Coefficients C_q (q = 1..order) of C(t) = sum C_q t^q."""
    if exact:
        a = np.array(sys.a, dtype=object)
        b = np.array(sys.b, dtype=object)
        one = Fraction(1)
    else:
        a = sys.a_float()
        b = sys.b_float()
        one = 1.0
    # powers (-A)^j B / j!
    terms = [b * one]
    for j in range(1, order):
        terms.append((-(a @ terms[-1])) * (one / j))
    coeffs = [None] * (order + 1)
    for q in range(1, order + 1):
        acc = None
        for j in range(0, q):
            l = q - 1 - j
            if l >= len(terms):
                continue
            block = terms[j] @ terms[l].T
            acc = block if acc is None else acc + block
        coeffs[q] = acc * (one / q)
    return coeffs


def lq_gramian(sys: LQSystem, t: float, tol: float = 1e-10) -> np.ndarray:
    """Controllability Gramian at t, computed two ways and cross-checked.

    Route one is adaptive quadrature of the matrix-exponential integrand;
    route two a power series in t whose tail is bounded rigorously.  A
    disagreement beyond tol means one of the routes failed: raise.
    """
    if t <= 0:
        raise LQError("t must be positive")
    a = sys.a_float()
    b = sys.b_float()

    def integrand(s):
        e = expm(-s * a)
        m = e @ b
        return m @ m.T

    quad, _err = quad_vec(integrand, 0.0, t, epsabs=1e-13, epsrel=1e-13)

    norm_a = float(np.linalg.norm(a, 2))
    norm_b2 = float(np.linalg.norm(b, 2)) ** 2
    u = 2.0 * norm_a * t
    order = 2 * sys.depth + 4
    while True:
        tail = norm_b2 * t * math.exp(u) * u**order / math.factorial(order)
        if tail < 1e-14 * max(1.0, norm_b2 * t):
            break
        order += 4
        if order > 300:
            raise SeriesBoundError("Gramian series tail bound not met")
    coeffs = _gramian_series_terms(sys, order, exact=False)
    series = sum(coeffs[q] * t**q for q in range(1, order + 1))

    scale = 1.0 + float(np.max(np.abs(quad)))
    if float(np.max(np.abs(quad - series))) > tol * scale:
        raise SeriesBoundError(
            f"Gramian routes disagree beyond {tol:g} at t = {t:g}"
        )
    return 0.5 * (series + series.T)


# ---------------------------------------------------------------------
# Exact Laurent data of B^T C(t)^{-1} B
# ---------------------------------------------------------------------


def _poly_mul(p: list, q: list, length: int) -> list:
    out = [Fraction(0)] * length
    for i, pi in enumerate(p):
        if pi == 0:
            continue
        for j, qj in enumerate(q):
            if i + j >= length:
                break
            out[i + j] += pi * qj
    return out


def _series_inv_unit(d: list, length: int) -> list:
    """Inverse of a series with nonzero constant term."""
    inv = [Fraction(0)] * length
    inv[0] = 1 / d[0]
    for i in range(1, length):
        acc = Fraction(0)
        for j in range(1, min(i, len(d) - 1) + 1):
            acc += d[j] * inv[i - j]
        inv[i] = -acc / d[0]
    return inv


@dataclass(frozen=True)
class LQCurvature:
    system: LQSystem
    i_matrix: np.ndarray
    r_matrix: np.ndarray
    i_exact: tuple
    r_exact: tuple
    laurent: dict

    def q_of_t(self, t: float) -> np.ndarray:
        """Q(t) = B^T C(t)^{-1} Cdot(t) C(t)^{-1} B via the exact integrand."""
        a = self.system.a_float()
        b = self.system.b_float()
        c = lq_gramian(self.system, t)
        e = expm(-t * a) @ b
        m = b.T @ np.linalg.solve(c, e)
        return m @ m.T


def lq_curvature(sys: LQSystem, extra_order: int = 6) -> LQCurvature:
    """Exact Laurent coefficients of G(t) = B^T C(t)^{-1} B.

    G has a simple pole: G = I/t - (R/3) t + O(t^2) up to chart-free
    terms, with spec(I) the squared Kronecker indices.  Computed by
    exact rational series inversion of the Gramian via adjugate and
    determinant; the absence of higher-order poles is asserted.
    """
    n, k = sys.n, sys.k
    gd = sum((2 * i + 1) * d for i, d in enumerate(_diffs(sys)))
    order = gd + 2 * sys.depth + extra_order
    coeffs = _gramian_series_terms(sys, order, exact=True)
    length = order + 1
    # entries of C as polynomials in t (index = power)
    entries = [
        [
            [Fraction(0)] + [coeffs[q][i][j] if coeffs[q] is not None else Fraction(0) for q in range(1, order + 1)]
            for j in range(n)
        ]
        for i in range(n)
    ]

    def det_of(rows, cols) -> list:
        out = [Fraction(0)] * length
        idx = list(range(len(rows)))
        for perm in permutations(idx):
            sign = _perm_sign(perm)
            prod = [Fraction(1)] + [Fraction(0)] * (length - 1)
            for r, c in zip(idx, perm):
                prod = _poly_mul(prod, entries[rows[r]][cols[c]], length)
            if sign > 0:
                out = [x + y for x, y in zip(out, prod)]
            else:
                out = [x - y for x, y in zip(out, prod)]
        return out

    det = det_of(list(range(n)), list(range(n)))
    pole = next((q for q, v in enumerate(det) if v != 0), None)
    if pole is None:
        raise LQError("Gramian determinant vanished at the series order")
    if pole != gd:
        raise LQError(
            f"determinant order {pole} does not match the geodesic dimension {gd}"
        )
    unit = det[pole:]
    unit_inv = _series_inv_unit(unit, length - pole)

    b_exact = np.array(sys.b, dtype=object)
    g_laurent: dict[int, np.ndarray] = {}
    # adjugate entries: adj[i][j] = (-1)^{i+j} minor_{ji}
    for p_out in range(-1, 2):
        g_laurent[p_out] = np.zeros((k, k), dtype=object)
        for i in range(k):
            for j in range(k):
                g_laurent[p_out][i, j] = Fraction(0)
    rows_all = list(range(n))
    for r in range(n):
        for c in range(n):
            minor_rows = [x for x in rows_all if x != c]
            minor_cols = [x for x in rows_all if x != r]
            minor = det_of(minor_rows, minor_cols) if n > 1 else [Fraction(1)] + [Fraction(0)] * (length - 1)
            sign = -1 if (r + c) % 2 else 1
            # (C^{-1})_{rc} = sign * minor / det = t^{-pole} * sign*minor*unit_inv
            ratio = _poly_mul(minor, unit_inv, length)
            for p_out in range(-1, 2):
                power_idx = p_out + pole
                if 0 <= power_idx < length:
                    v = ratio[power_idx] * sign
                    if v == 0:
                        continue
                    for i in range(k):
                        for j in range(k):
                            g_laurent[p_out][i, j] += b_exact[r][i] * v * b_exact[c][j]
            # assert no higher-order poles survive the sandwich
    # deep pole check (powers < -1 must cancel exactly)
    for deep in range(2, pole + 1):
        acc = np.zeros((k, k), dtype=object)
        for i in range(k):
            for j in range(k):
                acc[i, j] = Fraction(0)
        for r in range(n):
            for c in range(n):
                minor_rows = [x for x in rows_all if x != c]
                minor_cols = [x for x in rows_all if x != r]
                minor = det_of(minor_rows, minor_cols) if n > 1 else [Fraction(1)] + [Fraction(0)] * (length - 1)
                sign = -1 if (r + c) % 2 else 1
                ratio = _poly_mul(minor, unit_inv, length)
                idxp = pole - deep
                if 0 <= idxp < length:
                    v = ratio[idxp] * sign
                    if v == 0:
                        continue
                    for i in range(k):
                        for j in range(k):
                            acc[i, j] += b_exact[r][i] * v * b_exact[c][j]
        if any(acc[i, j] != 0 for i in range(k) for j in range(k)):
            raise LQError(f"unexpected pole of order {deep} in the reduced block")

    i_exact = tuple(tuple(g_laurent[-1][i, j] for j in range(k)) for i in range(k))
    r_exact = tuple(tuple(-3 * g_laurent[1][i, j] for j in range(k)) for i in range(k))
    i_matrix = np.array([[float(v) for v in row] for row in i_exact])
    r_matrix = np.array([[float(v) for v in row] for row in r_exact])
    eigs = np.sort(np.linalg.eigvalsh(i_matrix))[::-1]
    expected = np.array(sorted((m * m for m in sys.kronecker_indices), reverse=True), float)
    if np.max(np.abs(eigs - expected)) > 1e-9 * max(1.0, float(np.max(expected))):
        raise LQError(
            f"leading eigenvalues {eigs} do not equal squared Kronecker "
            f"indices {expected}"
        )
    return LQCurvature(
        system=sys,
        i_matrix=i_matrix,
        r_matrix=r_matrix,
        i_exact=i_exact,
        r_exact=r_exact,
        laurent=g_laurent,
    )


def _diffs(sys: LQSystem):
    prev = 0
    out = []
    for r in sys.kalman_ranks:
        out.append(r - prev)
        prev = r
    return out


def _perm_sign(perm) -> int:
    sign = 1
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        cycle = 0
        j = i
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            cycle += 1
        if cycle % 2 == 0:
            sign = -sign
    return sign

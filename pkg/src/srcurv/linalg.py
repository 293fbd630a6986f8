"""Small linear-algebra helpers: exact ranks and guarded numerical ranks."""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numpy as np


class RankIndeterminateError(RuntimeError):
    """Singular values straddle the tolerance band; the rank decision is unsafe."""

    def __init__(self, singular_values, tol):
        super().__init__(
            "rank indeterminate: singular values "
            f"{np.array2string(np.asarray(singular_values), precision=3)} "
            f"straddle tolerance {tol:g}"
        )
        self.singular_values = np.asarray(singular_values)
        self.tol = tol


def exact_rank(rows: Sequence[Sequence[Fraction]]) -> int:
    """Rank of a matrix over the rationals by fraction-free Gauss elimination."""
    m = [[Fraction(x) for x in row] for row in rows]
    if not m:
        return 0
    nrows, ncols = len(m), len(m[0])
    rank = 0
    col = 0
    for col in range(ncols):
        pivot = None
        for r in range(rank, nrows):
            if m[r][col] != 0:
                pivot = r
                break
        if pivot is None:
            continue
        m[rank], m[pivot] = m[pivot], m[rank]
        pv = m[rank][col]
        for r in range(rank + 1, nrows):
            if m[r][col] != 0:
                f = m[r][col] / pv
                m[r] = [a - f * b for a, b in zip(m[r], m[rank])]
        rank += 1
        if rank == nrows:
            break
    return rank


def numeric_rank(
    a: np.ndarray,
    rel_tol: float = 1e-8,
    gap_ratio: float = 10.0,
    strict: bool = True,
) -> int:
    """Numerical rank via SVD.

    Singular values below rel_tol * sigma_max count as zero.  If the last
    kept and first dropped singular values are closer than `gap_ratio`,
    the decision is ambiguous: raise RankIndeterminateError (strict) or
    keep the thresholded count (non-strict).
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0:
        return 0
    thresh = rel_tol * s[0]
    r = int(np.sum(s > thresh))
    if strict and 0 < r < len(s) and s[r] > 0 and s[r - 1] / s[r] < gap_ratio:
        raise RankIndeterminateError(s, thresh)
    return r


def complete_frame(columns: np.ndarray) -> np.ndarray:
    """Extend k independent n-vectors to an invertible n x n matrix.

    The first k columns are kept verbatim; the remaining ones are chosen
    deterministically from the standard basis (largest residual first)
    and orthonormalized against everything before them.
    """
    cols = np.asarray(columns, dtype=float)
    n, k = cols.shape
    if np.linalg.matrix_rank(cols) < k:
        raise ValueError("columns are not linearly independent")
    q, _ = np.linalg.qr(cols)
    basis = [cols[:, i] for i in range(k)]
    qcols = [q[:, i] for i in range(k)]
    for _ in range(n - k):
        resid = np.eye(n) - sum(np.outer(u, u) for u in qcols)
        scores = np.linalg.norm(resid, axis=0)
        j = int(np.argmax(np.round(scores, 12)))
        v = resid[:, j]
        v = v / np.linalg.norm(v)
        basis.append(v)
        qcols.append(v)
    return np.column_stack(basis)


def fit_least_squares(ts: np.ndarray, values: np.ndarray, powers: Sequence[float]):
    """Fit values(t) = sum_j c_j t**powers[j]; returns (coeffs, residual).

    `values` may be shaped (m,) or (m, ...) for entry-wise matrix fits.
    The design matrix is scaled per column for conditioning; the residual
    is the max-norm of the misfit relative to the max sample magnitude.
    """
    ts = np.asarray(ts, dtype=float)
    vals = np.asarray(values, dtype=float)
    design = np.column_stack([ts**p for p in powers])
    scale = np.linalg.norm(design, axis=0)
    design = design / scale
    flat = vals.reshape(len(ts), -1)
    sol, *_ = np.linalg.lstsq(design, flat, rcond=None)
    fitted = design @ sol
    denom = max(np.max(np.abs(flat)), 1e-300)
    residual = float(np.max(np.abs(fitted - flat)) / denom)
    coeffs = (sol.T / scale).T
    return coeffs.reshape((len(powers),) + vals.shape[1:]), residual

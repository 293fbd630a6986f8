"""Growth vector of a geodesic, Young diagram, geodesic dimension,
state-feedback transforms and the exact bracket route to the flag.

The flag is computed from the matrices of the linearized system along
the extremal,

    A(t) = df0/dx + sum_i u_i(t) df_i/dx,   B(t) = [f_i(gamma(t))],

through the recursion B_{i+1} = A B_i - B_i'.  The time derivative is
taken in Taylor-series arithmetic (the extremal has polynomial
right-hand side), never by finite differences: rank decisions survive
only if the derivatives are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .linalg import exact_rank, numeric_rank
from .model import ControlModel, ModelError
from .poly import Polynomial, PolyVectorField, lie_bracket
from .series import (
    extremal_taylor,
    poly_on_series,
    s_add,
    s_const,
    s_diff,
    s_mul,
    s_scale,
)
from . import hamflow


@dataclass(frozen=True)
class GrowthVector:
    """The dimensions k_1 <= ... <= k_m of the flag of a geodesic at time t."""

    ks: tuple[int, ...]
    t: float
    rank_tol: float
    equiregular: bool | None = None

    def is_ample(self, n: int) -> bool:
        return bool(self.ks) and self.ks[-1] == n

    @property
    def differences(self) -> tuple[int, ...]:
        prev = 0
        out = []
        for k in self.ks:
            out.append(k - prev)
            prev = k
        return tuple(out)

    def validate(self, n: int):
        ks = self.ks
        if not ks or ks[0] <= 0:
            raise ValueError("growth vector must start positive")
        if any(b < a for a, b in zip(ks, ks[1:])):
            raise ValueError("growth vector must be non-decreasing")
        if ks[-1] > n:
            raise ValueError("growth vector exceeds ambient dimension")
        d = self.differences
        if any(d[i + 1] > d[i] for i in range(len(d) - 1)):
            raise ValueError(f"flag differences {d} must be non-increasing")
        if self.is_ample(n) and any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("ample growth vector must be strictly increasing")


@dataclass(frozen=True)
class YoungDiagram:
    """Row lengths n_1 >= ... >= n_k, the conjugate of the flag differences."""

    rows: tuple[int, ...]

    def __post_init__(self):
        if any(b > a for a, b in zip(self.rows, self.rows[1:])):
            raise ValueError("rows must be non-increasing")

    @property
    def size(self) -> int:
        return sum(self.rows)

    @property
    def trace_identity(self) -> int:
        """sum of squared row lengths; the trace of the leading operator."""
        return sum(r * r for r in self.rows)


def linearization_matrices(model: ControlModel, covector, t: float, tol: float = 1e-10):
    """(A(t), B(t)) of the linearized system along the extremal from `covector`.

    The fields are differentiated exactly; only the extremal point is
    numerical (and only when t > 0).
    """
    if t == 0.0:
        state = hamflow.initial_state(model, covector)
    else:
        traj = hamflow.integrate_extremal(
            model, hamflow.initial_state(model, covector), t, tol
        )
        state = traj.state(t)
    u = hamflow.normal_control(model, state)
    x = state.x
    n = model.n
    a = np.zeros((n, n))
    if model.drift is not None:
        for i, row in enumerate(model.drift.jacobian()):
            for j, p in enumerate(row):
                a[i, j] += float(p(x))
    for idx, jac in enumerate(model.field_jacobians()):
        for i, row in enumerate(jac):
            for j, p in enumerate(row):
                a[i, j] += u[idx] * float(p(x))
    b = np.column_stack([[float(c) for c in f(x)] for f in model.fields])
    return a, b


def _phase_series(model: ControlModel, covector, t: float, order: int, tol: float):
    """Taylor series of the extremal phase point around time t."""
    if t == 0.0:
        z0 = list(model.x0) + list(covector)
        if model.exact and all(isinstance(c, (Fraction, int)) for c in covector):
            z0 = [Fraction(c) for c in z0]
        else:
            z0 = [float(c) for c in z0]
    else:
        traj = hamflow.integrate_extremal(
            model, hamflow.initial_state(model, covector), t, tol
        )
        z0 = [float(v) for v in traj.state(t).z]
    flow = model.flow_polys()
    if not all(isinstance(c, Fraction) for c in z0):
        flow = [p.to_float() for p in flow]
    return extremal_taylor(flow, z0, order)


def _series_linearization(model: ControlModel, zs, order: int):
    """A(s), B(s) as matrices of Taylor series along the propagated extremal."""
    n, k = model.n, model.k
    exact = isinstance(zs[0][0], Fraction)
    zero = Fraction(0) if exact else 0.0
    xs = zs[:n]
    ps = zs[n:]

    u_series = []
    for f in model.fields:
        acc = s_const(zero, order)
        for j, comp in enumerate(f.components):
            acc = s_add(acc, s_mul(poly_on_series(comp, xs), ps[j]))
        u_series.append(acc)

    a = [[s_const(zero, order) for _ in range(n)] for _ in range(n)]
    if model.drift is not None:
        for i, row in enumerate(model.drift.jacobian()):
            for j, p in enumerate(row):
                a[i][j] = s_add(a[i][j], poly_on_series(p, xs))
    for idx, jac in enumerate(model.field_jacobians()):
        for i, row in enumerate(jac):
            for j, p in enumerate(row):
                a[i][j] = s_add(a[i][j], s_mul(u_series[idx], poly_on_series(p, xs)))
    b = [
        [poly_on_series(f.components[i], xs) for f in model.fields]
        for i in range(n)
    ]
    return a, b


def _series_matmul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = []
    for i in range(rows):
        row = []
        for j in range(cols):
            acc = s_mul(a[i][0], b[0][j])
            for l in range(1, inner):
                acc = s_add(acc, s_mul(a[i][l], b[l][j]))
            row.append(acc)
        out.append(row)
    return out


def _series_mat_diff(b):
    return [[s_diff(entry) for entry in row] for row in b]


def growth_vector(
    model: ControlModel,
    covector,
    t: float = 0.0,
    depth_max: int | None = None,
    rank_tol: float = 1e-8,
    tol: float = 1e-10,
    check_equiregular: bool = False,
    equi_eps: float = 1e-2,
) -> GrowthVector:
    """Growth vector k_i = rank{B_1(t), ..., B_i(t)} of the geodesic flag.

    Stops at full rank or depth_max.  Raises RankIndeterminateError when
    singular values straddle the tolerance band (gap ratio below 10).
    """
    if depth_max is None:
        depth_max = model.n
    if depth_max < 1:
        raise ValueError("depth_max must be >= 1")
    order = depth_max + 2
    zs = _phase_series(model, covector, t, order, tol)
    a, b = _series_linearization(model, zs, order)

    ks: list[int] = []
    stacked: list[np.ndarray] = []
    bi = b
    for _i in range(depth_max):
        const = np.array([[float(entry[0]) for entry in row] for row in bi])
        stacked.append(const)
        mat = np.hstack(stacked)
        r = numeric_rank(mat, rel_tol=rank_tol)
        ks.append(r)
        if r == model.n:
            break
        ab = _series_matmul(a, bi)
        db = _series_mat_diff(bi)
        bi = [
            [s_add(x, s_scale(y, -1)) for x, y in zip(row_ab, row_db)]
            for row_ab, row_db in zip(ab, db)
        ]
    gv = GrowthVector(ks=tuple(ks), t=t, rank_tol=rank_tol)
    gv.validate(model.n)
    if check_equiregular:
        rng = np.random.default_rng(20240 + len(ks))
        jitters = rng.uniform(equi_eps * 0.1, equi_eps, size=5)
        same = all(
            growth_vector(model, covector, t=float(t + dt), depth_max=depth_max,
                          rank_tol=rank_tol, tol=tol).ks == gv.ks
            for dt in jitters
        )
        gv = GrowthVector(ks=gv.ks, t=t, rank_tol=rank_tol, equiregular=same)
    return gv


def young_diagram_and_dimension(gv: GrowthVector, n: int | None = None):
    """Conjugate-partition diagram, geodesic dimension and trace identity.

    Returns (YoungDiagram, N) with N = sum (2i - 1) d_i.  Requires an
    ample growth vector (k_m = n).
    """
    if n is not None and not gv.is_ample(n):
        raise ValueError(f"growth vector {gv.ks} is not ample (n = {n})")
    d = gv.differences
    if any(d[i + 1] > d[i] for i in range(len(d) - 1)):
        raise ValueError("flag differences must be non-increasing")
    k = d[0]
    rows = tuple(sum(1 for di in d if di >= a) for a in range(1, k + 1))
    diagram = YoungDiagram(rows=rows)
    dimension = sum((2 * i + 1) * di for i, di in enumerate(d))
    return diagram, dimension


def geodesic_dimension(gv: GrowthVector) -> int:
    return sum((2 * i + 1) * di for i, di in enumerate(gv.differences))


# ---------------------------------------------------------------------
# State feedback
# ---------------------------------------------------------------------


def _poly_matrix_inverse(psi: list[list[Polynomial]]):
    """Inverse of a polynomial matrix with constant nonzero determinant.

    Polynomial presentations stay polynomial only when det(Psi) is a
    nonzero constant (adjugate over a unit), which covers constant
    rotations and unimodular shears.
    """
    k = len(psi)
    n = psi[0][0].dimension

    def minor(mat, i, j):
        return [
            [mat[r][c] for c in range(k) if c != j] for r in range(k) if r != i
        ]

    def det(mat) -> Polynomial:
        m = len(mat)
        if m == 1:
            return mat[0][0]
        acc = Polynomial.zero(n)
        for j in range(m):
            cof = det(minor(mat, 0, j))
            term = mat[0][j] * cof
            acc = acc + (term if j % 2 == 0 else -term)
        return acc

    d = det(psi)
    if d.degree() > 0:
        raise ModelError(
            "feedback matrix must have constant determinant to keep the "
            "presentation polynomial"
        )
    if d.is_zero():
        raise ModelError("feedback matrix is singular")
    dval = d.terms[(0,) * n]
    inv = [[Polynomial.zero(n) for _ in range(k)] for _ in range(k)]
    for i in range(k):
        for j in range(k):
            cof = det(minor(psi, j, i))
            sign = 1 if (i + j) % 2 == 0 else -1
            inv[i][j] = cof * (Fraction(sign, 1) / dval)
    return inv


def feedback_transform(
    model: ControlModel,
    psi0: list[Polynomial] | None,
    psi: list[list[Polynomial]],
) -> ControlModel:
    """Presentation after the pure feedback u'_i = psi_{i,0} + sum_j psi_{i,j} u_j.

    The returned fields satisfy f_i = sum_j psi_{j,i} f'_j and
    f0 = f0' + sum_i psi_{i,0} f'_i; the flag of any admissible curve is
    unchanged, which is what the tests exercise.
    """
    k, n = model.k, model.n
    if len(psi) != k or any(len(row) != k for row in psi):
        raise ModelError("psi must be a k x k matrix of polynomials")
    psi_x0 = np.array([[float(p(model.x0)) for p in row] for row in psi])
    if abs(np.linalg.det(psi_x0)) < 1e-12:
        raise ModelError("feedback matrix is singular at the base point")
    inv = _poly_matrix_inverse(psi)
    # columns: f'_j = sum_i f_i * inv[i][j]  (from F = F' Psi, F' = F Psi^{-1})
    new_fields = []
    for j in range(k):
        comps = [Polynomial.zero(n) for _ in range(n)]
        for i in range(k):
            coeff = inv[i][j]
            for c in range(n):
                comps[c] = comps[c] + coeff * model.fields[i].components[c]
        new_fields.append(PolyVectorField(comps))
    drift = model.drift
    if psi0 is not None:
        if len(psi0) != k:
            raise ModelError("psi0 must have k components")
        base = drift.components if drift is not None else [Polynomial.zero(n)] * n
        comps = list(base)
        for i in range(k):
            for c in range(n):
                comps[c] = comps[c] - psi0[i] * new_fields[i].components[c]
        drift = PolyVectorField(comps)
    return ControlModel(
        name=model.name + "#feedback",
        n=n,
        k=k,
        drift=drift,
        fields=tuple(new_fields),
        x0=model.x0,
        bracket_depth=model.bracket_depth,
    )


def flag_from_brackets(
    model: ControlModel, control, depth_max: int | None = None
) -> GrowthVector:
    """Flag at t = 0 of the constant-control curve, via exact Lie derivatives.

    With T = f0 + sum u_i f_i, the i-th flag space is spanned by the
    iterated brackets ad_T^j(f_l) at x0 for j < i.  Exact rational ranks;
    must agree with growth_vector on the same curve.
    """
    if not model.exact:
        raise ModelError("flag_from_brackets requires an exact-rational model")
    u = [Fraction(c) for c in control]
    if len(u) != model.k:
        raise ModelError("control dimension mismatch")
    n = model.n
    if depth_max is None:
        depth_max = n
    tfield = model.drift if model.drift is not None else None
    comps = [Polynomial.zero(n) for _ in range(n)]
    if tfield is not None:
        comps = list(tfield.components)
    for ui, f in zip(u, model.fields):
        comps = [c + ui * fc for c, fc in zip(comps, f.components)]
    tfield = PolyVectorField(comps)

    layers = [list(model.fields)]
    for _ in range(depth_max - 1):
        layers.append([lie_bracket(tfield, g) for g in layers[-1]])

    ks = []
    vectors: list[list[Fraction]] = []
    for layer in layers:
        vectors.extend([[Fraction(c) for c in g(model.x0)] for g in layer])
        r = exact_rank(vectors)
        ks.append(r)
        if r == n:
            break
    return GrowthVector(ks=tuple(ks), t=0.0, rank_tol=0.0)

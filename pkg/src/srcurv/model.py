"""Control models: polynomial drift + controlled fields with a base point.

A model fixes the cost convention L(x, u) = |u|^2 / 2, so the controlled
fields are by construction an orthonormal generating family of the
structure it defines.  Validation enforces linear independence of the
controlled fields at the base point and the bracket-generating condition
up to a configurable depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .linalg import complete_frame, exact_rank
from .poly import (
    Polynomial,
    PolyVectorField,
    lie_bracket,
    parse_polynomial,
    parse_polynomial_field,
)


class ModelError(ValueError):
    pass


def _phase_embed(p: Polynomial, n: int) -> Polynomial:
    """View a polynomial in x1..xn as one in phase variables (x, p)."""
    return p.embed(2 * n, offset=0)


def _momentum(n: int, j: int) -> Polynomial:
    """The fiber coordinate p_j as a phase-space polynomial (1-based j)."""
    return Polynomial.variable(2 * n, n + j)


class _PolyEval:
    """Float-compiled polynomial: coefficient vector + exponent matrix."""

    __slots__ = ("coeffs", "expos", "dim")

    def __init__(self, p: Polynomial):
        self.dim = p.dimension
        monos = list(p.terms)
        self.coeffs = np.array([float(p.terms[m]) for m in monos], dtype=float)
        self.expos = np.array(monos, dtype=np.int64).reshape(len(monos), p.dimension)

    def __call__(self, z: np.ndarray) -> float:
        if self.coeffs.size == 0:
            return 0.0
        return float(self.coeffs @ np.prod(z ** self.expos, axis=1))


class _PolyVecEval:
    """Evaluate a list of polynomials at once."""

    __slots__ = ("evals",)

    def __init__(self, polys: Sequence[Polynomial]):
        self.evals = [_PolyEval(p) for p in polys]

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return np.array([e(z) for e in self.evals])


@dataclass(eq=False)
class ControlModel:
    """Affine control system x' = f0(x) + sum_i u_i f_i(x) at a base point."""

    name: str
    n: int
    k: int
    drift: PolyVectorField | None
    fields: tuple[PolyVectorField, ...]
    x0: tuple
    bracket_depth: int = 6

    def __post_init__(self):
        if len(self.fields) != self.k:
            raise ModelError(f"expected {self.k} controlled fields, got {len(self.fields)}")
        for f in self.fields:
            if f.dimension != self.n:
                raise ModelError("controlled field dimension mismatch")
        if self.drift is not None and self.drift.dimension != self.n:
            raise ModelError("drift dimension mismatch")
        if len(self.x0) != self.n:
            raise ModelError("base point dimension mismatch")
        self.x0 = tuple(self.x0)
        self.fields = tuple(self.fields)
        self._validate_independence()
        self._validate_bracket_generation()
        self._cache: dict = {}

    # -- validation ----------------------------------------------------

    @property
    def exact(self) -> bool:
        ok = all(f.exact for f in self.fields)
        if self.drift is not None:
            ok = ok and self.drift.exact
        return ok and all(isinstance(c, Fraction) for c in self.x0)

    def _validate_independence(self):
        cols = self.frame_at_x0()
        if np.linalg.matrix_rank(cols, tol=1e-10) < self.k:
            raise ModelError(
                f"controlled fields are linearly dependent at the base point of {self.name!r}"
            )

    def _validate_bracket_generation(self):
        """Assumption (A1): iterated brackets span R^n at x0 within bracket_depth."""
        generators = list(self.fields)
        if self.drift is not None:
            generators.append(self.drift)
        layer = list(self.fields)
        collected = list(self.fields)

        def rank_now() -> int:
            vecs = [v(self.x0) for v in collected]
            if self.exact:
                return exact_rank([[Fraction(c) for c in v] for v in vecs])
            a = np.array([[float(c) for c in v] for v in vecs], dtype=float)
            s = np.linalg.svd(a, compute_uv=False)
            return int(np.sum(s > 1e-10 * max(s[0], 1.0)))

        if rank_now() == self.n:
            return
        for _ in range(1, self.bracket_depth):
            layer = [lie_bracket(g, w) for g in generators for w in layer]
            collected.extend(layer)
            if rank_now() == self.n:
                return
        raise ModelError(
            f"model {self.name!r} is not bracket-generating at the base point "
            f"within depth {self.bracket_depth}"
        )

    # -- basic geometry ------------------------------------------------

    def frame_at_x0(self) -> np.ndarray:
        """n x k matrix whose columns are f_i(x0)."""
        return np.column_stack([np.array([float(c) for c in f(self.x0)]) for f in self.fields])

    def gram_at_x0(self) -> np.ndarray:
        b = self.frame_at_x0()
        return b.T @ b

    def is_orthonormal_at_x0(self, tol: float = 1e-12) -> bool:
        g = self.gram_at_x0()
        return bool(np.max(np.abs(g - np.eye(self.k))) <= tol)

    @property
    def drift_free(self) -> bool:
        return self.drift is None or all(c.is_zero() for c in self.drift.components)

    def x0_float(self) -> np.ndarray:
        return np.array([float(c) for c in self.x0], dtype=float)

    # -- Hamiltonian framework (exact, cached) --------------------------

    def momenta_polys(self) -> list[Polynomial]:
        """h_i(x, p) = <p, f_i(x)> for i = 1..k, as phase-space polynomials."""
        if "momenta" not in self._cache:
            n = self.n
            hs = []
            for f in self.fields:
                h = Polynomial.zero(2 * n)
                for j, comp in enumerate(f.components):
                    h = h + _phase_embed(comp, n) * _momentum(n, j + 1)
                hs.append(h)
            self._cache["momenta"] = hs
        return self._cache["momenta"]

    def hamiltonian_poly(self) -> Polynomial:
        """H(x, p) = <p, f0(x)> + (1/2) sum_i <p, f_i(x)>^2, exact."""
        if "ham" not in self._cache:
            n = self.n
            h = Polynomial.zero(2 * n)
            if self.drift is not None:
                for j, comp in enumerate(self.drift.components):
                    h = h + _phase_embed(comp, n) * _momentum(n, j + 1)
            half = Fraction(1, 2) if self.exact else 0.5
            for hi in self.momenta_polys():
                h = h + half * (hi * hi)
            self._cache["ham"] = h
        return self._cache["ham"]

    def flow_polys(self) -> list[Polynomial]:
        """Hamilton's equations as 2n polynomials in z = (x, p).

        Layout matches z: first the n components of dx/dt = dH/dp, then
        the n components of dp/dt = -dH/dx.
        """
        if "flow" not in self._cache:
            h = self.hamiltonian_poly()
            n = self.n
            flow = [h.partial(n + j + 1) for j in range(n)]
            flow += [-h.partial(j + 1) for j in range(n)]
            self._cache["flow"] = flow
        return self._cache["flow"]

    def flow_jacobian_polys(self) -> list[list[Polynomial]]:
        if "flow_jac" not in self._cache:
            flow = self.flow_polys()
            self._cache["flow_jac"] = [
                [fp.partial(j + 1) for j in range(2 * self.n)] for fp in flow
            ]
        return self._cache["flow_jac"]

    def flow_eval(self):
        if "flow_eval" not in self._cache:
            self._cache["flow_eval"] = _PolyVecEval([p.to_float() for p in self.flow_polys()])
        return self._cache["flow_eval"]

    def flow_jacobian_eval(self):
        if "flow_jac_eval" not in self._cache:
            rows = [
                _PolyVecEval([p.to_float() for p in row])
                for row in self.flow_jacobian_polys()
            ]

            def jac(z: np.ndarray) -> np.ndarray:
                return np.array([r(z) for r in rows])

            self._cache["flow_jac_eval"] = jac
        return self._cache["flow_jac_eval"]

    def hamiltonian_eval(self):
        if "ham_eval" not in self._cache:
            self._cache["ham_eval"] = _PolyEval(self.hamiltonian_poly().to_float())
        return self._cache["ham_eval"]

    def field_jacobians(self) -> list[list[list[Polynomial]]]:
        """Exact Jacobians of the controlled fields (and drift last if present)."""
        if "field_jacs" not in self._cache:
            self._cache["field_jacs"] = [f.jacobian() for f in self.fields]
        return self._cache["field_jacs"]


@dataclass(frozen=True)
class FrameAdaptation:
    """Linear chart change whose first k directions span the distribution.

    `t_matrix` has f_i(x0) as its first k columns.  Points transform as
    x = T xt, covectors as pt = T^T p, so the pairing <p, x> is preserved
    and the induced map on (p, x) is symplectic.
    """

    t_matrix: np.ndarray
    t_inverse: np.ndarray

    @staticmethod
    def build(model: ControlModel) -> "FrameAdaptation":
        t = complete_frame(model.frame_at_x0())
        return FrameAdaptation(t_matrix=t, t_inverse=np.linalg.inv(t))

    def covector_to_adapted(self, p: np.ndarray) -> np.ndarray:
        return self.t_matrix.T @ p

    def covector_from_adapted(self, pt: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.t_matrix.T, pt)

    def vector_to_adapted(self, x: np.ndarray) -> np.ndarray:
        return self.t_inverse @ x

    def symplectic_defect(self) -> float:
        """Max-norm deviation of the induced (p, x) map from symplecticity."""
        n = self.t_matrix.shape[0]
        j = np.block(
            [[np.zeros((n, n)), -np.eye(n)], [np.eye(n), np.zeros((n, n))]]
        )
        m = np.block(
            [
                [self.t_matrix, np.zeros((n, n))],
                [np.zeros((n, n)), np.linalg.inv(self.t_matrix).T],
            ]
        )
        return float(np.max(np.abs(m.T @ j @ m - j)))


# ---------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------

_LQ_PRESETS = {
    "double_integrator": ([[0, 1], [0, 0]], [[0], [1]]),
    "triple_integrator": ([[0, 1, 0], [0, 0, 1], [0, 0, 0]], [[0], [0], [1]]),
}


def _lq_fields(a_rows, b_rows) -> tuple[PolyVectorField | None, list[PolyVectorField]]:
    a = [[Fraction(x) for x in row] for row in a_rows]
    b = [[Fraction(x) for x in row] for row in b_rows]
    n = len(a)
    if any(len(row) != n for row in a):
        raise ModelError("A must be square")
    if len(b) != n:
        raise ModelError("B must have n rows")
    k = len(b[0])
    drift = PolyVectorField(
        [
            sum(
                (a[i][j] * Polynomial.variable(n, j + 1) for j in range(n)),
                Polynomial.zero(n),
            )
            for i in range(n)
        ]
    )
    fields = [
        PolyVectorField([Polynomial.constant(n, b[i][c]) for i in range(n)])
        for c in range(k)
    ]
    return drift, fields


def builtin_model(name: str, params: Mapping | None = None) -> ControlModel:
    """Construct one of the built-in models.

    Names: heisenberg, contact3d_perturbed, lq, sphere2, euclidean.
    """
    params = dict(params or {})
    if name == "heisenberg":
        fields = [
            parse_polynomial_field(["1", "0", "-1/2*x2"]),
            parse_polynomial_field(["0", "1", "1/2*x1"]),
        ]
        return ControlModel(
            name="heisenberg",
            n=3,
            k=2,
            drift=None,
            fields=tuple(fields),
            x0=(Fraction(0), Fraction(0), Fraction(0)),
        )
    if name == "euclidean":
        n = int(params.pop("n", 2))
        if params:
            raise ModelError(f"unknown parameters {sorted(params)} for euclidean")
        fields = [
            PolyVectorField(
                [
                    Polynomial.constant(n, Fraction(1 if i == j else 0))
                    for i in range(n)
                ]
            )
            for j in range(n)
        ]
        return ControlModel(
            name=f"euclidean{n}", n=n, k=n, drift=None, fields=tuple(fields),
            x0=tuple(Fraction(0) for _ in range(n)),
        )
    if name == "sphere2":
        base = params.pop("base_point", (0, 0))
        if params:
            raise ModelError(f"unknown parameters {sorted(params)} for sphere2")
        conformal = "1 + 1/4*x1^2 + 1/4*x2^2"
        fields = [
            parse_polynomial_field([conformal, "0"]),
            parse_polynomial_field(["0", conformal]),
        ]
        return ControlModel(
            name="sphere2", n=2, k=2, drift=None, fields=tuple(fields),
            x0=tuple(Fraction(b) for b in base),
        )
    if name == "lq":
        preset = params.pop("preset", None)
        if preset is not None:
            if preset not in _LQ_PRESETS:
                raise ModelError(f"unknown lq preset {preset!r}")
            a_rows, b_rows = _LQ_PRESETS[preset]
        else:
            try:
                a_rows, b_rows = params.pop("A"), params.pop("B")
            except KeyError as exc:
                raise ModelError("lq requires matrices A and B (or a preset)") from exc
        if params:
            raise ModelError(f"unknown parameters {sorted(params)} for lq")
        drift, fields = _lq_fields(a_rows, b_rows)
        n = drift.dimension
        return ControlModel(
            name=f"lq:{preset}" if preset else "lq",
            n=n, k=len(fields), drift=drift, fields=tuple(fields),
            x0=tuple(Fraction(0) for _ in range(n)),
        )
    if name == "contact3d_perturbed":
        eps = params.pop("eps", Fraction(1, 10))
        if isinstance(eps, float):
            eps = Fraction(eps).limit_denominator(10**6)
        else:
            eps = Fraction(eps)
        pert_expr = params.pop("perturbation", "x1^2")
        if params:
            raise ModelError(f"unknown parameters {sorted(params)} for contact3d_perturbed")
        pert = parse_polynomial(pert_expr, 3)
        x1 = parse_polynomial_field(["1", "0", "-1/2*x2"])
        second = Polynomial.variable(3, 1) * Fraction(1, 2) + eps * pert
        x2 = PolyVectorField([Polynomial.zero(3), Polynomial.constant(3, Fraction(1)), second])
        model = ControlModel(
            name=f"contact3d_perturbed(eps={eps}, P={pert_expr})",
            n=3, k=2, drift=None, fields=(x1, x2),
            x0=(Fraction(0), Fraction(0), Fraction(0)),
        )
        if not model.is_orthonormal_at_x0():
            raise ModelError("perturbation breaks orthonormality at the base point")
        return model
    raise ModelError(f"unknown built-in model {name!r}")


# ---------------------------------------------------------------------
# Model configuration files
# ---------------------------------------------------------------------


def _parse_matrix(text: str) -> list[list[Fraction]]:
    rows = []
    for row in text.split(";"):
        row = row.strip()
        if not row:
            continue
        rows.append([Fraction(tok) for tok in row.replace(",", " ").split()])
    return rows


def load_model_file(path: str) -> ControlModel:
    """Read a plain-text model configuration.

    Keys: name, n, k, drift, field_1..field_k, base_point.  Vector fields
    are comma-separated polynomial expressions; LQ systems may instead
    give A and B as semicolon-separated rows of numbers.
    """
    data: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ModelError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            data[key.strip()] = value.strip()

    if "A" in data and "B" in data:
        drift, fields = _lq_fields(_parse_matrix(data["A"]), _parse_matrix(data["B"]))
        n = drift.dimension
        base = data.get("base_point")
        x0 = (
            tuple(Fraction(t) for t in base.split(","))
            if base
            else tuple(Fraction(0) for _ in range(n))
        )
        return ControlModel(
            name=data.get("name", "lq"), n=n, k=len(fields),
            drift=drift, fields=tuple(fields), x0=x0,
        )

    try:
        n = int(data["n"])
        k = int(data["k"])
    except KeyError as exc:
        raise ModelError(f"{path}: missing key {exc}") from exc
    fields = []
    for i in range(1, k + 1):
        key = f"field_{i}"
        if key not in data:
            raise ModelError(f"{path}: missing {key}")
        exprs = [e.strip() for e in data[key].split(",")]
        if len(exprs) != n:
            raise ModelError(f"{path}: {key} must have {n} components")
        fields.append(parse_polynomial_field(exprs))
    drift = None
    if data.get("drift"):
        exprs = [e.strip() for e in data["drift"].split(",")]
        if len(exprs) != n:
            raise ModelError(f"{path}: drift must have {n} components")
        drift = parse_polynomial_field(exprs)
    base = data.get("base_point")
    x0 = (
        tuple(Fraction(t) for t in base.split(","))
        if base
        else tuple(Fraction(0) for _ in range(n))
    )
    return ControlModel(
        name=data.get("name", path), n=n, k=k, drift=drift,
        fields=tuple(fields), x0=x0,
    )

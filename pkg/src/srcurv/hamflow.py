"""Normal Hamiltonian flow: extremals, exponential map, variational flow,
conjugate-time detection.

Conventions: the phase point is z = (x, p) in R^{2n}; the canonical
symplectic matrix for this layout is J = [[0, -I], [I, 0]], and vertical
tangent vectors (fiber directions) are (0, dp).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .model import ControlModel

DEFAULT_RTOL = 1e-10


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExtremalState:
    """A point-covector pair (x, p) on an extremal, in chart coordinates."""

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.p))):
            raise IntegrationError("non-finite extremal state")

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.p])

    @staticmethod
    def from_z(z: np.ndarray) -> "ExtremalState":
        n = len(z) // 2
        return ExtremalState(x=z[:n], p=z[n:])


def initial_state(model: ControlModel, covector) -> ExtremalState:
    return ExtremalState(x=model.x0_float(), p=np.asarray(covector, dtype=float))


def hamiltonian(model: ControlModel, state: ExtremalState) -> float:
    """H = <p, f0(x)> + (1/2) sum_i <p, f_i(x)>^2."""
    return model.hamiltonian_eval()(state.z)


def normal_control(model: ControlModel, state: ExtremalState) -> np.ndarray:
    """The maximizing control u_i = <p, f_i(x)> along a normal extremal."""
    x = state.x
    return np.array(
        [float(np.dot(state.p, [float(c) for c in f(x)])) for f in model.fields]
    )


class ExtremalTrajectory:
    """Dense-output solution of the extremal ODE on [0, T] (or [T, 0])."""

    def __init__(self, model: ControlModel, sol, lam0: ExtremalState, tol: float):
        self.model = model
        self._sol = sol
        self.lam0 = lam0
        self.tol = tol
        self.t_span = (sol.t[0], sol.t[-1])

    def state(self, t: float) -> ExtremalState:
        return ExtremalState.from_z(self._sol.sol(t))

    def samples(self, ts) -> list[ExtremalState]:
        return [self.state(t) for t in np.atleast_1d(ts)]

    def energy_drift(self, num: int = 33) -> float:
        h0 = hamiltonian(self.model, self.lam0)
        ts = np.linspace(self.t_span[0], self.t_span[1], num)
        drift = max(abs(hamiltonian(self.model, self.state(t)) - h0) for t in ts)
        return drift


def integrate_extremal(
    model: ControlModel,
    lam0: ExtremalState,
    t_final: float,
    tol: float = DEFAULT_RTOL,
) -> ExtremalTrajectory:
    """Integrate the normal extremal from lam0 for time t_final.

    Adaptive high-order scheme (DOP853) with dense output.  The energy
    H is a first integral; a drift above tol * (1 + |H0|) raises.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    flow = model.flow_eval()
    sol = solve_ivp(
        lambda _t, z: flow(z),
        (0.0, t_final),
        lam0.z,
        method="DOP853",
        rtol=tol,
        atol=tol * 1e-2,
        dense_output=True,
    )
    if not sol.success:
        raise IntegrationError(f"extremal integration failed: {sol.message}")
    if not np.all(np.isfinite(sol.y)):
        raise IntegrationError("non-finite state during integration")
    traj = ExtremalTrajectory(model, sol, lam0, tol)
    h0 = hamiltonian(model, lam0)
    if traj.energy_drift() > max(tol, 1e-12) * (1.0 + abs(h0)) * 10.0:
        raise IntegrationError(
            f"energy drift {traj.energy_drift():.3e} exceeds tolerance"
        )
    return traj


def exponential_map(model: ControlModel, covector, t: float, tol: float = DEFAULT_RTOL) -> np.ndarray:
    """E_{x0}(t, lam) = projection of the time-t extremal point."""
    lam0 = initial_state(model, covector)
    if t == 0.0:
        return lam0.x
    return integrate_extremal(model, lam0, t, tol).state(t).x


@dataclass
class VariationalFrame:
    """Fundamental solution M(t) of the linearized flow along an extremal."""

    t: float
    m: np.ndarray
    m_inv: np.ndarray

    def symplectic_defect(self) -> float:
        n = self.m.shape[0] // 2
        j = np.block([[np.zeros((n, n)), -np.eye(n)], [np.eye(n), np.zeros((n, n))]])
        return float(np.max(np.abs(self.m.T @ j @ self.m - j)))


class VariationalSolution:
    """Joint dense solution of the extremal and its variational equation."""

    def __init__(self, model: ControlModel, sol, lam0: ExtremalState):
        self.model = model
        self._sol = sol
        self.lam0 = lam0
        self.n = model.n

    def state(self, t: float) -> ExtremalState:
        z = self._sol.sol(t)[: 2 * self.n]
        return ExtremalState.from_z(z)

    def frame(self, t: float) -> VariationalFrame:
        nn = 2 * self.n
        w = self._sol.sol(t)
        m = w[nn:].reshape(nn, nn)
        return VariationalFrame(t=t, m=m, m_inv=np.linalg.inv(m))

    def jacobian_at(self, t: float) -> np.ndarray:
        """DF(z(t)): Jacobian of the Hamiltonian vector field along the extremal."""
        z = self._sol.sol(t)[: 2 * self.n]
        return self.model.flow_jacobian_eval()(z)


def variational_flow(
    model: ControlModel,
    lam0: ExtremalState,
    t_final: float,
    tol: float = DEFAULT_RTOL,
) -> VariationalSolution:
    """Integrate M' = DF(z(t)) M, M(0) = I, alongside the extremal.

    DF comes from exact polynomial differentiation of the model; no
    finite differences are involved.
    """
    nn = 2 * model.n
    flow = model.flow_eval()
    jac = model.flow_jacobian_eval()

    def rhs(_t, w):
        z = w[:nn]
        m = w[nn:].reshape(nn, nn)
        return np.concatenate([flow(z), (jac(z) @ m).ravel()])

    w0 = np.concatenate([lam0.z, np.eye(nn).ravel()])
    sol = solve_ivp(
        rhs,
        (0.0, t_final),
        w0,
        method="DOP853",
        rtol=tol,
        atol=tol * 1e-2,
        dense_output=True,
    )
    if not sol.success:
        raise IntegrationError(f"variational integration failed: {sol.message}")
    return VariationalSolution(model, sol, lam0)


@dataclass(frozen=True)
class ConjugateTimeResult:
    t: float | None
    possible_even_order_zero: bool
    dip_times: tuple[float, ...] = ()


def _exp_differential_det(var: VariationalSolution, t: float) -> float:
    """det of the x-block of M(t) restricted to vertical initial directions.

    Columns M(t) (0, e_i) span the image of the fiber differential of the
    exponential map; their x-components form the n x n block whose sign
    changes detect conjugate times.
    """
    n = var.n
    m = var.frame(t).m
    return float(np.linalg.det(m[:n, n:]))


def first_conjugate_time(
    model: ControlModel,
    covector,
    t_max: float,
    tol: float = DEFAULT_RTOL,
    grid: int = 400,
) -> ConjugateTimeResult:
    """Smallest t in (0, t_max] where the exponential differential degenerates.

    Sign changes of the vertical x-block determinant are bracketed on a
    grid and refined by bisection to relative tolerance 1e-8.  Dips of
    the normalized determinant below 1e-10 without a sign change are
    reported as possible even-order zeros instead of roots.
    """
    lam0 = initial_state(model, covector)
    var = variational_flow(model, lam0, t_max, tol)
    # det ~ t^N near 0 for an ample geodesic; normalize away the leading
    # power so the dip detector has a meaningful scale.
    ts = np.linspace(t_max / grid, t_max, grid)
    dets = np.array([_exp_differential_det(var, t) for t in ts])
    ref = np.max(np.abs(dets))
    if ref == 0.0:
        return ConjugateTimeResult(t=None, possible_even_order_zero=True, dip_times=(0.0,))
    dips = []
    for i in range(1, len(ts) - 1):
        if (
            abs(dets[i]) < 1e-10 * ref
            and abs(dets[i]) <= abs(dets[i - 1])
            and abs(dets[i]) <= abs(dets[i + 1])
            and dets[i - 1] * dets[i + 1] > 0
        ):
            dips.append(float(ts[i]))
    for i in range(1, len(ts)):
        if dets[i - 1] * dets[i] < 0:
            root = brentq(
                lambda t: _exp_differential_det(var, t),
                ts[i - 1],
                ts[i],
                rtol=1e-8,
            )
            return ConjugateTimeResult(
                t=float(root),
                possible_even_order_zero=bool(dips),
                dip_times=tuple(dips),
            )
    return ConjugateTimeResult(
        t=None, possible_even_order_zero=bool(dips), dip_times=tuple(dips)
    )

"""The infinite-dimensional KKL component T0(x, .): the value at t = 0 of
the bounded solution of

    w_t = w_ll - gamma w,   w_l(t, 0) = 0,   w(t, 1) = -h(X(t; x)),   t <= 0.

Three constructions are provided: the closed form of the constant-state
example, the polynomial ansatz of the harmonic-oscillator example (two
coupled linear BVPs), and a generic burn-in solver that integrates the heat
equation forward from rest over a long window of the backward flow.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cascade import CascadeParams, OdeModel, flow
from .errors import NonFiniteState, NonPositiveGamma, SingularBVP
from .grid import SpatialField, SpatialGrid, first_difference, l2_norm_values, second_difference_values
from .heat import stepper

FIRST_EIGENVALUE = np.pi**2 / 4.0  # Neumann at 0, Dirichlet at 1


def min_burn_in_horizon(gamma: float) -> float:
    return 5.0 / (gamma + FIRST_EIGENVALUE)


def default_burn_in_horizon(gamma: float, safety: float = 5.0) -> float:
    return safety * min_burn_in_horizon(gamma)


def t0_analytic_example1(gamma: float, grid: SpatialGrid, x: float) -> SpatialField:
    """``a(l) x`` with ``a(l) = -cosh(l sqrt(gamma)) / cosh(sqrt(gamma))``."""
    if not gamma > 0:
        raise NonPositiveGamma(f"gamma must be positive, got {gamma}")
    x = float(np.ravel(x)[0])
    return SpatialField(grid, _example1_profile(gamma, grid.nodes) * x)


def _example1_profile(gamma, lam):
    r = np.sqrt(gamma)
    return -np.cosh(r * lam) / np.cosh(r)


def solve_coupled_bvp(matrix, right_values, grid: SpatialGrid) -> np.ndarray:
    """Finite-difference solution of ``u'' = M u``, ``u'(0) = 0``, ``u(1) = right``.

    Returns an array of shape (k, n_points) for a k x k matrix M.  The Neumann
    end uses the ghost node u_{-1} = u_1.
    """
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    k = M.shape[0]
    right = np.asarray(right_values, dtype=float).reshape(k)
    n = grid.n_points - 1
    h2 = grid.h**2
    D = (np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)) / h2
    D[0, 1] = 2.0 / h2
    A = np.kron(np.eye(k), D) - np.kron(M, np.eye(n))
    rhs = np.zeros(k * n)
    rhs[n - 1 :: n] = -right / h2
    try:
        if np.linalg.cond(A) > 1e14:
            raise SingularBVP("ansatz boundary value problem is numerically singular")
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularBVP(str(exc)) from exc
    out = np.empty((k, grid.n_points))
    out[:, :-1] = sol.reshape(k, n)
    out[:, -1] = right
    return out


ANSATZ_AD_MATRIX = ((0.0, -1.0), (4.0, 0.0))  # plus gamma * I
ANSATZ_BC_MATRIX = ((0.0, -1.0), (1.0, 0.0))


def solve_ansatz_bvp(gamma: float, grid: SpatialGrid):
    """Profiles (a, b, c, d) of ``T0 = a(x1^2 - x2^2) + b x1 + c x2 + d x1 x2``
    for ``f = (x2, -x1)``, ``h = x1^2 - x2^2 + x1 + x2``."""
    if not gamma > 0:
        raise NonPositiveGamma(f"gamma must be positive, got {gamma}")
    eye = gamma * np.eye(2)
    a, d = solve_coupled_bvp(np.array(ANSATZ_AD_MATRIX) + eye, (-1.0, 0.0), grid)
    b, c = solve_coupled_bvp(np.array(ANSATZ_BC_MATRIX) + eye, (-1.0, -1.0), grid)
    return tuple(SpatialField(grid, u) for u in (a, b, c, d))


def _burn_in_stack(model: OdeModel, gamma: float, grid: SpatialGrid, X: np.ndarray, horizon: float, dt: float):
    n_steps = max(1, int(np.ceil(horizon / dt)))
    step = horizon / n_steps
    back = flow(model, X, step, n_steps, "backward")  # (n_steps + 1, k, n)
    u = -np.asarray(model.h(back), dtype=float)  # (n_steps + 1, k)
    if not np.all(np.isfinite(u)):
        raise NonFiniteState("boundary input -h(X(t; x)) is not finite over the burn-in window")
    cn = stepper(grid, -float(gamma), step)
    w = np.zeros((grid.n_points, X.shape[0]))
    for k in range(n_steps - 1, -1, -1):
        w = cn.step(w, u[k])
    return w.T


def t0_burn_in(model: OdeModel, params: CascadeParams, grid: SpatialGrid, x, horizon: float, dt: float = 1e-3) -> SpatialField:
    """Burn-in approximation of T0(x, .).

    Integrates the ODE backward to ``-horizon``, then advances the damped heat
    equation from ``w = 0`` with boundary input ``-h(X(t; x))`` to ``t = 0``.
    The transient is damped by ``exp(-(gamma + pi^2/4) horizon)``.
    """
    x = np.asarray(x, dtype=float).reshape(1, model.n)
    return SpatialField(grid, _burn_in_stack(model, params.gamma, grid, x, horizon, dt)[0])


@dataclass(frozen=True, eq=False)
class T0Strategy:
    """How T0(x, .) is evaluated on a grid.

    Use the constructors :meth:`analytic_example1`, :meth:`ansatz_example2`
    and :meth:`burn_in` rather than building instances by hand.
    """

    kind: str
    grid: SpatialGrid
    gamma: float
    ansatz_coefficients: Optional[tuple] = None
    burn_in_horizon: Optional[float] = None
    model: Optional[OdeModel] = field(default=None, repr=False)
    dt: float = 1e-3

    KINDS = ("analytic_example1", "ansatz_example2", "burn_in")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown T0 strategy {self.kind!r}")
        if self.kind == "burn_in":
            if self.model is None:
                raise ValueError("burn_in strategy needs an ODE model")
            if self.burn_in_horizon < min_burn_in_horizon(self.gamma) * (1 - 1e-12):
                raise ValueError(
                    f"burn-in horizon {self.burn_in_horizon:g} below the decay budget "
                    f"{min_burn_in_horizon(self.gamma):g}"
                )
        if self.kind == "ansatz_example2" and self.ansatz_coefficients is None:
            raise ValueError("ansatz strategy needs its (a, b, c, d) profiles")

    @classmethod
    def analytic_example1(cls, gamma: float, grid: SpatialGrid) -> "T0Strategy":
        if not gamma > 0:
            raise NonPositiveGamma(f"gamma must be positive, got {gamma}")
        return cls("analytic_example1", grid, float(gamma))

    @classmethod
    def ansatz_example2(cls, gamma: float, grid: SpatialGrid) -> "T0Strategy":
        return cls("ansatz_example2", grid, float(gamma), ansatz_coefficients=solve_ansatz_bvp(gamma, grid))

    @classmethod
    def burn_in(cls, model: OdeModel, gamma: float, grid: SpatialGrid, horizon: Optional[float] = None, dt: float = 1e-3) -> "T0Strategy":
        horizon = default_burn_in_horizon(gamma) if horizon is None else float(horizon)
        return cls("burn_in", grid, float(gamma), burn_in_horizon=horizon, model=model, dt=dt)

    @property
    def n(self) -> Optional[int]:
        return {"analytic_example1": 1, "ansatz_example2": 2}.get(self.kind, self.model.n if self.model else None)

    def values_many(self, X) -> np.ndarray:
        """T0 at a stack of states, shape (k, n_points)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "analytic_example1":
            return np.outer(X[:, 0], _example1_profile(self.gamma, self.grid.nodes))
        if self.kind == "ansatz_example2":
            a, b, c, d = (f.values for f in self.ansatz_coefficients)
            x1, x2 = X[:, 0:1], X[:, 1:2]
            return (x1**2 - x2**2) * a + x1 * b + x2 * c + (x1 * x2) * d
        return _burn_in_stack(self.model, self.gamma, self.grid, X, self.burn_in_horizon, self.dt)

    def __call__(self, x) -> SpatialField:
        return SpatialField(self.grid, self.values_many(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def to_csv(self, path) -> None:
        if self.kind == "analytic_example1":
            names, cols = ["a"], [_example1_profile(self.gamma, self.grid.nodes)]
        elif self.kind == "ansatz_example2":
            names, cols = ["a", "b", "c", "d"], [f.values for f in self.ansatz_coefficients]
        else:
            raise ValueError("burn-in T0 has no coefficient fields; export T0(x) samples instead")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda"] + names)
            for i, lam in enumerate(self.grid.nodes):
                w.writerow([f"{lam:.17g}"] + [f"{c[i]:.17g}" for c in cols])


@dataclass(frozen=True)
class FlowPropertyReport:
    residual: float
    neumann: float
    dirichlet: float

    @property
    def worst(self) -> float:
        return max(self.residual, self.neumann, self.dirichlet)


def flow_property_check(
    model: OdeModel,
    params: CascadeParams,
    grid: SpatialGrid,
    x0,
    duration: float,
    strategy: T0Strategy,
    dt: float = 1e-3,
    n_samples: int = 21,
) -> FlowPropertyReport:
    """Residuals of ``d/dt T0(X(t)) = T0_ll - gamma T0`` along the flow.

    The time derivative is a centred difference with step ``dt`` through RK4
    flows; the spatial one uses :func:`second_difference`.  Returns the max
    over the sampled times of the L2 residual and of the two boundary
    violations.
    """
    gamma = params.gamma
    n_total = int(round(duration / dt))
    sample_idx = np.unique(np.linspace(0, n_total, n_samples).round().astype(int))
    pre = flow(model, x0, dt, 1, "backward")[1]
    path = flow(model, pre, dt, n_total + 2)  # path[k] = X((k - 1) dt)
    T_c = strategy.values_many(path[sample_idx + 1])
    T_p = strategy.values_many(path[sample_idx + 2])
    T_m = strategy.values_many(path[sample_idx])
    dT = (T_p - T_m) / (2.0 * dt)
    rhs = second_difference_values(T_c, grid.h) - gamma * T_c
    residual = l2_norm_values(dT - rhs, grid)
    neumann = np.abs(np.gradient(T_c, grid.h, axis=1, edge_order=2)[:, 0])
    h_vals = np.asarray(model.h(path[sample_idx + 1]), dtype=float)
    dirichlet = np.abs(T_c[:, -1] + h_vals)
    return FlowPropertyReport(float(residual.max()), float(neumann.max()), float(dirichlet.max()))

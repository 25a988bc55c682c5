"""Observer: the target system driven by the measurement, and the
least-squares left inverse of ``T(x, v) = T0(x) + T v``.

The inverse restricts v to a finite family of even functions (vanishing
odd derivatives at 0), optionally shifted by the steady response V0(x) of
the plant.  Without that restriction any x fits exactly through
``v = T^{-1}(z - T0(x))``.  For a fixed x the best mode coefficients solve
a ridge-regularized linear problem; the outer search over x is a coarse
grid followed by bounded local refinement (trust-region least squares by
default, Nelder-Mead optionally) from the best few grid points.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize

from numpy.polynomial import chebyshev

from .cascade import CascadeParams, OdeModel, flow
from .errors import EmptySearchBox, NonFiniteState, GridMismatch, RankDeficientLS
from .grid import SpatialField, SpatialGrid, TimeGrid, l2_norm
from .heat import stepper
from .kernel import KernelTable, TransformMatrix
from .kkl import (
    ANSATZ_AD_MATRIX,
    ANSATZ_BC_MATRIX,
    FIRST_EIGENVALUE,
    T0Strategy,
    _burn_in_stack,
    solve_coupled_bvp,
)


@dataclass(frozen=True)
class TargetState:
    z: SpatialField
    t: float


def step_target(z: TargetState, kt: KernelTable, gamma: float, y: float, dt: float) -> TargetState:
    """Crank-Nicolson step of ``z_t = z_ll - gamma z + p1 y`` with
    ``z_l(0) = p10 y`` and ``z(1) = 0``; ``y`` is the midpoint value."""
    if z.z.grid != kt.grid:
        raise GridMismatch("target state and kernel table use different grids")
    cn = stepper(kt.grid, -float(gamma), float(dt))
    flux = kt.p10 * y
    out = cn.step(z.z.values, 0.0, flux_old=flux, flux_new=flux, source=kt.p1.values, source_weight=y)
    return TargetState(SpatialField(kt.grid, out), z.t + dt)


@dataclass(frozen=True, eq=False)
class SteadyManifold:
    """Bounded response V0(x) of ``v_t = v_ll + alpha v``, ``v_l(0) = 0``,
    ``v(1) = h(X(t; x))`` along the ODE flow.

    Once the transient has died out the plant state sits on this graph, so
    using it as an offset leaves only decaying modes to be fitted.
    """

    kind: str
    grid: SpatialGrid
    alpha: float
    profiles: Optional[tuple] = None
    model: Optional[OdeModel] = field(default=None, repr=False)
    horizon: Optional[float] = None
    dt: float = 1e-3

    KINDS = ("linear", "ansatz_example2", "burn_in")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown steady manifold {self.kind!r}")
        if self.kind == "burn_in" and self.model is None:
            raise ValueError("burn_in manifold needs an ODE model")

    @classmethod
    def linear(cls, alpha: float, grid: SpatialGrid) -> "SteadyManifold":
        """Constant state with ``h(x) = x``: ``V0(x) = x phi`` with ``phi'' = -alpha phi``."""
        (phi,) = solve_coupled_bvp([[-float(alpha)]], (1.0,), grid)
        return cls("linear", grid, float(alpha), profiles=(phi,))

    @classmethod
    def ansatz_example2(cls, alpha: float, grid: SpatialGrid) -> "SteadyManifold":
        """Harmonic oscillator: same polynomial ansatz as T0 with reaction +alpha."""
        eye = -float(alpha) * np.eye(2)
        a, d = solve_coupled_bvp(np.array(ANSATZ_AD_MATRIX) + eye, (1.0, 0.0), grid)
        b, c = solve_coupled_bvp(np.array(ANSATZ_BC_MATRIX) + eye, (1.0, 1.0), grid)
        return cls("ansatz_example2", grid, float(alpha), profiles=(a, b, c, d))

    @classmethod
    def burn_in(cls, model: OdeModel, alpha: float, grid: SpatialGrid, horizon=None, dt: float = 1e-3) -> "SteadyManifold":
        """Generic model; needs a stable open-loop heat part (alpha below pi^2/4)."""
        margin = FIRST_EIGENVALUE - float(alpha)
        if margin <= 0:
            raise ValueError("burn-in steady manifold needs alpha < pi^2/4")
        horizon = 25.0 / margin if horizon is None else float(horizon)
        return cls("burn_in", grid, float(alpha), model=model, horizon=horizon, dt=dt)

    @classmethod
    def for_params(cls, preset: str, params: CascadeParams, grid: SpatialGrid, model=None) -> "SteadyManifold":
        if preset == "example1":
            return cls.linear(params.alpha, grid)
        if preset == "example2":
            return cls.ansatz_example2(params.alpha, grid)
        return cls.burn_in(model, params.alpha, grid)

    def values_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "linear":
            return np.outer(X[:, 0], self.profiles[0])
        if self.kind == "ansatz_example2":
            a, b, c, d = self.profiles
            x1, x2 = X[:, 0:1], X[:, 1:2]
            return (x1**2 - x2**2) * a + x1 * b + x2 * c + (x1 * x2) * d
        return -_burn_in_stack(self.model, -self.alpha, self.grid, X, self.horizon, self.dt)

    def __call__(self, x) -> SpatialField:
        return SpatialField(self.grid, self.values_many(np.asarray(x, dtype=float).reshape(1, -1))[0])


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """Finite family of even profiles used for v.

    ``kind`` selects cos(k pi l) ("cosine"), cos((k + 1/2) pi l), which also
    vanish at 1 ("decaying"), or even Chebyshev polynomials T_2k
    ("chebyshev_even").  With ``offset`` the family is affine in the
    coefficients: ``v = V0(x) + sum c_k phi_k``.
    """

    grid: SpatialGrid
    n_modes: int = 8
    kind: str = "cosine"
    offset: Optional[SteadyManifold] = None

    KINDS = ("cosine", "decaying", "chebyshev_even")

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be positive")
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.offset is not None and self.offset.grid != self.grid:
            raise GridMismatch("offset manifold lives on a different grid")

    @property
    def frequencies(self) -> np.ndarray:
        k = np.arange(self.n_modes)
        if self.kind == "decaying":
            return np.pi * (k + 0.5)
        return np.pi * k

    @property
    def matrix(self) -> np.ndarray:
        """Evaluation matrix, shape (n_points, n_modes)."""
        lam = self.grid.nodes
        if self.kind == "chebyshev_even":
            eye = np.eye(2 * self.n_modes - 1)
            return np.column_stack([chebyshev.chebval(lam, eye[2 * k]) for k in range(self.n_modes)])
        return np.cos(np.outer(lam, self.frequencies))

    def offset_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.offset is None:
            return np.zeros((X.shape[0], self.grid.n_points))
        return self.offset.values_many(X)

    def field(self, coefficients, x=None) -> SpatialField:
        """``basis @ c``, plus ``V0(x)`` when an offset is configured and x is given."""
        vals = self.matrix @ np.asarray(coefficients, dtype=float)
        if self.offset is not None and x is not None:
            vals = vals + self.offset_values(x)[0]
        return SpatialField(self.grid, vals)


@dataclass(frozen=True)
class InversionConfig:
    x_box: Sequence[tuple]
    grid_points_per_dim: int = 11
    refine_iterations: int = 60
    ridge: float = 1e-8
    refine_method: str = "least_squares"
    n_starts: int = 5

    REFINE_METHODS = ("least_squares", "nelder_mead")

    def __post_init__(self):
        if self.refine_method not in self.REFINE_METHODS:
            raise ValueError(f"unknown refine_method {self.refine_method!r}")
        if self.n_starts < 1:
            raise ValueError("n_starts must be positive")
        if self.grid_points_per_dim < 3:
            raise ValueError("grid_points_per_dim must be >= 3")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        for lo, hi in self.x_box:
            if not hi > lo:
                raise EmptySearchBox(f"empty search interval [{lo}, {hi}]")
        if len(self.x_box) == 0:
            raise EmptySearchBox("search box has no coordinates")

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.x_box], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.x_box], dtype=float)


@dataclass
class InversionResult:
    x_hat: np.ndarray
    v_hat: SpatialField
    residual: float
    coefficients: np.ndarray
    at_box_boundary: bool = False
    n_evaluations: int = 0


def forward_map(x, v: SpatialField, t0strategy: T0Strategy, tm: TransformMatrix) -> SpatialField:
    """``T(x, v) = T0(x) + T v``."""
    if v.grid != tm.grid or t0strategy.grid != tm.grid:
        raise GridMismatch("state, T0 strategy and transform must share a grid")
    return SpatialField(tm.grid, t0strategy(x).values + tm.forward @ v.values)


class Inverter:
    """Reusable variable-projection solver for a fixed strategy, transform and basis."""

    def __init__(self, t0strategy: T0Strategy, tm: TransformMatrix, basis: ModeBasis, cfg: InversionConfig):
        if basis.grid != tm.grid or t0strategy.grid != tm.grid:
            raise GridMismatch("basis, T0 strategy and transform must share a grid")
        self.t0, self.tm, self.basis, self.cfg = t0strategy, tm, basis, cfg
        w = tm.grid.weights
        self._w = w
        self._M = basis.matrix
        A = tm.forward @ self._M
        self._A = A
        gram = A.T @ (w[:, None] * A)
        if cfg.ridge == 0.0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
            raise RankDeficientLS("collinear modes with ridge = 0")
        gram = gram + cfg.ridge * np.eye(gram.shape[0])
        self._proj = np.linalg.solve(gram, A.T * w)  # (n_modes, n_points)
        self.n_evaluations = 0
        lo, hi = cfg.lower, cfg.upper
        axes = [np.linspace(a, b, cfg.grid_points_per_dim) for a, b in zip(lo, hi)]
        self._candidates = np.array(list(itertools.product(*axes)))
        self._spacing = (hi - lo) / (cfg.grid_points_per_dim - 1)

    def _theta(self, X: np.ndarray) -> np.ndarray:
        """Part of ``T(x, v)`` fixed by x: ``T0(x) + T V0(x)``."""
        out = self.t0.values_many(X)
        if self.basis.offset is not None:
            out = out + self.basis.offset_values(X) @ self.tm.forward.T
        return out

    def _objective_many(self, X: np.ndarray, z: np.ndarray) -> np.ndarray:
        R = z[None, :] - self._theta(X)
        C = R @ self._proj.T
        misfit = R - C @ self._A.T
        self.n_evaluations += len(X)
        return (misfit**2) @ self._w + self.cfg.ridge * np.sum(C**2, axis=1)

    def coefficients(self, x, z: np.ndarray) -> np.ndarray:
        r = z - self._theta(np.atleast_2d(x))[0]
        return self._proj @ r

    def _residual_many(self, X: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Weighted projected misfits stacked with the ridge terms, one row per x;
        the squared row norms are the objective values."""
        R = z[None, :] - self._theta(X)
        C = R @ self._proj.T
        self.n_evaluations += len(X)
        return np.hstack([np.sqrt(self._w) * (R - C @ self._A.T), np.sqrt(self.cfg.ridge) * C])

    def _jacobian(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        # forward differences in one batch, so costly T0 strategies are evaluated once per step
        hi = self.cfg.upper
        step = 1e-7 * np.maximum(1.0, np.abs(x))
        step = np.where(x + step > hi, -step, step)
        rows = self._residual_many(np.vstack([x, x + np.diag(step)]), z)
        return ((rows[1:] - rows[0]) / step[:, None]).T

    def _refine(self, x0: np.ndarray, z: np.ndarray):
        lo, hi = self.cfg.lower, self.cfg.upper
        if self.cfg.refine_method == "least_squares":
            # zero-residual separable problem: Gauss-Newton steps converge where simplex search stalls
            res = least_squares(
                lambda x, z: self._residual_many(x[None, :], z)[0],
                np.clip(x0, lo, hi),
                jac=self._jacobian,
                args=(z,),
                bounds=(lo, hi),
                method="trf",
                x_scale=self._spacing,
                ftol=1e-15,
                xtol=1e-15,
                gtol=1e-15,
                max_nfev=self.cfg.refine_iterations,
            )
            return res.x, float(2.0 * res.cost)
        n = len(x0)
        simplex = np.vstack([x0] + [x0 + np.eye(n)[i] * 0.5 * self._spacing[i] for i in range(n)])
        simplex = np.clip(simplex, lo, hi)
        # keep the simplex non-degenerate when x0 sits on the upper bound
        for i in range(n):
            if simplex[i + 1, i] == x0[i]:
                simplex[i + 1, i] = x0[i] - 0.5 * self._spacing[i]
        res = minimize(
            lambda x: float(self._objective_many(x[None, :], z)[0]),
            x0,
            method="Nelder-Mead",
            bounds=list(zip(lo, hi)),
            options=dict(maxiter=self.cfg.refine_iterations, initial_simplex=simplex, xatol=1e-13, fatol=1e-30),
        )
        return res.x, float(res.fun)

    def __call__(self, z_hat: SpatialField, x_init=None) -> InversionResult:
        if z_hat.grid != self.tm.grid:
            raise GridMismatch("z_hat lives on a different grid")
        z = z_hat.values
        self.n_evaluations = 0
        cands = self._candidates
        if x_init is not None:
            cands = np.vstack([cands, np.clip(np.asarray(x_init, dtype=float), self.cfg.lower, self.cfg.upper)])
        obj = self._objective_many(cands, z)
        lo, hi = self.cfg.lower, self.cfg.upper
        order = np.argsort(obj, kind="stable")
        starts = [cands[i] for i in order[: self.cfg.n_starts]]
        if x_init is not None and not any(np.array_equal(cands[-1], s) for s in starts):
            starts.append(cands[-1])  # narrow valleys: the warm start may lose the grid vote yet refine better
        x_best, f_best = starts[0], float(obj.min())
        if self.cfg.refine_iterations > 0:
            for x0 in starts:
                x, f = self._refine(x0, z)
                if f < f_best:
                    x_best, f_best = x, f
        x_best = np.clip(x_best, lo, hi)
        c = self.coefficients(x_best, z)
        v_hat = self.basis.field(c, x_best)
        residual = l2_norm(z_hat - forward_map(x_best, v_hat, self.t0, self.tm))
        rel = 1e-9 * np.maximum(hi - lo, 1.0)
        boundary = bool(np.any((x_best - lo <= rel) | (hi - x_best <= rel)))
        return InversionResult(x_best, v_hat, residual, c, boundary, self.n_evaluations)


def invert_map(z_hat: SpatialField, t0strategy: T0Strategy, tm: TransformMatrix, basis: ModeBasis, cfg: InversionConfig, x_init=None) -> InversionResult:
    """Least-squares left inverse of T restricted to the basis family."""
    return Inverter(t0strategy, tm, basis, cfg)(z_hat, x_init)


@dataclass
class ObserverRun:
    """Target-state history and the estimates at the inversion instants."""

    times: np.ndarray
    z: np.ndarray  # (n_steps + 1, n_points), every step
    output_index: np.ndarray
    x_hat: np.ndarray
    v_hat: np.ndarray
    residual: np.ndarray
    at_box_boundary: np.ndarray = field(default=None)


def run_target(kt: KernelTable, gamma: float, y_series: np.ndarray, z0: SpatialField, tgrid: TimeGrid) -> np.ndarray:
    """Integrate the target system along a sampled output; returns all steps."""
    y = np.asarray(y_series, dtype=float)
    if len(y) != tgrid.n_steps + 1:
        raise ValueError(f"y_series has {len(y)} samples, time grid needs {tgrid.n_steps + 1}")
    cn = stepper(kt.grid, -float(gamma), float(tgrid.dt))
    zs = np.empty((tgrid.n_steps + 1, kt.grid.n_points))
    z = z0.values.copy()
    zs[0] = z
    p1 = kt.p1.values
    for k in range(tgrid.n_steps):
        ym = 0.5 * (y[k] + y[k + 1])
        flux = kt.p10 * ym
        z = cn.step(z, 0.0, flux_old=flux, flux_new=flux, source=p1, source_weight=ym)
        zs[k + 1] = z
    return zs


def run_observer(
    model: OdeModel,
    params: CascadeParams,
    t0strategy: T0Strategy,
    tm: TransformMatrix,
    basis: ModeBasis,
    cfg: InversionConfig,
    y_series: np.ndarray,
    z0: SpatialField,
    tgrid: TimeGrid,
    invert_every: int = 10,
) -> ObserverRun:
    """Advance the target system along ``y_series`` and invert every
    ``invert_every`` steps, warm-starting at the previous estimate.

    The kernel gains come from ``tm``; ``model`` only fixes the state size.
    """
    kt = tm.kernel
    if abs(kt.beta - params.beta) > 1e-12:
        raise ValueError("transform kernel does not match alpha + gamma")
    if t0strategy.n is not None and t0strategy.n != model.n:
        raise ValueError("T0 strategy and model disagree on the state size")
    zs = run_target(kt, params.gamma, y_series, z0, tgrid)
    idx = np.arange(0, tgrid.n_steps + 1, invert_every)
    if idx[-1] != tgrid.n_steps:
        idx = np.append(idx, tgrid.n_steps)
    inverter = Inverter(t0strategy, tm, basis, cfg)
    xs, vs, res, edge = [], [], [], []
    x_prev, k_prev = None, 0
    for k in idx:
        if x_prev is not None and k > k_prev:
            # the ODE is known: carry the previous estimate to the current time
            try:
                x_prev = flow(model, x_prev, tgrid.dt, int(k - k_prev))[-1]
            except NonFiniteState:
                pass
        r = inverter(SpatialField(kt.grid, zs[k]), x_prev)
        x_prev, k_prev = r.x_hat, k
        xs.append(r.x_hat)
        vs.append(r.v_hat.values)
        res.append(r.residual)
        edge.append(r.at_box_boundary)
    return ObserverRun(tgrid.times, zs, idx, np.array(xs), np.array(vs), np.array(res), np.array(edge))


def lie_derivatives_fd(model, x, m: int, dt: float = 1e-2) -> np.ndarray:
    """``L_f^k h(x)`` for k < m from central finite differences of h along the flow."""
    half = m // 2 + 2
    fwd = flow(model, x, dt, half)
    bwd = flow(model, x, dt, half, "backward")
    path = np.concatenate([bwd[:0:-1], fwd])
    hs = np.array([float(model.h(p)) for p in path])
    offsets = np.arange(-half, half + 1)
    # Taylor matrix: hs[j] = sum_k (offsets[j] dt)^k / k! * D^k h
    from math import factorial

    V = np.array([[(o * dt) ** k / factorial(k) for k in range(len(offsets))] for o in offsets])
    coeffs = np.linalg.solve(V, hs)
    return coeffs[:m]


def hmap_injectivity_probe(model, samples) -> float:
    """Minimum of ``|H(xa) - H(xb)| / |xa - xb|`` over sample pairs.

    Pairs with ``xa == xb`` are skipped.  Uses the model's Lie derivatives
    when supplied, else finite differences along the flow.
    """
    ratios = []
    for xa, xb in samples:
        xa, xb = np.asarray(xa, dtype=float), np.asarray(xb, dtype=float)
        dist = np.linalg.norm(xa - xb)
        if dist == 0.0:
            continue
        if model.lie_derivatives is not None:
            Ha, Hb = model.H(xa), model.H(xb)
        else:
            m = model.m or model.n
            Ha, Hb = lie_derivatives_fd(model, xa, m), lie_derivatives_fd(model, xb, m)
        ratios.append(np.linalg.norm(Ha - Hb) / dist)
    if not ratios:
        raise ValueError("no non-degenerate sample pairs")
    return float(min(ratios))

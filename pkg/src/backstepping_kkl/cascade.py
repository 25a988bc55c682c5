"""Plant simulation: the ODE ``x' = f(x)`` feeding the heat equation
``v_t = v_ll + alpha v`` through ``v(t, 1) = h(x(t))``, measured at
``y(t) = v(t, 0)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonFiniteState
from .grid import SpatialField, SpatialGrid, TimeGrid
from .heat import stepper

VectorField = Callable[[np.ndarray], np.ndarray]
OutputMap = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class OdeModel:
    """ODE vector field ``f``, scalar output ``h`` and optionally the stacked
    Lie derivatives ``L_f^k h`` for k = 0 .. m-1.

    ``f`` and ``h`` take arrays whose last axis has length ``n`` and should
    broadcast over leading axes; the observer relies on that to evaluate many
    candidate states at once.
    """

    n: int
    f: VectorField
    h: OutputMap
    lie_derivatives: Optional[Sequence[OutputMap]] = None
    m: Optional[int] = None
    name: str = "custom"

    def __post_init__(self):
        if self.lie_derivatives is not None:
            m = len(self.lie_derivatives)
            if self.m is None:
                object.__setattr__(self, "m", m)
            elif self.m != m:
                raise ValueError(f"m={self.m} but {m} Lie derivatives were supplied")

    def validate(self, samples: np.ndarray, tol: float = 1e-10) -> None:
        """Check that the first Lie derivative entry reproduces h on samples."""
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[-1] != self.n:
            raise ValueError(f"samples must have last axis {self.n}")
        if self.lie_derivatives is not None:
            h0 = np.array([self.lie_derivatives[0](x) for x in samples])
            h = np.array([self.h(x) for x in samples])
            if np.max(np.abs(h0 - h)) > tol:
                raise ValueError("lie_derivatives[0] does not agree with h")

    def lipschitz_estimate(self, low, high, n_samples: int = 200, rng=None) -> float:
        """Largest difference quotient of f over random pairs in a box."""
        rng = np.random.default_rng(0) if rng is None else rng
        low = np.broadcast_to(np.asarray(low, dtype=float), (self.n,))
        high = np.broadcast_to(np.asarray(high, dtype=float), (self.n,))
        a = rng.uniform(low, high, size=(n_samples, self.n))
        b = rng.uniform(low, high, size=(n_samples, self.n))
        fa = np.array([self.f(x) for x in a])
        fb = np.array([self.f(x) for x in b])
        dist = np.linalg.norm(a - b, axis=1)
        keep = dist > 0
        return float(np.max(np.linalg.norm(fa - fb, axis=1)[keep] / dist[keep]))

    def H(self, x) -> np.ndarray:
        """Stacked map (h, L_f h, ..., L_f^{m-1} h)."""
        if self.lie_derivatives is None:
            raise ValueError("model has no Lie derivatives; use lie_derivatives_fd")
        return np.array([float(L(np.asarray(x, dtype=float))) for L in self.lie_derivatives])


@dataclass(frozen=True)
class CascadeParams:
    alpha: float
    gamma: float
    gamma0: float = 0.0

    def __post_init__(self):
        if not self.gamma > self.gamma0:
            raise ValueError(f"gamma={self.gamma} must exceed gamma0={self.gamma0}")

    @property
    def beta(self) -> float:
        return self.alpha + self.gamma


@dataclass(frozen=True)
class CascadeState:
    x: np.ndarray
    v: SpatialField
    t: float

    @property
    def y(self) -> float:
        return float(self.v.values[0])


@dataclass
class Trajectory:
    """Sampled cascade solution.  ``x`` has shape (len(times), n) and ``v``
    has shape (len(times), n_points)."""

    grid: SpatialGrid
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    outputs: np.ndarray = field(init=False)

    def __post_init__(self):
        self.outputs = self.v[:, 0].copy()

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> CascadeState:
        return CascadeState(self.x[i].copy(), SpatialField(self.grid, self.v[i]), float(self.times[i]))

    @property
    def states(self) -> list[CascadeState]:
        return [self.state(i) for i in range(len(self))]


def _check_finite(x: np.ndarray, what: str = "ODE state") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"{what} became non-finite")
    return x


def step_ode(model: OdeModel, x, dt: float, direction: str = "forward") -> np.ndarray:
    """One classical RK4 step of ``x' = f(x)`` (or ``x' = -f(x)`` backward)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    s = dt if direction == "forward" else -dt
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = np.asarray(model.f(x), dtype=float)
        k2 = np.asarray(model.f(x + 0.5 * s * k1), dtype=float)
        k3 = np.asarray(model.f(x + 0.5 * s * k2), dtype=float)
        k4 = np.asarray(model.f(x + s * k3), dtype=float)
        out = x + (s / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return _check_finite(out)


def flow(model: OdeModel, x0, dt: float, n_steps: int, direction: str = "forward") -> np.ndarray:
    """States X(k*dt; x0) for k = 0..n_steps (negative times when backward)."""
    x = np.asarray(x0, dtype=float)
    out = np.empty((n_steps + 1,) + x.shape)
    out[0] = x
    for k in range(n_steps):
        x = step_ode(model, x, dt, direction)
        out[k + 1] = x
    return out


def step_heat_dirichlet(v: SpatialField, alpha: float, boundary_value: float, dt: float) -> SpatialField:
    """One Crank-Nicolson step of ``v_t = v_ll + alpha v`` with ``v_l(0) = 0``
    and ``v(1) = boundary_value`` at the end of the step."""
    out = stepper(v.grid, float(alpha), float(dt)).step(v.values, float(boundary_value))
    return SpatialField(v.grid, _check_finite(out, "PDE state"))


def simulate_cascade(
    model: OdeModel, params: CascadeParams, x0, v0: SpatialField, tgrid: TimeGrid
) -> Trajectory:
    """Co-advance ODE and PDE with a common step: RK4 for x, then one
    Crank-Nicolson step for v with the boundary value h(x(t + dt))."""
    grid = v0.grid
    cn = stepper(grid, float(params.alpha), float(tgrid.dt))
    x = np.asarray(x0, dtype=float).reshape(model.n)
    xs = np.empty((tgrid.n_steps + 1, model.n))
    vs = np.empty((tgrid.n_steps + 1, grid.n_points))
    xs[0] = x
    vs[0] = v0.values
    v = v0.values
    for k in range(tgrid.n_steps):
        x = step_ode(model, x, tgrid.dt)
        v = cn.step(v, float(model.h(x)))
        xs[k + 1] = x
        vs[k + 1] = v
    _check_finite(vs, "PDE state")
    return Trajectory(grid, tgrid.times, xs, vs)


@dataclass(frozen=True)
class Assumption2Report:
    bound: float
    bounded: bool
    argmax_time: float
    horizon: float

    def __str__(self):
        verdict = "bounded" if self.bounded else "NOT bounded"
        return f"sup e^(g0 t)|h(X(t;x))| = {self.bound:.6g} at t={self.argmax_time:.4g} ({verdict} on [-{self.horizon:g}, 0])"


def check_assumption2(
    model: OdeModel,
    params: CascadeParams,
    x0,
    horizon: float,
    dt: float = 1e-3,
    tail_fraction: float = 0.1,
    rtol: float = 1e-2,
) -> Assumption2Report:
    """Sample ``e^{gamma0 t} |h(X(t; x0))|`` on [-horizon, 0].

    The weighted output is declared bounded when the supremum over the oldest
    ``tail_fraction`` of the window exceeds the supremum over the rest by at
    most ``rtol`` (relative), i.e. the envelope is not still growing at the
    far end; the slack absorbs sampling of periodic outputs.  Blow-up of the
    backward flow raises NonFiniteState.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    n_steps = max(1, int(np.ceil(horizon / dt)))
    step = horizon / n_steps
    xs = flow(model, x0, step, n_steps, "backward")
    t = -step * np.arange(n_steps + 1)
    weighted = np.exp(params.gamma0 * t) * np.abs(np.array([float(model.h(x)) for x in xs]))
    _check_finite(weighted, "weighted output")
    n_tail = max(1, int(round(tail_fraction * (n_steps + 1))))
    head, tail = weighted[:-n_tail], weighted[-n_tail:]
    i = int(np.argmax(weighted))
    bounded = head.size == 0 or tail.max() <= (1.0 + rtol) * head.max()
    return Assumption2Report(float(weighted[i]), bool(bounded), float(t[i]), float(horizon))

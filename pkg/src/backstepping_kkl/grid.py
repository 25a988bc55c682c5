"""Uniform grids on [0, 1], sampled fields and the discrete calculus shared
by every solver in the package.

All integrals use the composite trapezoidal rule and all second derivatives
use second-order stencils, so every solver built on top of this module is
second order in space.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform nodes ``lambda_i = i * h`` on [0, 1]."""

    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise ValueError(f"n_points must be an integer >= 3, got {self.n_points}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n_points - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = np.arange(self.n_points) * self.h
        nodes[-1] = 1.0
        nodes.setflags(write=False)
        return nodes

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights."""
        w = np.full(self.n_points, self.h)
        w[0] = w[-1] = 0.5 * self.h
        w.setflags(write=False)
        return w

    def field(self, values) -> "SpatialField":
        return SpatialField(self, values)

    def sample(self, func) -> "SpatialField":
        """Evaluate a vectorized callable at the nodes."""
        return SpatialField(self, np.broadcast_to(func(self.nodes), (self.n_points,)).copy())

    def zeros(self) -> "SpatialField":
        return SpatialField(self, np.zeros(self.n_points))


@dataclass(frozen=True, eq=False)
class SpatialField:
    """Values of a function of lambda at the nodes of ``grid``."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_points,):
            raise ValueError(
                f"field has shape {values.shape}, grid expects ({self.grid.n_points},)"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.grid.n_points

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def _other(self, other):
        if isinstance(other, SpatialField):
            if other.grid != self.grid:
                from .errors import GridMismatch

                raise GridMismatch("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return SpatialField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return SpatialField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return SpatialField(self.grid, self._other(other) - self.values)

    def __mul__(self, scalar):
        return SpatialField(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SpatialField(self.grid, -self.values)


@dataclass(frozen=True)
class TimeGrid:
    t0: float = 0.0
    dt: float = 1e-3
    n_steps: int = 1000

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @classmethod
    def until(cls, t_final: float, dt: float, t0: float = 0.0) -> "TimeGrid":
        return cls(t0=t0, dt=dt, n_steps=int(round((t_final - t0) / dt)))

    @property
    def t_final(self) -> float:
        return self.t0 + self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, SpatialField) else np.asarray(f, dtype=float)


def inner(f: SpatialField, g: SpatialField) -> float:
    """Trapezoidal L2 inner product."""
    if f.grid != g.grid:
        from .errors import GridMismatch

        raise GridMismatch("fields live on different grids")
    return float(np.dot(f.grid.weights, f.values * g.values))


def l2_norm(f: SpatialField) -> float:
    return float(np.sqrt(np.dot(f.grid.weights, f.values**2)))


def l2_norm_values(values: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """L2 norm along the last axis of a stack of sampled fields."""
    values = np.asarray(values, dtype=float)
    return np.sqrt((values**2) @ grid.weights)


def second_difference_values(values: np.ndarray, h: float) -> np.ndarray:
    """Second derivative along the last axis; central inside, one-sided
    second-order stencils (2, -5, 4, -1) at the two ends."""
    f = np.asarray(values, dtype=float)
    out = np.empty_like(f)
    out[..., 1:-1] = f[..., :-2] - 2.0 * f[..., 1:-1] + f[..., 2:]
    if f.shape[-1] >= 4:
        out[..., 0] = 2.0 * f[..., 0] - 5.0 * f[..., 1] + 4.0 * f[..., 2] - f[..., 3]
        out[..., -1] = 2.0 * f[..., -1] - 5.0 * f[..., -2] + 4.0 * f[..., -3] - f[..., -4]
    else:
        out[..., 0] = out[..., 1]
        out[..., -1] = out[..., -2]
    return out / h**2


def second_difference(f: SpatialField) -> SpatialField:
    return SpatialField(f.grid, second_difference_values(f.values, f.grid.h))


def first_difference(f: SpatialField) -> SpatialField:
    """First derivative, second order everywhere (numpy.gradient edge_order=2)."""
    return SpatialField(f.grid, np.gradient(f.values, f.grid.h, edge_order=2))

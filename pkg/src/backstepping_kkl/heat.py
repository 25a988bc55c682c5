"""Crank-Nicolson stepping for 1D reaction-diffusion equations on [0, 1]

    u_t = u_ll + c u + s(lambda) q(t),   u_l(0) = g(t),   u(1) = b(t),

with the Neumann condition imposed through a ghost node u_{-1} = u_1 - 2 h g
and the Dirichlet value held exactly at the last node.  The same stepper
drives the plant PDE, the observer target system and the burn-in solver.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .errors import SolverFailure
from .grid import SpatialGrid


class CrankNicolsonStepper:
    """One Crank-Nicolson step for a fixed grid, reaction coefficient and dt.

    The unknowns are nodes ``0 .. n_points - 2``; node ``n_points - 1`` carries
    the Dirichlet value.  ``step`` accepts a single profile of shape
    ``(n_points,)`` or a stack ``(n_points, k)`` advanced with common data.
    """

    def __init__(self, grid: SpatialGrid, reaction: float, dt: float):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.grid = grid
        self.reaction = float(reaction)
        self.dt = float(dt)
        m = grid.n_points - 1
        h2 = grid.h**2
        lower = np.full(m, 1.0 / h2)
        upper = np.full(m, 1.0 / h2)
        upper[1] = 2.0 / h2  # ghost node doubles the coupling of row 0 to node 1
        diag = np.full(m, -2.0 / h2 + self.reaction)
        self._diag, self._lower, self._upper = diag, lower, upper
        half = 0.5 * self.dt
        ab = np.zeros((3, m))
        ab[0, 1:] = -half * upper[1:]
        ab[1, :] = 1.0 - half * diag
        ab[2, :-1] = -half * lower[1:]
        self._ab = ab

    def apply_operator(self, u: np.ndarray) -> np.ndarray:
        """Discrete ``u_ll + c u`` at the unknown nodes, homogeneous boundary data."""
        out = self._diag[:, None] * u[:-1] if u.ndim == 2 else self._diag * u[:-1]
        out = out.copy()
        out[1:] += (self._lower[1:, None] if u.ndim == 2 else self._lower[1:]) * u[:-2]
        out[:-1] += (self._upper[1:, None] if u.ndim == 2 else self._upper[1:]) * u[1:-1]
        return out

    def step(
        self,
        u: np.ndarray,
        dirichlet_new,
        *,
        flux_old=0.0,
        flux_new=0.0,
        source=None,
        source_weight=0.0,
    ) -> np.ndarray:
        """Advance ``u`` by dt.

        Args:
            u: current profile (its last node is the previous Dirichlet value).
            dirichlet_new: Dirichlet value at lambda=1 at the end of the step.
            flux_old, flux_new: Neumann data u_l(0) at both ends of the step.
            source: spatial profile multiplying ``source_weight`` (midpoint value).
        """
        u = np.asarray(u, dtype=float)
        h = self.grid.h
        half = 0.5 * self.dt
        rhs = u[:-1] + half * self.apply_operator(u)
        dirichlet_old = u[-1]
        rhs[-1] += half * (dirichlet_old + np.asarray(dirichlet_new)) / h**2
        flux = np.asarray(flux_old) + np.asarray(flux_new)
        rhs[0] -= half * 2.0 * flux / h
        if source is not None:
            src = np.asarray(source, dtype=float)[:-1]
            if rhs.ndim == 2:
                rhs += self.dt * np.outer(src, np.broadcast_to(source_weight, rhs.shape[1:]))
            else:
                rhs += self.dt * src * source_weight
        try:
            interior = solve_banded((1, 1), self._ab, rhs, check_finite=False)
        except (LinAlgError, ValueError) as exc:
            raise SolverFailure(str(exc)) from exc
        out = np.empty_like(u)
        out[:-1] = interior
        out[-1] = dirichlet_new
        return out


@lru_cache(maxsize=64)
def stepper(grid: SpatialGrid, reaction: float, dt: float) -> CrankNicolsonStepper:
    return CrankNicolsonStepper(grid, reaction, dt)

"""Closed-form backstepping kernel

    p(l, lt) = beta (1 - l) J1(sqrt(beta q)) / sqrt(beta q),
    q = (l - lt)(2 - l - lt),   beta = alpha + gamma,

its output-injection gains p1(l) = -dp/dlt(l, 0) and p10 = -p(0, 0), and the
Volterra transform ``(T v)(l) = v(l) - int_0^l p(l, lt) v(lt) dlt`` with its
inverse.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DomainTooLarge, GridMismatch, OutOfTriangle
from .grid import SpatialField, SpatialGrid

SERIES_RADIUS = 400.0
_TERM_TOL = 1e-16


def _check_radius(s: np.ndarray) -> None:
    if np.any(np.abs(s) > SERIES_RADIUS):
        raise DomainTooLarge(f"|s| = {np.max(np.abs(s)):.6g} exceeds {SERIES_RADIUS:g}")


def bessel_ratio(s):
    """``J1(sqrt(s)) / sqrt(s)`` as the entire series in s.

    Negative s gives ``I1(sqrt(-s)) / sqrt(-s)`` through the same series.
    """
    s_arr = np.asarray(s, dtype=float)
    _check_radius(s_arr)
    u = -s_arr / 4.0
    term = np.full_like(s_arr, 0.5)
    total = term.copy()
    k = 0
    while np.any(np.abs(term) >= _TERM_TOL):
        k += 1
        term = term * u / (k * (k + 1))
        total = total + term
    return float(total) if np.ndim(s) == 0 else total


def bessel_ratio_derivative(s):
    """Derivative of :func:`bessel_ratio` with respect to s, term by term."""
    s_arr = np.asarray(s, dtype=float)
    _check_radius(s_arr)
    u = -s_arr / 4.0
    # k = 1 term of (1/2) sum_k k (-1/4)^k s^(k-1) / (k! (k+1)!)
    term = np.full_like(s_arr, -1.0 / 16.0)
    total = term.copy()
    k = 1
    while np.any(np.abs(term) >= _TERM_TOL):
        # ratio of consecutive terms: u / ((k) (k + 2)) in the shifted index
        term = term * u / (k * (k + 2))
        total = total + term
        k += 1
    return float(total) if np.ndim(s) == 0 else total


def _quadratic(lam, lam_t):
    return (lam - lam_t) * (2.0 - lam - lam_t)


def kernel_value(beta: float, lam, lam_t):
    """p(lambda, lambda_tilde) for 0 <= lambda_tilde <= lambda <= 1."""
    lam = np.asarray(lam, dtype=float)
    lam_t = np.asarray(lam_t, dtype=float)
    if np.any(lam_t > lam) or np.any(lam_t < 0) or np.any(lam > 1):
        raise OutOfTriangle("kernel requires 0 <= lambda_tilde <= lambda <= 1")
    out = beta * (1.0 - lam) * bessel_ratio(beta * _quadratic(lam, lam_t))
    return float(out) if out.ndim == 0 else out


def kernel_gain_p1(beta: float, lam):
    """p1(l) = -dp/dlt(l, 0) = 2 beta^2 (1 - l) Phi'(beta (2 l - l^2))."""
    lam = np.asarray(lam, dtype=float)
    return 2.0 * beta**2 * (1.0 - lam) * bessel_ratio_derivative(beta * lam * (2.0 - lam))


@dataclass(frozen=True, eq=False)
class KernelTable:
    grid: SpatialGrid
    beta: float
    p: np.ndarray
    p1: SpatialField
    p10: float

    def diagonal(self) -> np.ndarray:
        return np.diag(self.p).copy()

    def to_csv(self, path) -> None:
        lam = self.grid.nodes
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "lambda_tilde", "p"])
            for i in range(self.grid.n_points):
                for j in range(i + 1):
                    w.writerow([f"{lam[i]:.17g}", f"{lam[j]:.17g}", f"{self.p[i, j]:.17g}"])


def build_kernel_table(params=None, grid: SpatialGrid = None, *, beta: float = None) -> KernelTable:
    """Tabulate the kernel on the lower triangle of ``grid``.

    Either pass ``params`` (anything with ``alpha`` and ``gamma``) or ``beta``.
    """
    if beta is None:
        beta = float(params.alpha + params.gamma)
    lam = grid.nodes
    L, Lt = np.meshgrid(lam, lam, indexing="ij")
    mask = Lt <= L
    p = np.zeros_like(L)
    p[mask] = beta * (1.0 - L[mask]) * bessel_ratio(beta * _quadratic(L[mask], Lt[mask]))
    p[-1, :] = 0.0
    p.setflags(write=False)
    p1 = SpatialField(grid, kernel_gain_p1(beta, lam))
    return KernelTable(grid, float(beta), p, p1, -0.5 * float(beta))


def kernel_pde_residual(table: KernelTable) -> float:
    """Max of the centred residual p_ll - p_tt - beta p strictly inside the triangle."""
    p, h, n = table.p, table.grid.h, table.grid.n_points
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    inside = (j >= 1) & (j <= i - 2) & (i <= n - 2)
    ii, jj = i[inside], j[inside]
    p_ll = (p[ii + 1, jj] - 2.0 * p[ii, jj] + p[ii - 1, jj]) / h**2
    p_tt = (p[ii, jj + 1] - 2.0 * p[ii, jj] + p[ii, jj - 1]) / h**2
    res = p_ll - p_tt - table.beta * p[ii, jj]
    return float(np.max(np.abs(res))) if res.size else 0.0


@dataclass(frozen=True, eq=False)
class TransformMatrix:
    grid: SpatialGrid
    forward: np.ndarray
    kernel: KernelTable

    @cached_property
    def inverse(self) -> np.ndarray:
        n = self.grid.n_points
        inv = solve_triangular(self.forward, np.eye(n), lower=True)
        inv.setflags(write=False)
        return inv


def trapezoid_triangle_weights(grid: SpatialGrid) -> np.ndarray:
    """W[i, j]: trapezoid weight of node j in an integral over [0, lambda_i]."""
    n, h = grid.n_points, grid.h
    W = np.tril(np.full((n, n), h))
    idx = np.arange(n)
    W[:, 0] = 0.5 * h
    W[idx, idx] = 0.5 * h
    W[0, 0] = 0.0
    return W


def build_transform(table: KernelTable) -> TransformMatrix:
    F = np.eye(table.grid.n_points) - trapezoid_triangle_weights(table.grid) * table.p
    F.setflags(write=False)
    return TransformMatrix(table.grid, F, table)


def _check_grid(tm: TransformMatrix, f: SpatialField) -> None:
    if f.grid != tm.grid:
        raise GridMismatch(f"field has {f.grid.n_points} nodes, transform {tm.grid.n_points}")


def apply_transform(tm: TransformMatrix, v: SpatialField) -> SpatialField:
    _check_grid(tm, v)
    return SpatialField(tm.grid, tm.forward @ v.values)


def apply_inverse_transform(tm: TransformMatrix, z: SpatialField) -> SpatialField:
    _check_grid(tm, z)
    return SpatialField(tm.grid, solve_triangular(tm.forward, z.values, lower=True))

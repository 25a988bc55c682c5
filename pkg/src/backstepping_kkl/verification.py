"""Property suites behind ``verify``: each check reports the measured value
next to its tolerance."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .cascade import CascadeParams
from .grid import SpatialField, SpatialGrid, l2_norm
from .kernel import (
    apply_inverse_transform,
    apply_transform,
    bessel_ratio,
    build_kernel_table,
    build_transform,
    kernel_pde_residual,
)
from .kkl import T0Strategy, flow_property_check
from .models import oscillator_model, parameter_estimation_model
from .oracles import green_laplace, parity_check, poincare_gap, reconstruct_boundary, volterra_solve

SUITES = ("kernel", "transform", "t0", "oracle")


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    value: float
    tol: float
    passed: bool

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.suite}.{self.name}: {self.value:.3e} (tol {self.tol:.1e})"


def _le(suite, name, value, tol) -> Check:
    return Check(suite, name, float(value), float(tol), bool(value <= tol))


def _ge(suite, name, value, tol) -> Check:
    return Check(suite, name, float(value), float(tol), bool(value >= tol))


def observed_order(errors, ratio: float = 2.0) -> float:
    """Smallest order over consecutive refinements."""
    e = np.asarray(errors, dtype=float)
    return float(np.min(np.log(e[:-1] / e[1:]) / np.log(ratio)))


def random_smooth_fields(rng, grid: SpatialGrid, count: int, n_terms: int = 6, dirichlet_at_one: bool = False):
    """Random trigonometric fields and their exact derivatives, each (count, n_points).

    With ``dirichlet_at_one`` every field vanishes at 1.
    """
    lam = grid.nodes
    w = np.zeros((count, lam.size))
    dw = np.zeros_like(w)
    for k in range(n_terms):
        a = rng.normal(size=(count, 1)) / (1 + k)
        b = rng.normal(size=(count, 1)) / (1 + k)
        if dirichlet_at_one:
            mu, nu = (k + 0.5) * np.pi, (k + 1) * np.pi
        else:
            mu, nu = k * np.pi, (k + 0.5) * np.pi
        w += a * np.cos(mu * lam) + b * np.sin(nu * lam)
        dw += -a * mu * np.sin(mu * lam) + b * nu * np.cos(nu * lam)
    return w, dw


def kernel_suite(beta: float = 1.5) -> list:
    grids = [SpatialGrid(n) for n in (101, 201, 401)]
    residuals = [kernel_pde_residual(build_kernel_table(beta=beta, grid=g)) for g in grids]
    table = build_kernel_table(beta=beta, grid=grids[0])
    lam = table.grid.nodes
    diag_err = np.max(np.abs(table.diagonal() - beta * (1 - lam) / 2))
    s = np.linspace(1e-3, 100.0, 400)
    series_err = np.max(np.abs(bessel_ratio(s) - special.j1(np.sqrt(s)) / np.sqrt(s)))
    r = np.sqrt(s)
    series_err = max(series_err, np.max(np.abs(bessel_ratio(-s) / (special.i1(r) / r) - 1.0)))
    return [
        _le("kernel", "pde_residual_n101", residuals[0], 1e-3),
        _ge("kernel", "pde_residual_order", observed_order(residuals), 1.9),
        _le("kernel", "diagonal", diag_err, 1e-12),
        _le("kernel", "p10_exact", abs(table.p10 + beta / 2), 0.0),
        _le("kernel", "boundary_at_one", np.max(np.abs(table.p[-1])), 0.0),
        _le("kernel", "series_vs_scipy_bessel", series_err, 1e-12),
    ]


def transform_suite(seed: int = 0, count: int = 100, beta: float = 1.5) -> list:
    rng = np.random.default_rng(seed)
    grid = SpatialGrid(101)
    tm = build_transform(build_kernel_table(beta=beta, grid=grid))
    fields, _ = random_smooth_fields(rng, grid, count)
    worst = 0.0
    for v in fields:
        f = SpatialField(grid, v)
        back = apply_inverse_transform(tm, apply_transform(tm, f))
        worst = max(worst, l2_norm(back - f) / l2_norm(f))
    ident = build_transform(build_kernel_table(beta=0.0, grid=grid))
    id_err = np.max(np.abs(ident.forward - np.eye(grid.n_points)))
    upper = np.max(np.abs(np.triu(tm.forward, 1)))
    return [
        _le("transform", "round_trip_relative", worst, 1e-10),
        _le("transform", "identity_at_beta0", id_err, 0.0),
        _le("transform", "volterra_structure", upper, 0.0),
    ]


def t0_suite() -> list:
    grid = SpatialGrid(101)
    m1, m2 = parameter_estimation_model(), oscillator_model()
    p1, p2 = CascadeParams(0.5, 1.0), CascadeParams(0.0, 3.0)
    s1 = T0Strategy.analytic_example1(p1.gamma, grid)
    s2 = T0Strategy.ansatz_example2(p2.gamma, grid)
    b1 = T0Strategy.burn_in(m1, p1.gamma, grid, horizon=5.0)
    b2 = T0Strategy.burn_in(m2, p2.gamma, grid, horizon=5.0)
    e1 = l2_norm(b1([1.0]) - s1([1.0]))
    e2 = l2_norm(b2([0.1, 0.1]) - s2([0.1, 0.1]))
    checks = [_le("t0", "burn_in_vs_analytic", e1, 1e-4), _le("t0", "burn_in_vs_ansatz", e2, 2e-3)]
    for name, model, params, x0, ctor in (
        ("example1", m1, p1, [1.0], T0Strategy.analytic_example1),
        ("example2", m2, p2, [0.1, 0.1], T0Strategy.ansatz_example2),
    ):
        res = []
        for n, dt in ((51, 2e-3), (101, 1e-3), (201, 5e-4)):
            g = SpatialGrid(n)
            res.append(flow_property_check(model, params, g, x0, 1.0, ctor(params.gamma, g), dt=dt).residual)
        checks.append(_le("t0", f"flow_residual_{name}", res[1], 1e-2))
        checks.append(_ge("t0", f"flow_order_{name}", observed_order(res), 1.9))
    return checks


def oracle_suite(seed: int = 0) -> list:
    laplace = max(abs(green_laplace(s) - math.exp(-2 * math.sqrt(s))) for s in (0.5, 1.0, 2.0))

    def q(t):
        return np.exp(0.5 * t) * np.sin(t)

    sol = volterra_solve(q, -10.0, 0.01)
    ts = np.linspace(-10.0, 0.0, 41)
    volterra = max(abs(reconstruct_boundary(sol, t) - q(t)) for t in ts)
    rng = np.random.default_rng(seed)
    grid = SpatialGrid(401)
    w, dw = random_smooth_fields(rng, grid, 100, dirichlet_at_one=True)
    gaps = [poincare_gap(a, b, grid) for a, b in zip(w, dw)]
    even = grid.sample(lambda l: np.cos(np.pi * l) + l**2)
    return [
        _le("oracle", "laplace_transform", laplace, 1e-6),
        _le("oracle", "volterra_reconstruction", volterra, 1e-4),
        _ge("oracle", "poincare_min_gap", min(gaps), 0.0),
        _le("oracle", "parity_even_field", parity_check(even), 1e-3),
    ]


def run_suite(name: str, seed: int = 0) -> list:
    if name == "all":
        return [c for s in SUITES for c in run_suite(s, seed)]
    if name == "kernel":
        return kernel_suite()
    if name == "transform":
        return transform_suite(seed)
    if name == "t0":
        return t0_suite()
    if name == "oracle":
        return oracle_suite(seed)
    raise KeyError(name)

"""Independent checks built from the heat kernel on the half line.

The bounded solution of ``w_t = w_ll`` on [0, 1] with ``w_l(0) = 0`` and
``w(t, 1) = q(t)`` is represented by even reflection about 0 as

    w(t, l) = int_{-inf}^t psi(tau) [G(1 - l, t - tau) + G(1 + l, t - tau)] dtau,
    G(l, tau) = l / (2 sqrt(pi) tau^{3/2}) exp(-l^2 / (4 tau)),

where the density psi solves the Volterra equation of the second kind

    q(t) = psi(t) + int_{-inf}^t psi(tau) G(2, t - tau) dtau.

The Laplace transform of G(2, .) is exp(-2 sqrt(s)).  These routines are used
only to cross-check the finite-difference solvers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .errors import NonPositiveTau
from .grid import SpatialField


def green_function(lam, tau):
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr <= 0):
        raise NonPositiveTau("G(lambda, tau) needs tau > 0")
    lam = np.asarray(lam, dtype=float)
    out = lam / (2.0 * np.sqrt(np.pi) * tau_arr**1.5) * np.exp(-(lam**2) / (4.0 * tau_arr))
    return float(out) if out.ndim == 0 else out


def _green_safe(lam, tau):
    """G with the removable tau -> 0 limit (= 0 for lam != 0) filled in."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros(np.broadcast(np.asarray(lam), tau).shape)
    pos = tau > 0
    lam_b = np.broadcast_to(np.asarray(lam, dtype=float), out.shape)
    out[pos] = green_function(lam_b[pos], tau[pos])
    return out


def green_laplace(s: float, lam: float = 2.0) -> float:
    """``int_0^inf G(lam, tau) exp(-s tau) dtau`` by adaptive quadrature with
    tau = sigma^2, which removes the tau^{-3/2} factor near zero."""

    def integrand(sigma):
        if sigma == 0.0:
            return 0.0
        tau = sigma * sigma
        return green_function(lam, tau) * np.exp(-s * tau) * 2.0 * sigma

    val, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=400)
    return float(val)


History = Union[str, Callable[[np.ndarray], np.ndarray]]


@dataclass
class VolterraSolution:
    times: np.ndarray
    psi: np.ndarray
    history: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        self._spline = CubicSpline(self.times, self.psi)

    def density(self, t):
        """Cubic-spline density inside the window, history before it."""
        t = np.asarray(t, dtype=float)
        inside = self._spline(np.clip(t, self.times[0], self.times[-1]))
        return np.where(t < self.times[0], self.history(np.minimum(t, self.times[0])), inside)


def _history_fn(q, history: History):
    if callable(history):
        return history
    if history == "input":
        return q
    if history == "zero":
        return lambda t: np.zeros_like(np.asarray(t, dtype=float))
    raise ValueError(f"unknown history {history!r}")


def _history_integral(hist, t_start: float, lags: np.ndarray) -> np.ndarray:
    """``int_{-inf}^{t_start} hist(tau) G(2, t_start + lag - tau) dtau`` per lag."""

    def integrand(u):
        return hist(np.array(t_start - u)) * _green_safe(2.0, lags + u)

    val, _ = integrate.quad_vec(integrand, 0.0, np.inf, epsabs=1e-12, epsrel=1e-10)
    return np.asarray(val, dtype=float)


def volterra_solve(q: Callable[[np.ndarray], np.ndarray], t_start: float, dt: float, history: History = "input") -> VolterraSolution:
    """Solve for psi on [t_start, 0] by forward substitution.

    Inside the window the convolution uses the trapezoidal rule on the lag
    grid; the kernel vanishes at zero lag, so each step is explicit.  Before
    ``t_start`` the density is replaced by ``history`` ("input" = q itself,
    "zero", or a callable), whose contribution is integrated adaptively.
    """
    n = int(round(-t_start / dt))
    times = t_start + dt * np.arange(n + 1)
    times[-1] = 0.0
    hist = _history_fn(q, history)
    qv = np.asarray(q(times), dtype=float)
    lags = dt * np.arange(n + 1)
    kern = _green_safe(2.0, lags)
    rhs = qv - _history_integral(hist, t_start, lags)
    psi = np.empty(n + 1)
    psi[0] = rhs[0]
    for k in range(1, n + 1):
        conv = dt * (0.5 * kern[k] * psi[0] + np.dot(kern[k - 1 : 0 : -1], psi[1:k]))
        psi[k] = rhs[k] - conv
    return VolterraSolution(times, psi, hist)


def reconstruct_boundary(sol: VolterraSolution, t: float) -> float:
    """``w(t, 1)`` from the Green's representation: the G(0+, .) term collapses
    to psi(t) and the reflected term is integrated adaptively."""
    t = float(t)
    t0 = sol.times[0]

    def inside(tau):
        return float(sol.density(tau)) * float(_green_safe(2.0, t - tau))

    val = 0.0
    if t > t0:
        val, _ = integrate.quad(inside, t0, t, limit=500, epsabs=1e-12, epsrel=1e-10)

    def before(u):
        return float(sol.history(np.array(t0 - u))) * float(_green_safe(2.0, t - t0 + u))

    tail, _ = integrate.quad(before, 0.0, np.inf, limit=400, epsabs=1e-12, epsrel=1e-10)
    return float(sol.density(t)) + val + tail


def reconstruct_field(sol: VolterraSolution, t: float, lam: np.ndarray) -> np.ndarray:
    """``w(t, lam)`` for lam < 1 from the Green's representation."""
    t = float(t)
    t0 = sol.times[0]
    out = []
    for l in np.atleast_1d(lam):
        a, b = 1.0 - l, 1.0 + l

        def kernel(s):
            return _green_safe(a, s) + _green_safe(b, s)

        def inside(tau):
            return float(sol.density(tau)) * float(kernel(t - tau))

        # the G(1 - l) factor peaks at lag ~ (1 - l)^2 / 6
        peak = t - a * a / 6.0
        pts = [p for p in (peak,) if t0 < p < t]
        v, _ = integrate.quad(inside, t0, t, points=pts or None, limit=1000, epsabs=1e-12, epsrel=1e-10)

        def before(u):
            return float(sol.history(np.array(t0 - u))) * float(kernel(t - t0 + u))

        tail, _ = integrate.quad(before, 0.0, np.inf, limit=400, epsabs=1e-12, epsrel=1e-10)
        out.append(v + tail)
    return np.array(out)


def exponential_density(s: complex, t):
    """Exact density for the input ``q(t) = exp(s t)``: exp(s t) / (1 + exp(-2 sqrt(s)))."""
    return np.exp(s * np.asarray(t)) / (1.0 + np.exp(-2.0 * np.sqrt(s)))


def odd_derivatives_at_zero(f: SpatialField) -> dict:
    """One-sided, second-order estimates of f'(0) and f'''(0)."""
    v, h = f.values, f.grid.h
    d1 = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    d3 = (-2.5 * v[0] + 9.0 * v[1] - 12.0 * v[2] + 7.0 * v[3] - 1.5 * v[4]) / h**3
    return {1: float(d1), 3: float(d3)}


def parity_check(f: SpatialField) -> float:
    """Largest magnitude among the odd derivatives of order 1 and 3 at 0."""
    return max(abs(d) for d in odd_derivatives_at_zero(f).values())


def poincare_gap(w: np.ndarray, dw: np.ndarray, grid) -> float:
    """``(1/2) int w'^2 - int w^2``; nonnegative whenever w(1) = 0."""
    wt = grid.weights
    return float(0.5 * np.dot(wt, dw**2) - np.dot(wt, w**2))

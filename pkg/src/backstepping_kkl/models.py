"""The two benchmark cascades and a helper to build models from expressions."""
from __future__ import annotations

import numpy as np

from .cascade import OdeModel


def _zero_field(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _identity_output(x):
    return np.asarray(x, dtype=float)[..., 0]


def parameter_estimation_model() -> OdeModel:
    """Constant state observed through the heat equation: f = 0, h(x) = x."""
    return OdeModel(n=1, f=_zero_field, h=_identity_output, lie_derivatives=[_identity_output], name="example1")


def _rotation(x):
    x = np.asarray(x, dtype=float)
    return np.stack([x[..., 1], -x[..., 0]], axis=-1)


def _quadratic_output(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return x1**2 - x2**2 + x1 + x2


def _lie1(x):
    x1, x2 = np.asarray(x, dtype=float)[..., 0], np.asarray(x, dtype=float)[..., 1]
    return 4 * x1 * x2 + x2 - x1


def _lie2(x):
    x1, x2 = np.asarray(x, dtype=float)[..., 0], np.asarray(x, dtype=float)[..., 1]
    return -4 * (x1**2 - x2**2) - (x1 + x2)


def _lie3(x):
    x1, x2 = np.asarray(x, dtype=float)[..., 0], np.asarray(x, dtype=float)[..., 1]
    return -16 * x1 * x2 - (x2 - x1)


def oscillator_model() -> OdeModel:
    """Harmonic oscillator f = (x2, -x1) with h = x1^2 - x2^2 + x1 + x2."""
    return OdeModel(
        n=2,
        f=_rotation,
        h=_quadratic_output,
        lie_derivatives=[_quadratic_output, _lie1, _lie2, _lie3],
        name="example2",
    )


def model_from_expressions(f_exprs, h_expr, m: int = None) -> OdeModel:
    """Build a model from sympy-parsable strings in the variables x1..xn.

    ``m`` Lie derivatives are generated symbolically (default: n).
    """
    import sympy as sp

    n = len(f_exprs)
    xs = sp.symbols(" ".join(f"x{i + 1}" for i in range(n)), real=True)
    xs = (xs,) if n == 1 else xs
    local = {str(s): s for s in xs}
    f_sym = [sp.sympify(e, locals=local) for e in f_exprs]
    h_sym = sp.sympify(h_expr, locals=local)
    unknown = set().union(*(e.free_symbols for e in f_sym + [h_sym])) - set(xs)
    if unknown:
        raise ValueError(f"unknown symbols {sorted(map(str, unknown))}; use x1..x{n}")
    m = n if m is None else m
    lie = [h_sym]
    for _ in range(m - 1):
        lie.append(sp.expand(sum(sp.diff(lie[-1], xi) * fi for xi, fi in zip(xs, f_sym))))

    def scalar_fn(expr):
        fn = sp.lambdify(xs, expr, "numpy")

        def call(x):
            x = np.asarray(x, dtype=float)
            out = fn(*[x[..., i] for i in range(n)])
            return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

        return call

    f_fns = [scalar_fn(e) for e in f_sym]

    def f(x):
        return np.stack([fn(x) for fn in f_fns], axis=-1)

    return OdeModel(n=n, f=f, h=scalar_fn(h_sym), lie_derivatives=[scalar_fn(e) for e in lie], m=m)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from backstepping_kkl.errors import GridMismatch
from backstepping_kkl.grid import (
    SpatialField,
    SpatialGrid,
    TimeGrid,
    first_difference,
    inner,
    l2_norm,
    second_difference,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_nodes_and_spacing():
    g = SpatialGrid(101)
    assert g.h == pytest.approx(0.01)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    assert np.allclose(np.diff(g.nodes), g.h)


@pytest.mark.parametrize("n", [0, 1, 2, 2.5])
def test_too_few_nodes_rejected(n):
    with pytest.raises(ValueError):
        SpatialGrid(n)


def test_field_rejects_wrong_length_and_nonfinite():
    g = SpatialGrid(5)
    with pytest.raises(ValueError):
        SpatialField(g, np.zeros(4))
    with pytest.raises(ValueError):
        SpatialField(g, np.array([0, 1, np.nan, 0, 0.0]))


def test_field_values_are_read_only():
    f = SpatialGrid(5).zeros()
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_mixing_grids_raises():
    with pytest.raises(GridMismatch):
        SpatialGrid(5).zeros() + SpatialGrid(7).zeros()
    with pytest.raises(GridMismatch):
        inner(SpatialGrid(5).zeros(), SpatialGrid(7).zeros())


def test_time_grid():
    tg = TimeGrid.until(5.0, 1e-3)
    assert tg.n_steps == 5000
    assert tg.times[-1] == pytest.approx(5.0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 0.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 0.1, 0)


def test_l2_norm_examples():
    assert l2_norm(SpatialGrid(101).zeros()) == 0.0
    assert l2_norm(SpatialGrid(101).sample(np.ones_like)) == pytest.approx(1.0, abs=1e-15)
    f = SpatialGrid(401).sample(lambda l: np.cos(np.pi * l))
    assert abs(l2_norm(f) - 1 / np.sqrt(2)) <= 1e-5


def test_second_difference_examples():
    g = SpatialGrid(101)
    sq = second_difference(g.sample(lambda l: l**2)).values
    assert np.max(np.abs(sq[1:-1] - 2.0)) <= 1e-10
    const = second_difference(g.sample(lambda l: 3.0 + 0 * l)).values
    assert np.max(np.abs(const)) <= 1e-9
    g4 = SpatialGrid(401)
    c = second_difference(g4.sample(lambda l: np.cos(np.pi * l))).values
    exact = -np.pi**2 * np.cos(np.pi * g4.nodes)
    assert np.max(np.abs(c - exact)[1:-1]) <= 1e-3


def test_second_difference_exact_on_cubics_at_endpoints():
    g = SpatialGrid(11)
    d = second_difference(g.sample(lambda l: l**3 - 2 * l**2)).values
    assert np.allclose(d, 6 * g.nodes - 4, atol=1e-9)


def test_second_difference_converges_at_order_two():
    errs = []
    for n in (51, 101, 201):
        g = SpatialGrid(n)
        d = second_difference(g.sample(lambda l: np.sin(2 * l) + np.exp(l)))
        exact = g.sample(lambda l: -4 * np.sin(2 * l) + np.exp(l))
        errs.append(l2_norm(d - exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8)


def test_first_difference_second_order():
    g = SpatialGrid(201)
    d = first_difference(g.sample(np.sin)).values
    assert np.max(np.abs(d - np.cos(g.nodes))) < 1e-4


@given(arrays(float, 21, elements=finite), arrays(float, 21, elements=finite), finite)
def test_norm_triangle_and_homogeneity(a, b, c):
    g = SpatialGrid(21)
    f, h = SpatialField(g, a), SpatialField(g, b)
    assert l2_norm(f + h) <= l2_norm(f) + l2_norm(h) + 1e-9
    assert l2_norm(f * c) == pytest.approx(abs(c) * l2_norm(f), rel=1e-12, abs=1e-12)


@given(arrays(float, 21, elements=finite), arrays(float, 21, elements=finite), finite, finite)
def test_second_difference_linear(a, b, p, q):
    g = SpatialGrid(21)
    f, h = SpatialField(g, a), SpatialField(g, b)
    lhs = second_difference(f * p + h * q).values
    rhs = p * second_difference(f).values + q * second_difference(h).values
    scale = (abs(p) * np.max(np.abs(a)) + abs(q) * np.max(np.abs(b)) + 1.0) / g.h**2
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale

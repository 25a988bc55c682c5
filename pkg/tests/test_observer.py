import numpy as np
import pytest

from backstepping_kkl.cascade import CascadeParams, simulate_cascade
from backstepping_kkl.errors import EmptySearchBox, GridMismatch, RankDeficientLS
from backstepping_kkl.grid import SpatialField, SpatialGrid, TimeGrid, l2_norm
from backstepping_kkl.kernel import build_kernel_table, build_transform
from backstepping_kkl.kkl import FIRST_EIGENVALUE, T0Strategy
from backstepping_kkl.models import oscillator_model, parameter_estimation_model
from backstepping_kkl.observer import (
    InversionConfig,
    Inverter,
    ModeBasis,
    SteadyManifold,
    TargetState,
    forward_map,
    invert_map,
    run_observer,
    run_target,
    step_target,
)


def _setup(example, n=101):
    g = SpatialGrid(n)
    if example == 1:
        p = CascadeParams(0.5, 1.0)
        return g, p, T0Strategy.analytic_example1(1.0, g), build_transform(build_kernel_table(p, g)), ((-3.0, 3.0),)
    p = CascadeParams(0.0, 3.0)
    return g, p, T0Strategy.ansatz_example2(3.0, g), build_transform(build_kernel_table(p, g)), ((-1.0, 1.0), (-1.0, 1.0))


# target system


def test_target_homogeneous_decay():
    g, p, _, tm, _ = _setup(1)
    z0 = g.sample(lambda l: np.cos(np.pi * l / 2) + 0.3 * np.cos(3 * np.pi * l / 2))
    z = TargetState(z0, 0.0)
    for _ in range(1000):
        z = step_target(z, tm.kernel, p.gamma, 0.0, 1e-3)
    assert z.t == pytest.approx(1.0)
    assert l2_norm(z.z) <= 1.02 * np.exp(-(p.gamma + FIRST_EIGENVALUE)) * l2_norm(z0)
    assert z.z.values[-1] == 0.0


def test_target_zero_stays_zero():
    g, p, _, tm, _ = _setup(2)
    z = TargetState(g.zeros(), 0.0)
    for _ in range(10):
        z = step_target(z, tm.kernel, p.gamma, 0.0, 1e-2)
    assert np.all(z.z.values == 0.0)


def test_target_grid_mismatch():
    _, p, _, tm, _ = _setup(1)
    with pytest.raises(GridMismatch):
        step_target(TargetState(SpatialGrid(11).zeros(), 0.0), tm.kernel, p.gamma, 1.0, 1e-3)


@pytest.mark.parametrize("example", [1, 2])
def test_target_started_on_transform_tracks_it(example):
    # z0 = T(x0, v0) with compatible v0: the error stays at discretization level
    g, p, t0, tm, _ = _setup(example)
    model = parameter_estimation_model() if example == 1 else oscillator_model()
    x0 = np.array([1.0]) if example == 1 else np.array([0.1, 0.1])
    hx = float(model.h(x0))
    v0 = g.sample(lambda l: hx * np.cos(np.pi * l) ** 2)
    tg = TimeGrid.until(2.0, 1e-3)
    traj = simulate_cascade(model, p, x0, v0, tg)
    y = traj.v[:, 0]
    zs = run_target(tm.kernel, p.gamma, y, forward_map(x0, v0, t0, tm), tg)
    errs = [l2_norm(SpatialField(g, zs[k]) - forward_map(traj.x[k], SpatialField(g, traj.v[k]), t0, tm)) for k in range(0, 2001, 200)]
    assert max(errs) < 5e-4
    assert errs[-1] <= 2 * errs[1] + 1e-12


def test_run_target_length_checked():
    g, p, _, tm, _ = _setup(1, 11)
    with pytest.raises(ValueError):
        run_target(tm.kernel, p.gamma, np.zeros(3), g.zeros(), TimeGrid.until(1.0, 0.1))


# forward map


def test_forward_map_example1_values():
    g, _, t0, tm, _ = _setup(1)
    z = forward_map([2.0], g.zeros(), t0, tm)
    assert np.allclose(z.values, 2 * t0([1.0]).values, atol=1e-15)
    assert z.values[-1] == pytest.approx(-2.0)


def test_forward_map_cancels_boundary_on_plant_manifold():
    # v(1) = h(x) and T0(x)(1) = -h(x), so T(x, v) vanishes at 1
    g, _, t0, tm, _ = _setup(2)
    x = np.array([0.4, -0.2])
    hx = float(oscillator_model().h(x))
    v = g.sample(lambda l: hx * np.cos(2.0 * l) / np.cos(2.0))
    assert abs(forward_map(x, v, t0, tm).values[-1]) < 1e-14


def test_forward_map_identity_transform():
    g = SpatialGrid(51)
    t0 = T0Strategy.analytic_example1(1.0, g)
    tm = build_transform(build_kernel_table(beta=0.0, grid=g))
    v = g.sample(np.cos)
    assert np.array_equal(forward_map([0.0], v, t0, tm).values, v.values)


def test_forward_map_grid_mismatch():
    _, _, t0, tm, _ = _setup(1)
    with pytest.raises(GridMismatch):
        forward_map([1.0], SpatialGrid(11).zeros(), t0, tm)


# basis


def test_mode_basis_kinds():
    g = SpatialGrid(101)
    cos = ModeBasis(g, 3)
    assert np.allclose(cos.frequencies, [0, np.pi, 2 * np.pi])
    dec = ModeBasis(g, 3, "decaying")
    assert np.allclose(dec.matrix[-1], 0.0, atol=1e-15)
    cheb = ModeBasis(g, 3, "chebyshev_even").matrix
    lam = g.nodes
    assert np.allclose(cheb[:, 2], 8 * lam**4 - 8 * lam**2 + 1)
    with pytest.raises(ValueError):
        ModeBasis(g, 0)
    with pytest.raises(ValueError):
        ModeBasis(g, 2, "legendre")


@pytest.mark.parametrize("kind", ModeBasis.KINDS)
def test_mode_basis_is_even(kind):
    from backstepping_kkl.oracles import parity_check

    # stencil error scales with the mode frequency; odd fields give O(1) relative values
    g = SpatialGrid(201)
    M = ModeBasis(g, 4, kind).matrix
    for j in range(4):
        assert parity_check(SpatialField(g, M[:, j])) < 1e-3 * (1 + (4 * np.pi) ** 3)
    assert parity_check(SpatialField(g, np.sin(np.pi * g.nodes))) > 1.0


def test_steady_manifold_linear_closed_form():
    g = SpatialGrid(101)
    V = SteadyManifold.linear(0.5, g)([2.0]).values
    exact = 2.0 * np.cos(np.sqrt(0.5) * g.nodes) / np.cos(np.sqrt(0.5))
    assert np.max(np.abs(V - exact)) < 1e-4


def test_steady_manifold_matches_long_simulation():
    g = SpatialGrid(101)
    p = CascadeParams(0.5, 1.0)
    traj = simulate_cascade(parameter_estimation_model(), p, [1.5], g.zeros(), TimeGrid.until(20.0, 1e-2))
    # the manifold solves the steady problem with a different boundary closure: O(h^2) apart
    assert np.max(np.abs(traj.v[-1] - SteadyManifold.linear(0.5, g)([1.5]).values)) < 5e-4


def test_steady_manifold_ansatz_matches_burn_in():
    g = SpatialGrid(51)
    x = np.array([0.3, -0.2])
    a = SteadyManifold.ansatz_example2(0.0, g)(x)
    b = SteadyManifold.burn_in(oscillator_model(), 0.0, g, dt=2e-3)(x)
    assert l2_norm(a - b) < 2e-3
    with pytest.raises(ValueError):
        SteadyManifold.burn_in(oscillator_model(), 3.0, g)


def test_steady_manifold_on_plant_boundary():
    g = SpatialGrid(101)
    X = np.array([[0.1, 0.1], [0.5, -0.4]])
    V = SteadyManifold.ansatz_example2(0.0, g).values_many(X)
    assert np.allclose(V[:, -1], oscillator_model().h(X), atol=1e-14)


# inversion


def test_inversion_config_validation():
    with pytest.raises(EmptySearchBox):
        InversionConfig(((1.0, 1.0),))
    with pytest.raises(EmptySearchBox):
        InversionConfig(())
    with pytest.raises(ValueError):
        InversionConfig(((0.0, 1.0),), grid_points_per_dim=2)
    with pytest.raises(ValueError):
        InversionConfig(((0.0, 1.0),), ridge=-1.0)
    with pytest.raises(ValueError):
        InversionConfig(((0.0, 1.0),), refine_method="bfgs")


def test_rank_deficient_without_ridge():
    g, _, t0, tm, box = _setup(1, 51)
    # on 51 nodes cos(k pi l) for k = 0 and k = 100 coincide
    basis = ModeBasis(g, 101)
    with pytest.raises(RankDeficientLS):
        Inverter(t0, tm, basis, InversionConfig(box, ridge=0.0))
    Inverter(t0, tm, basis, InversionConfig(box, ridge=1e-8))


@pytest.mark.parametrize("example", [1, 2])
@pytest.mark.parametrize("offset", [False, True])
def test_exact_recovery(example, offset, rng):
    g, p, t0, tm, box = _setup(example)
    if offset:
        basis = ModeBasis(g, 2, "decaying", SteadyManifold.for_params(f"example{example}", p, g))
    else:
        basis = ModeBasis(g, 8)
    inv = Inverter(t0, tm, basis, InversionConfig(box, ridge=0.0))
    lo, hi = np.array(box).T
    for _ in range(10):
        x = rng.uniform(0.9 * lo, 0.9 * hi)
        v = basis.field(rng.normal(size=basis.n_modes), x)
        r = inv(forward_map(x, v, t0, tm))
        assert np.max(np.abs(r.x_hat - x)) < 1e-6
        assert l2_norm(r.v_hat - v) < 1e-6
        assert r.residual < 1e-8


def test_zero_target_gives_zero_state():
    g, _, t0, tm, box = _setup(1)
    r = invert_map(g.zeros(), t0, tm, ModeBasis(g, 8), InversionConfig(box))
    assert abs(r.x_hat[0]) < 1e-9
    assert r.residual < 1e-9


def _example1_linear_lstsq(inv, z):
    # Example 1 is linear in (x, c): z = x theta + A c, solved directly
    w = np.sqrt(inv.tm.grid.weights)
    theta = inv._theta(np.array([[1.0]]))[0]
    K = np.column_stack([theta, inv._A])
    sol, *_ = np.linalg.lstsq(w[:, None] * K, w * z.values, rcond=None)
    perp = theta - inv._A @ (inv._proj @ theta)
    gain = 1.0 / np.sqrt(perp**2 @ inv.tm.grid.weights)
    return sol[0], gain


@pytest.mark.parametrize("offset", [False, True])
def test_inversion_under_perturbation_matches_linear_least_squares(offset, rng):
    g, p, t0, tm, box = _setup(1)
    basis = ModeBasis(g, 2, "decaying", SteadyManifold.for_params("example1", p, g)) if offset else ModeBasis(g, 8)
    inv = Inverter(t0, tm, basis, InversionConfig(box, ridge=0.0))
    x = np.array([1.0])
    z = forward_map(x, basis.field(rng.normal(size=basis.n_modes), x), t0, tm)
    for _ in range(5):
        dz = rng.normal(size=g.n_points)
        dz *= 1e-3 / l2_norm(SpatialField(g, dz))
        zp = z + SpatialField(g, dz)
        r = inv(zp)
        x_ls, gain = _example1_linear_lstsq(inv, zp)
        assert r.x_hat[0] == pytest.approx(x_ls, abs=1e-6)
        assert abs(r.x_hat[0] - 1.0) <= gain * 1e-3 * (1 + 1e-9)


def test_perturbation_gain_values():
    # worst-case |dx| per unit L2 perturbation of z, frozen from the linear algebra above
    g, p, t0, tm, box = _setup(1)
    cos8 = Inverter(t0, tm, ModeBasis(g, 8), InversionConfig(box))
    preset = Inverter(t0, tm, ModeBasis(g, 2, "decaying", SteadyManifold.for_params("example1", p, g)), InversionConfig(box))
    z = SpatialGrid(101).zeros()
    assert _example1_linear_lstsq(cos8, z)[1] == pytest.approx(510.4, rel=1e-3)
    assert _example1_linear_lstsq(preset, z)[1] == pytest.approx(73.84, rel=1e-3)


def test_residual_consistent_with_forward_map(rng):
    g, _, t0, tm, box = _setup(2)
    basis = ModeBasis(g, 8)
    z = SpatialField(g, rng.normal(size=g.n_points))
    r = invert_map(z, t0, tm, basis, InversionConfig(box))
    assert r.residual == pytest.approx(l2_norm(z - forward_map(r.x_hat, r.v_hat, t0, tm)), abs=1e-12)


def test_example1_scaling_invariance():
    # T is linear in (x, v) for Example 1, so scaling z scales the estimate
    g, _, t0, tm, _ = _setup(1)
    basis = ModeBasis(g, 4)
    cfg = InversionConfig(((-10.0, 10.0),), ridge=0.0)
    v = basis.field([0.5, -0.2, 0.1, 0.05])
    z = forward_map([0.7], v, t0, tm)
    r1 = invert_map(z, t0, tm, basis, cfg)
    r3 = invert_map(3.0 * z, t0, tm, basis, cfg)
    assert r3.x_hat[0] == pytest.approx(3 * r1.x_hat[0], abs=1e-8)
    assert np.allclose(r3.coefficients, 3 * r1.coefficients, atol=1e-8)


def test_box_boundary_flagged():
    g, _, t0, tm, _ = _setup(1)
    basis = ModeBasis(g, 4)
    z = forward_map([2.0], basis.field(np.zeros(4)), t0, tm)
    r = invert_map(z, t0, tm, basis, InversionConfig(((-1.0, 1.0),)))
    assert r.at_box_boundary
    assert r.x_hat[0] == pytest.approx(1.0)


def test_nelder_mead_refine_available(rng):
    g, _, t0, tm, box = _setup(1)
    basis = ModeBasis(g, 4)
    v = basis.field(rng.normal(size=4))
    z = forward_map([0.37], v, t0, tm)
    r = invert_map(z, t0, tm, basis, InversionConfig(box, ridge=0.0, refine_method="nelder_mead", refine_iterations=400))
    assert abs(r.x_hat[0] - 0.37) < 1e-6


def test_inversion_grid_mismatch():
    g, _, t0, tm, box = _setup(1)
    with pytest.raises(GridMismatch):
        Inverter(t0, tm, ModeBasis(SpatialGrid(11)), InversionConfig(box))
    with pytest.raises(GridMismatch):
        Inverter(t0, tm, ModeBasis(g), InversionConfig(box))(SpatialGrid(11).zeros())


# full observer


def test_observer_started_on_transform_recovers_state():
    g, p, t0, tm, box = _setup(1)
    model = parameter_estimation_model()
    basis = ModeBasis(g, 2, "decaying", SteadyManifold.for_params("example1", p, g))
    x0 = np.array([1.0])
    v0 = SteadyManifold.linear(0.5, g)(x0)
    tg = TimeGrid.until(0.5, 1e-3)
    traj = simulate_cascade(model, p, x0, v0, tg)
    run = run_observer(model, p, t0, tm, basis, InversionConfig(box), traj.v[:, 0], forward_map(x0, v0, t0, tm), tg, invert_every=100)
    assert list(run.output_index) == [0, 100, 200, 300, 400, 500]
    assert np.max(np.abs(run.x_hat[:, 0] - 1.0)) < 1e-4  # manifold vs discrete steady state is O(h^2)
    assert run.z.shape == (501, g.n_points)


def test_observer_consistency_checks():
    g, p, t0, tm, box = _setup(1, 21)
    model = parameter_estimation_model()
    tg = TimeGrid.until(0.2, 0.1)
    y = np.zeros(3)
    with pytest.raises(ValueError):
        run_observer(model, CascadeParams(0.5, 2.0), t0, tm, ModeBasis(g, 2), InversionConfig(box), y, g.zeros(), tg)
    with pytest.raises(ValueError):
        t2 = T0Strategy.ansatz_example2(1.0, g)
        run_observer(model, p, t2, tm, ModeBasis(g, 2), InversionConfig(box), y, g.zeros(), tg)

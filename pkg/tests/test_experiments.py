import math

import numpy as np
import pytest

from backstepping_kkl import experiments as ex
from backstepping_kkl.errors import ConfigError


def test_presets_resolve():
    c1 = ex.load_config(None, example="example1")
    assert (c1.alpha, c1.gamma, c1.x0, c1.x_box) == (0.5, 1.0, (1.0,), ((-3.0, 3.0),))
    c2 = ex.load_config(None, example="example2", gamma=10.0)
    assert (c2.alpha, c2.gamma, c2.x0) == (0.0, 10.0, (0.1, 0.1))
    assert c2.n_points == 101 and c2.dt == 1e-3 and c2.t_final == 5.0


def test_config_file_parsing(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text(
        "[experiment]\nexample = example2\ngamma = 4.5\nx0 = 0.2, -0.1\nt_final = 1\n"
        "[inversion]\nx_box = -2 2; -1 1\nn_modes = 3\nsteady_offset = false\n"
        "[kkl]\nt0_strategy = burn_in\nburn_in_horizon = 4\n"
    )
    cfg = ex.load_config(p)
    assert cfg.gamma == 4.5 and cfg.x0 == (0.2, -0.1) and cfg.t_final == 1.0
    assert cfg.x_box == ((-2.0, 2.0), (-1.0, 1.0))
    assert cfg.n_modes == 3 and cfg.steady_offset is False
    assert cfg.t0_strategy == "burn_in" and cfg.burn_in_horizon == 4.0
    assert ex.load_config(p, gamma=6.0).gamma == 6.0


def test_custom_model_section():
    cfg = ex.ExperimentConfig(**ex.parse_config_text(
        "[experiment]\nexample = custom\nalpha = 0\ngamma = 2\nx0 = 1, 0\n[model]\nf = x2; -x1\nh = x1\n"
    )).resolved()
    assert cfg.f == ("x2", "-x1") and cfg.h == "x1"
    assert cfg.x_box == ((-1.0, 1.0), (-1.0, 1.0))


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[experiment]\nexample = example1\n\ngamma = abc\n", "cfg.ini:4"),
        ("[experiment]\nbogus = 1\n", "unknown key"),
        ("[inversion]\nx_box = 1\n", "x_box"),
        ("[inversion]\nsteady_offset = maybe\n", "steady_offset"),
    ],
)
def test_config_errors_name_the_line(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        ex.parse_config_text(text, "cfg.ini")


@pytest.mark.parametrize(
    "overrides, fragment",
    [
        (dict(gamma=0.0), "gamma"),
        (dict(gamma=1.0, gamma0=2.0), "gamma0"),
        (dict(example="example3"), "example"),
        (dict(x0=(1.0, 2.0)), "x0"),
        (dict(x_box=((1.0, -1.0),)), "x_box"),
        (dict(v0="triangle"), "v0"),
        (dict(t0_strategy="ansatz"), "t0_strategy"),
        (dict(n_points=2), "n_points"),
        (dict(dt=-1.0), "dt"),
        (dict(basis="legendre"), "basis"),
        (dict(refine_method="bfgs"), "refine_method"),
        (dict(example="custom", alpha=0.0, gamma=1.0, x0=(1.0,)), "custom"),
    ],
)
def test_config_validation(overrides, fragment):
    with pytest.raises(ConfigError, match=fragment):
        ex.load_config(None, **overrides)


def test_missing_config_file():
    with pytest.raises(ConfigError):
        ex.load_config("/nonexistent/run.ini")


def test_simulate_boundary_and_output():
    cfg = ex.load_config(None, example="example1", t_final=0.5)
    traj = ex.run_simulation(cfg)
    assert traj.v[0, -1] == pytest.approx(-1.0)  # v0(1) = -1 before the first step
    assert np.all(traj.v[1:, -1] == 1.0)
    assert np.array_equal(traj.outputs, traj.v[:, 0])


def test_simulate_zero_model_stays_zero():
    cfg = ex.load_config(None, example="custom", f=("0",), h="0", v0="zero", alpha=0.0, gamma=1.0, x0=(0.0,), t_final=0.2)
    traj = ex.run_simulation(cfg)
    assert np.all(traj.v == 0.0) and np.all(traj.x == 0.0)


def test_simulate_example2_norm_conserved():
    cfg = ex.load_config(None, example="example2", t_final=2.0)
    traj = ex.run_simulation(cfg)
    r = np.linalg.norm(traj.x, axis=1)
    assert np.max(np.abs(r - r[0])) < 1e-8


def test_time_to_threshold():
    t = np.array([0.0, 1.0, 2.0])
    assert ex.time_to_threshold(t, [1e-1, 1e-2, 1e-4]) == pytest.approx(1.5)
    assert ex.time_to_threshold(t, [1e-4, 1e-2, 1e-4]) == 0.0
    assert math.isinf(ex.time_to_threshold(t, [1.0, 1.0, 1.0]))


def test_fit_decay_rate_recovers_exponential():
    t = np.linspace(0, 5, 2001)
    e = 2.0 * np.exp(-3.7 * t) + 1e-9
    assert ex.fit_decay_rate(t, e) == pytest.approx(3.7, rel=1e-3)


def test_csv_round_trip(tmp_path):
    p = tmp_path / "a.csv"
    rows = np.array([[0.1, 1 / 3], [math.pi, -1e-300]])
    ex.write_csv(p, ["a", "b"], rows)
    header, data = ex.read_csv(p)
    assert header == ["a", "b"]
    assert np.array_equal(data, rows)
    assert b"\r" not in p.read_bytes()


def test_headers():
    assert ex.trajectory_header(2) == ["t", "x_1", "x_2", "y", "v_at_1", "v_L2"]
    assert ex.estimates_header(1) == ["t", "x_true_1", "x_hat_1", "err_x", "err_v_L2", "err_z_L2", "inversion_residual"]


def test_observation_short_run_outputs(tmp_path):
    cfg = ex.load_config(None, example="example1", t_final=0.5)
    res = ex.run_observation(cfg)
    assert len(res.times) == 51
    assert res.err_z[0] == pytest.approx(res.err_z_steps[0])
    paths = ex.write_estimates(res, tmp_path)
    header, data = ex.read_csv(paths["estimates"])
    assert header == ex.estimates_header(1)
    assert data.shape == (51, 7)
    for key in ("state_svg", "err_x_svg", "err_v_L2_svg", "err_z_L2_svg", "err_z"):
        assert (tmp_path / paths[key].split("/")[-1]).exists()


def test_observation_started_on_transform():
    cfg = ex.load_config(None, example="example1", t_final=0.3, z0_exact=True)
    res = ex.run_observation(cfg)
    assert res.err_z_steps[0] < 1e-15
    assert np.max(res.err_z_steps) < 5e-3


def test_observation_with_burn_in_strategy():
    # every objective evaluation reruns the burn-in, so keep the budget tiny
    cfg = ex.load_config(
        None, example="example1", t_final=0.01, t0_strategy="burn_in", burn_in_horizon=2.0, dt=2e-3,
        invert_every=5, n_starts=1, refine_iterations=10,
    )
    res = ex.run_observation(cfg)
    assert res.err_z_steps is None
    assert res.err_z.shape == res.times.shape == (2,)
    assert np.all(np.isfinite(res.err_x))


def test_plots_regenerate_from_csv(tmp_path):
    cfg = ex.load_config(None, example="example2", t_final=0.2)
    res = ex.run_observation(cfg)
    paths = ex.write_estimates(res, tmp_path / "a")
    first = {k: open(v, "rb").read() for k, v in paths.items() if k.endswith("_svg")}
    (tmp_path / "b").mkdir()
    again = ex.render_observation_plots(paths["estimates"], tmp_path / "b")
    for k, v in again.items():
        assert open(v, "rb").read() == first[k]


def test_trajectory_files_and_plots(tmp_path):
    traj = ex.run_simulation(ex.load_config(None, example="example2", t_final=0.1))
    paths = ex.write_trajectory(traj, tmp_path)
    header, data = ex.read_csv(paths["trajectory"])
    assert header == ex.trajectory_header(2)
    assert data.shape == (101, 6)
    assert np.allclose(data[:, 3], traj.outputs)
    before = open(paths["output_svg"], "rb").read()
    ex.render_simulation_plots(paths["trajectory"], paths["snapshots"], tmp_path)
    assert open(paths["output_svg"], "rb").read() == before


def test_sweep_single_gamma_matches_observe(tmp_path):
    cfg = ex.load_config(None, example="example1", t_final=0.4)
    summary = ex.run_sweep(cfg, [2.0], tmp_path)
    single = ex.run_observation(ex.load_config(None, example="example1", t_final=0.4, gamma=2.0))
    _, data = ex.read_csv(tmp_path / "gamma_2" / "estimates.csv")
    assert np.array_equal(data[:, 5], single.err_z)
    assert summary[0][0] == 2.0
    assert (tmp_path / "sweep.csv").exists() and (tmp_path / "sweep.svg").exists()


def test_sweep_rejects_bad_gamma(tmp_path):
    cfg = ex.load_config(None, example="example1", t_final=0.1)
    with pytest.raises(ConfigError):
        ex.run_sweep(cfg, [1.0, -1.0], tmp_path)
    with pytest.raises(ConfigError):
        ex.run_sweep(cfg, [], tmp_path)

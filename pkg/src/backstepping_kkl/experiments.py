"""Experiment configuration, runners and CSV/SVG export.

A configuration is a flat INI file (sections ``experiment``, ``kkl``,
``inversion``, ``model``); presets ``example1`` and ``example2`` fill in the
model and the settings of the two reference experiments.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import svg
from .cascade import CascadeParams, OdeModel, Trajectory, simulate_cascade
from .errors import ConfigError
from .grid import SpatialField, SpatialGrid, TimeGrid, l2_norm_values
from .kernel import build_kernel_table, build_transform
from .kkl import FIRST_EIGENVALUE, T0Strategy
from .models import model_from_expressions, oscillator_model, parameter_estimation_model
from .observer import InversionConfig, ModeBasis, ObserverRun, SteadyManifold, forward_map, run_observer

EXAMPLES = ("example1", "example2", "custom")
V0_PROFILES = {
    "cos_pi": lambda lam: np.cos(np.pi * lam),
    "cos_half_pi": lambda lam: np.cos(0.5 * np.pi * lam),
    "zero": lambda lam: np.zeros_like(lam),
}
T0_KINDS = ("auto", "analytic", "ansatz", "burn_in")
THRESHOLD = 1e-3

PRESETS = {
    "example1": dict(alpha=0.5, gamma=1.0, x0=(1.0,), x_box=((-3.0, 3.0),)),
    "example2": dict(alpha=0.0, gamma=3.0, x0=(0.1, 0.1), x_box=((-1.0, 1.0), (-1.0, 1.0))),
}


@dataclass(frozen=True)
class ExperimentConfig:
    example: str = "example1"
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    gamma0: float = 0.0
    x0: Optional[tuple] = None
    v0: str = "cos_pi"
    n_points: int = 101
    dt: float = 1e-3
    t_final: float = 5.0
    t0_strategy: str = "auto"
    burn_in_horizon: Optional[float] = None
    x_box: Optional[tuple] = None
    grid_points_per_dim: int = 11
    refine_iterations: int = 60
    ridge: float = 1e-8
    refine_method: str = "least_squares"
    n_starts: int = 5
    n_modes: int = 2
    basis: str = "decaying"
    steady_offset: bool = True
    invert_every: int = 10
    f: tuple = ()
    h: str = ""
    m: Optional[int] = None
    z0_exact: bool = False
    seed: int = 0

    def resolved(self) -> "ExperimentConfig":
        """Fill preset values and validate; raises ConfigError."""
        if self.example not in EXAMPLES:
            raise ConfigError(f"[experiment] example: unknown example {self.example!r} (choose from {', '.join(EXAMPLES)})")
        preset = PRESETS.get(self.example, {})
        updates = {k: v for k, v in preset.items() if getattr(self, k) is None}
        if self.example == "custom" and self.x_box is None:
            updates["x_box"] = tuple((-1.0, 1.0) for _ in self.f)
        cfg = dataclasses.replace(self, **updates)
        cfg._validate()
        return cfg

    @property
    def n(self) -> int:
        return {"example1": 1, "example2": 2}.get(self.example, len(self.f))

    def _validate(self) -> None:
        if self.example == "custom":
            if not self.f or not self.h:
                raise ConfigError("[model] f, h: a custom example needs both the vector field and the output")
            for key in ("alpha", "gamma"):
                if getattr(self, key) is None:
                    raise ConfigError(f"[experiment] {key}: required for a custom example")
            if self.x0 is None:
                raise ConfigError("[experiment] x0: required for a custom example")
        if not self.gamma > self.gamma0:
            raise ConfigError(f"[experiment] gamma: must exceed gamma0={self.gamma0:g}, got {self.gamma:g}")
        if not self.t_final > 0:
            raise ConfigError(f"[experiment] t_final: must be positive, got {self.t_final:g}")
        if not self.dt > 0:
            raise ConfigError(f"[experiment] dt: must be positive, got {self.dt:g}")
        if self.n_points < 3:
            raise ConfigError(f"[experiment] n_points: need at least 3 nodes, got {self.n_points}")
        if self.v0 not in V0_PROFILES:
            raise ConfigError(f"[experiment] v0: unknown profile {self.v0!r} (choose from {', '.join(V0_PROFILES)})")
        if len(self.x0) != self.n:
            raise ConfigError(f"[experiment] x0: expected {self.n} components, got {len(self.x0)}")
        if len(self.x_box) != self.n:
            raise ConfigError(f"[inversion] x_box: expected {self.n} intervals, got {len(self.x_box)}")
        for lo, hi in self.x_box:
            if not hi > lo:
                raise ConfigError(f"[inversion] x_box: empty interval [{lo:g}, {hi:g}]")
        if self.t0_strategy not in T0_KINDS:
            raise ConfigError(f"[kkl] t0_strategy: unknown strategy {self.t0_strategy!r}")
        if self.t0_strategy == "analytic" and self.example != "example1":
            raise ConfigError("[kkl] t0_strategy: the analytic construction only exists for example1")
        if self.t0_strategy == "ansatz" and self.example != "example2":
            raise ConfigError("[kkl] t0_strategy: the ansatz construction only exists for example2")
        if self.grid_points_per_dim < 3:
            raise ConfigError("[inversion] grid_points_per_dim: must be >= 3")
        if self.ridge < 0:
            raise ConfigError("[inversion] ridge: must be nonnegative")
        if self.refine_method not in InversionConfig.REFINE_METHODS:
            raise ConfigError(f"[inversion] refine_method: must be one of {', '.join(InversionConfig.REFINE_METHODS)}")
        if self.n_starts < 1:
            raise ConfigError("[inversion] n_starts: must be positive")
        if self.n_modes < 1:
            raise ConfigError("[inversion] n_modes: must be positive")
        if self.basis not in ModeBasis.KINDS:
            raise ConfigError(f"[inversion] basis: unknown kind {self.basis!r} (choose from {', '.join(ModeBasis.KINDS)})")
        if self.invert_every < 1:
            raise ConfigError("[inversion] invert_every: must be positive")
        if self.steady_offset and self.example == "custom" and self.alpha >= FIRST_EIGENVALUE:
            raise ConfigError("[inversion] steady_offset: needs alpha < pi^2/4 for a custom model; set it to false")
        if self.burn_in_horizon is not None and not self.burn_in_horizon > 0:
            raise ConfigError("[kkl] burn_in_horizon: must be positive")


# config file parsing

def _floats(text: str) -> tuple:
    return tuple(float(p) for p in text.replace(",", " ").split())


def _box(text: str) -> tuple:
    out = []
    for part in text.split(";"):
        vals = _floats(part)
        if len(vals) != 2:
            raise ValueError(f"interval {part.strip()!r} needs two numbers")
        out.append(vals)
    return tuple(out)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _exprs(text: str) -> tuple:
    return tuple(p.strip() for p in text.split(";") if p.strip())


# (section, key) -> (field name, parser)
CONFIG_KEYS = {
    ("experiment", "example"): ("example", str.strip),
    ("experiment", "alpha"): ("alpha", float),
    ("experiment", "gamma"): ("gamma", float),
    ("experiment", "gamma0"): ("gamma0", float),
    ("experiment", "x0"): ("x0", _floats),
    ("experiment", "v0"): ("v0", str.strip),
    ("experiment", "n_points"): ("n_points", int),
    ("experiment", "dt"): ("dt", float),
    ("experiment", "t_final"): ("t_final", float),
    ("experiment", "seed"): ("seed", int),
    ("kkl", "t0_strategy"): ("t0_strategy", str.strip),
    ("kkl", "burn_in_horizon"): ("burn_in_horizon", _optional_float),
    ("inversion", "x_box"): ("x_box", _box),
    ("inversion", "grid_points_per_dim"): ("grid_points_per_dim", int),
    ("inversion", "refine_iterations"): ("refine_iterations", int),
    ("inversion", "ridge"): ("ridge", float),
    ("inversion", "refine_method"): ("refine_method", str),
    ("inversion", "n_starts"): ("n_starts", int),
    ("inversion", "n_modes"): ("n_modes", int),
    ("inversion", "basis"): ("basis", str.strip),
    ("inversion", "steady_offset"): ("steady_offset", _bool),
    ("inversion", "invert_every"): ("invert_every", int),
    ("model", "f"): ("f", _exprs),
    ("model", "h"): ("h", str.strip),
    ("model", "m"): ("m", int),
}


def _line_of(lines, section: str, key: str) -> Optional[int]:
    current = None
    for i, raw in enumerate(lines, 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip().lower()
        elif current == section and s.split("=")[0].split(":")[0].strip().lower() == key:
            return i
    return None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Field overrides from INI text; errors carry ``source:line``."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lines = text.splitlines()
    out = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            where = f"{source}:{_line_of(lines, section.lower(), key) or '?'}"
            entry = CONFIG_KEYS.get((section.lower(), key))
            if entry is None:
                raise ConfigError(f"{where}: [{section}] {key}: unknown key")
            name, conv = entry
            try:
                out[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: [{section}] {key}: {exc}") from exc
    return out


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read an INI file (optional), apply non-None overrides, resolve presets."""
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        values.update(parse_config_text(text, str(path)))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values).resolved()


# builders

def build_model(cfg: ExperimentConfig) -> OdeModel:
    if cfg.example == "example1":
        return parameter_estimation_model()
    if cfg.example == "example2":
        return oscillator_model()
    try:
        return model_from_expressions(list(cfg.f), cfg.h, cfg.m)
    except Exception as exc:  # sympy raises a zoo of types
        raise ConfigError(f"[model] f, h: cannot parse expressions ({exc})") from exc


def build_params(cfg: ExperimentConfig) -> CascadeParams:
    return CascadeParams(cfg.alpha, cfg.gamma, cfg.gamma0)


def build_t0(cfg: ExperimentConfig, model: OdeModel, grid: SpatialGrid) -> T0Strategy:
    kind = cfg.t0_strategy
    if kind == "auto":
        kind = {"example1": "analytic", "example2": "ansatz"}.get(cfg.example, "burn_in")
    if kind == "analytic":
        return T0Strategy.analytic_example1(cfg.gamma, grid)
    if kind == "ansatz":
        return T0Strategy.ansatz_example2(cfg.gamma, grid)
    return T0Strategy.burn_in(model, cfg.gamma, grid, cfg.burn_in_horizon, dt=cfg.dt)


def build_basis(cfg: ExperimentConfig, model: OdeModel, grid: SpatialGrid) -> ModeBasis:
    offset = None
    if cfg.steady_offset:
        offset = SteadyManifold.for_params(cfg.example, build_params(cfg), grid, model)
    return ModeBasis(grid, cfg.n_modes, cfg.basis, offset)


def build_inversion_config(cfg: ExperimentConfig) -> InversionConfig:
    return InversionConfig(cfg.x_box, cfg.grid_points_per_dim, cfg.refine_iterations, cfg.ridge, cfg.refine_method, cfg.n_starts)


def initial_profile(cfg: ExperimentConfig, grid: SpatialGrid) -> SpatialField:
    return grid.sample(V0_PROFILES[cfg.v0])


# runners

def run_simulation(cfg: ExperimentConfig) -> Trajectory:
    model = build_model(cfg)
    grid = SpatialGrid(cfg.n_points)
    tgrid = TimeGrid.until(cfg.t_final, cfg.dt)
    return simulate_cascade(model, build_params(cfg), cfg.x0, initial_profile(cfg, grid), tgrid)


@dataclass
class ObservationResult:
    config: ExperimentConfig
    trajectory: Trajectory
    run: ObserverRun
    err_x: np.ndarray
    err_v: np.ndarray
    err_z: np.ndarray  # at the inversion instants
    err_z_steps: Optional[np.ndarray] = field(default=None)  # every time step when T0 is cheap

    @property
    def times(self) -> np.ndarray:
        return self.run.times[self.run.output_index]


def run_observation(cfg: ExperimentConfig) -> ObservationResult:
    model = build_model(cfg)
    params = build_params(cfg)
    grid = SpatialGrid(cfg.n_points)
    tgrid = TimeGrid.until(cfg.t_final, cfg.dt)
    v0 = initial_profile(cfg, grid)
    traj = simulate_cascade(model, params, cfg.x0, v0, tgrid)
    tm = build_transform(build_kernel_table(params, grid))
    t0 = build_t0(cfg, model, grid)
    basis = build_basis(cfg, model, grid)
    z0 = forward_map(cfg.x0, v0, t0, tm) if cfg.z0_exact else grid.zeros()
    run = run_observer(
        model, params, t0, tm, basis, build_inversion_config(cfg), traj.outputs, z0, tgrid, cfg.invert_every
    )
    idx = run.output_index

    def target_error(rows):
        T = t0.values_many(traj.x[rows]) + traj.v[rows] @ tm.forward.T
        return l2_norm_values(run.z[rows] - T, grid)

    err_x = np.linalg.norm(run.x_hat - traj.x[idx], axis=1)
    err_v = l2_norm_values(run.v_hat - traj.v[idx], grid)
    err_z_steps = target_error(np.arange(len(tgrid.times))) if t0.kind != "burn_in" else None
    err_z = err_z_steps[idx] if err_z_steps is not None else target_error(idx)
    return ObservationResult(cfg, traj, run, err_x, err_v, err_z, err_z_steps)


def time_to_threshold(times, errors, threshold: float = THRESHOLD) -> float:
    """First time ``errors`` drops to ``threshold``, log-interpolated between
    samples; 0 if it starts below, inf if it never gets there."""
    e = np.asarray(errors, dtype=float)
    t = np.asarray(times, dtype=float)
    below = np.nonzero(e <= threshold)[0]
    if below.size == 0:
        return math.inf
    k = int(below[0])
    if k == 0:
        return float(t[0])
    e0, e1 = e[k - 1], e[k]
    if e1 <= 0:
        return float(t[k])
    frac = (math.log(e0) - math.log(threshold)) / (math.log(e0) - math.log(e1))
    return float(t[k - 1] + frac * (t[k] - t[k - 1]))


def fit_decay_rate(times, errors, floor_factor: float = 100.0, skip: float = 0.05) -> float:
    """Least-squares slope of ``-log(err)`` over the transient.

    The window starts at ``skip`` (past the initial boundary layer) and ends
    when the error comes within ``floor_factor`` of the plateau, estimated as
    the median over the last fifth of the run.
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(errors, dtype=float)
    floor = float(np.median(e[int(0.8 * len(e)) :]))
    above = e > floor_factor * floor
    end = int(np.argmin(above)) if not above.all() else len(e)
    sel = (t >= t[0] + skip) & (np.arange(len(e)) < end) & (e > 0)
    if sel.sum() < 3:
        raise ValueError("transient window too short to fit a rate")
    slope = np.polyfit(t[sel], np.log(e[sel]), 1)[0]
    return float(-slope)


# CSV

def _fmt(v) -> str:
    return f"{float(v):.17g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    """Header and float matrix of a CSV written by :func:`write_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r], dtype=float)
    return header, data.reshape(-1, len(header))


def trajectory_header(n: int) -> list:
    return ["t"] + [f"x_{i + 1}" for i in range(n)] + ["y", "v_at_1", "v_L2"]


def estimates_header(n: int) -> list:
    return (
        ["t"]
        + [f"x_true_{i + 1}" for i in range(n)]
        + [f"x_hat_{i + 1}" for i in range(n)]
        + ["err_x", "err_v_L2", "err_z_L2", "inversion_residual"]
    )


def write_trajectory(traj: Trajectory, out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    n = traj.x.shape[1]
    norms = l2_norm_values(traj.v, traj.grid)
    rows = np.column_stack([traj.times, traj.x, traj.v[:, 0], traj.v[:, -1], norms])
    paths = {"trajectory": os.path.join(out_dir, "trajectory.csv"), "snapshots": os.path.join(out_dir, "v_snapshots.csv")}
    write_csv(paths["trajectory"], trajectory_header(n), rows)
    picks = snapshot_indices(len(traj.times))
    header = ["lambda"] + [f"v_t={traj.times[k]:.6g}" for k in picks]
    write_csv(paths["snapshots"], header, np.column_stack([traj.grid.nodes] + [traj.v[k] for k in picks]))
    paths.update(render_simulation_plots(paths["trajectory"], paths["snapshots"], out_dir))
    return paths


def snapshot_indices(n_times: int, count: int = 6) -> list:
    return sorted(set(np.linspace(0, n_times - 1, count).round().astype(int).tolist()))


def render_simulation_plots(trajectory_csv, snapshots_csv, out_dir) -> dict:
    _, data = read_csv(trajectory_csv)
    header, snaps = read_csv(snapshots_csv)
    p_y = os.path.join(out_dir, "output.svg")
    svg.line_plot(p_y, [("y = v(t,0)", data[:, 0], data[:, -3])], "Measured output", "t", "y")
    p_v = os.path.join(out_dir, "v_snapshots.svg")
    svg.line_plot(p_v, [(header[j], snaps[:, 0], snaps[:, j]) for j in range(1, len(header))], "PDE state", "lambda", "v")
    return {"output_svg": p_y, "snapshots_svg": p_v}


def write_estimates(res: ObservationResult, out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    idx = res.run.output_index
    n = res.trajectory.x.shape[1]
    rows = np.column_stack(
        [res.times, res.trajectory.x[idx], res.run.x_hat, res.err_x, res.err_v, res.err_z, res.run.residual]
    )
    path = os.path.join(out_dir, "estimates.csv")
    write_csv(path, estimates_header(n), rows)
    paths = {"estimates": path}
    if res.err_z_steps is not None:
        p = os.path.join(out_dir, "err_z.csv")
        write_csv(p, ["t", "err_z_L2"], np.column_stack([res.run.times, res.err_z_steps]))
        paths["err_z"] = p
    paths.update(render_observation_plots(path, out_dir))
    return paths


def render_observation_plots(estimates_csv, out_dir) -> dict:
    """Figures of an observer run, regenerated from its CSV alone."""
    header, d = read_csv(estimates_csv)
    n = (len(header) - 5) // 2
    t = d[:, 0]
    paths = {}
    series = []
    for i in range(n):
        series.append((f"x_{i + 1}", t, d[:, 1 + i]))
        series.append((f"x_hat_{i + 1}", t, d[:, 1 + n + i]))
    paths["state_svg"] = os.path.join(out_dir, "state.svg")
    svg.line_plot(paths["state_svg"], series, "ODE state and estimate", "t", "x")
    col = {name: j for j, name in enumerate(header)}
    for key, title in (("err_x", "|x_hat - x|"), ("err_v_L2", "||v_hat - v|| (L2)"), ("err_z_L2", "||z_hat - T(x, v)|| (L2)")):
        p = os.path.join(out_dir, f"{key}.svg")
        svg.line_plot(p, [(key, t, d[:, col[key]])], title, "t", key, logy=True)
        paths[f"{key}_svg"] = p
    return paths


# sweep

def _observe_job(args):
    cfg, out_dir = args
    res = run_observation(cfg)
    write_estimates(res, out_dir)
    if res.err_z_steps is not None:
        t, e = res.run.times, res.err_z_steps
    else:
        t, e = res.times, res.err_z
    return cfg.gamma, t, e


def gamma_dir(out_dir, gamma: float) -> str:
    return os.path.join(out_dir, f"gamma_{gamma:g}")


def run_sweep(cfg: ExperimentConfig, gammas, out_dir, jobs: int = 1) -> list:
    """Observer runs per gamma, each in its own subdirectory.

    Returns ``[(gamma, time_to_threshold)]`` in the order given.
    """
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ConfigError("sweep: empty gamma list")
    for g in gammas:
        if not g > cfg.gamma0:
            raise ConfigError(f"sweep: gamma={g:g} must exceed gamma0={cfg.gamma0:g}")
    configs = [dataclasses.replace(cfg, gamma=g).resolved() for g in gammas]
    tasks = [(c, gamma_dir(out_dir, c.gamma)) for c in configs]
    os.makedirs(out_dir, exist_ok=True)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_observe_job, tasks))
    else:
        results = [_observe_job(t) for t in tasks]
    summary = [(g, time_to_threshold(t, e)) for g, t, e in results]
    write_csv(os.path.join(out_dir, "sweep.csv"), ["gamma", "time_to_threshold"], summary)
    svg.line_plot(
        os.path.join(out_dir, "sweep.svg"),
        [(f"gamma={g:g}", t, e) for g, t, e in results],
        "||z_hat - T(x, v)|| for several gamma",
        "t",
        "err_z_L2",
        logy=True,
    )
    return summary

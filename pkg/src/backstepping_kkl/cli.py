"""Command-line front end: ``bkkl simulate | observe | sweep-gamma | verify``.

Exit codes: 0 success, 1 failed verification, 2 configuration error,
3 numerical blow-up.
"""
from __future__ import annotations

import argparse
import math
import sys

from . import experiments as ex
from .errors import ConfigError, NonFiniteState
from .verification import SUITES, run_suite

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return ex._floats(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _box(text):
    try:
        return ex._box(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_experiment_args(p):
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--example", choices=ex.EXAMPLES)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--gamma0", type=float)
    p.add_argument("--x0", type=_floats, help='initial ODE state, e.g. "0.1,0.1"')
    p.add_argument("--v0", choices=sorted(ex.V0_PROFILES))
    p.add_argument("--n-points", type=int, dest="n_points")
    p.add_argument("--dt", type=float)
    p.add_argument("--t-final", type=float, dest="t_final")
    p.add_argument("--t0-strategy", choices=ex.T0_KINDS, dest="t0_strategy")
    p.add_argument("--burn-in-horizon", type=float, dest="burn_in_horizon")
    p.add_argument("--x-box", type=_box, dest="x_box", help='search box, e.g. "-1 1; -1 1"')
    p.add_argument("--n-modes", type=int, dest="n_modes")
    p.add_argument("--basis")
    p.add_argument("--no-steady-offset", action="store_const", const=False, dest="steady_offset")
    p.add_argument("--invert-every", type=int, dest="invert_every")
    p.add_argument("--f", type=lambda s: ex._exprs(s), help='custom vector field, e.g. "x2; -x1"')
    p.add_argument("--h", help="custom output expression")
    p.add_argument("--seed", type=int)


OVERRIDES = (
    "example alpha gamma gamma0 x0 v0 n_points dt t_final t0_strategy burn_in_horizon x_box "
    "n_modes basis steady_offset invert_every f h seed"
).split()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bkkl", description="Backstepping-KKL observer experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sim = sub.add_parser("simulate", help="simulate the cascade and export the trajectory")
    _add_experiment_args(sim)
    obs = sub.add_parser("observe", help="run the observer and export the estimates")
    _add_experiment_args(obs)
    obs.add_argument("--z0-exact", action="store_true", dest="z0_exact", help="start the target system at T(x0, v0)")
    sw = sub.add_parser("sweep-gamma", help="observer runs over several gamma values")
    _add_experiment_args(sw)
    sw.add_argument("--gammas", type=_floats, default=(0.5, 3.0, 10.0), help='e.g. "0.5,3,10"')
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--z0-exact", action="store_true", dest="z0_exact")
    ver = sub.add_parser("verify", help="run a property suite")
    ver.add_argument("suite", help="one of: " + ", ".join(SUITES + ("all",)))
    ver.add_argument("--seed", type=int, default=0)
    return parser


def _config(args) -> ex.ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in OVERRIDES}
    if getattr(args, "z0_exact", False):
        overrides["z0_exact"] = True
    return ex.load_config(args.config, **overrides)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    traj = ex.run_simulation(cfg)
    paths = ex.write_trajectory(traj, args.out)
    print(f"wrote {paths['trajectory']}")
    return EXIT_OK


def cmd_observe(args) -> int:
    cfg = _config(args)
    res = ex.run_observation(cfg)
    paths = ex.write_estimates(res, args.out)
    print(f"final err_x={res.err_x[-1]:.3e} err_v_L2={res.err_v[-1]:.3e} err_z_L2={res.err_z[-1]:.3e}")
    print(f"wrote {paths['estimates']}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    summary = ex.run_sweep(cfg, args.gammas, args.out, jobs=args.jobs)
    for g, t in summary:
        shown = "never" if math.isinf(t) else f"{t:.4f}"
        print(f"gamma={g:g} time_to_{ex.THRESHOLD:g}={shown}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.suite not in SUITES + ("all",):
        print(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES + ('all',))}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"seed={args.seed}")
    checks = run_suite(args.suite, args.seed)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


COMMANDS = {"simulate": cmd_simulate, "observe": cmd_observe, "sweep-gamma": cmd_sweep, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteState as exc:
        print(f"numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())

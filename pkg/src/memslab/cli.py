"""Command-line entry point: flat-text configs, subcommands, artifact layout.

Config files are flat ``key = value`` text (``#`` comments allowed).  Keys are
the grid and simulation field names plus ``seed``, ``out_dir``,
``snapshot_every`` and ``corpus``; the voltage parameter is spelled
``lambda``.  Unknown keys are rejected with a line-numbered diagnostic, and
every resolved parameter is echoed to ``<out_dir>/config.resolved``.

Subcommands and their artifacts (all floats printed with 17 significant
digits so reruns are byte-identical):

  run        run.csv, summary.json, snapshots/step_<n>.csv
  verify     identities.json (exit 1 on any failed check)
  potential  potential.csv, traces.csv, energy.json (input: deflection CSV)
  semigroup  smoothing.csv, smoothing.json
  continue   branch.csv, lambda_star.json
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, identities, semigroup, stationary
from .grid import FLOAT_FMT, GridSpec, write_cylinder_snapshot, write_snapshot, read_snapshot
from .potential import DeflectionState, solve_traces, forcing_l1

GRID_KEYS = ("dim_D", "nx", "ny", "n_eta")
SIM_KEYS = ("beta", "tau", "a", "lambda", "epsilon", "dt0", "T0",
            "kappa_stop", "h2_cap", "dt_min", "u0")
META_KEYS = ("seed", "out_dir", "snapshot_every", "corpus")

_INT_KEYS = {"dim_D", "nx", "ny", "n_eta", "seed", "snapshot_every"}
_STR_KEYS = {"u0", "out_dir", "corpus"}


class ConfigError(ValueError):
    """Malformed configuration; message carries the offending line."""


@dataclass
class LabConfig:
    sim: dynamics.SimConfig = field(default_factory=dynamics.SimConfig)
    seed: int = 1234
    out_dir: str = "out"
    snapshot_every: int = 0
    corpus: str = "default"


def _coerce(key: str, raw: str, lineno: int):
    raw = raw.strip()
    if key in _STR_KEYS:
        return raw
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key == "h2_cap" and raw.lower() in ("none", ""):
            return None
        return float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot parse value {raw!r} for key {key!r}")


def parse_config(path=None) -> LabConfig:
    """Parse a flat key = value config file; None or empty file means defaults."""
    values = {}
    if path is not None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
                key, _, raw = stripped.partition("=")
                key = key.strip()
                if key not in GRID_KEYS + SIM_KEYS + META_KEYS:
                    raise ConfigError(f"line {lineno}: unknown key {key!r}")
                if key in values:
                    raise ConfigError(f"line {lineno}: duplicate key {key!r}")
                values[key] = _coerce(key, raw, lineno)

    grid_kwargs = {k: values[k] for k in GRID_KEYS if k in values}
    try:
        grid = GridSpec(**grid_kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc

    sim_kwargs = {"grid": grid}
    for k in SIM_KEYS:
        if k in values:
            sim_kwargs["lam" if k == "lambda" else k] = values[k]
    try:
        sim = dynamics.SimConfig(**sim_kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid parameters: {exc}") from exc

    cfg = LabConfig(sim=sim)
    for k in META_KEYS:
        if k in values:
            setattr(cfg, k, values[k])
    if cfg.corpus not in ("default", "quick"):
        raise ConfigError(f"corpus must be 'default' or 'quick', got {cfg.corpus!r}")
    return cfg


def _fmt_value(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return FLOAT_FMT % v
    return str(v)


def write_resolved(cfg: LabConfig, out_dir: str):
    """Echo every resolved parameter, in canonical key order."""
    g, s = cfg.sim.grid, cfg.sim
    ordered = [
        ("dim_D", g.dim_D), ("nx", g.nx), ("ny", g.ny), ("n_eta", g.n_eta),
        ("beta", s.beta), ("tau", s.tau), ("a", s.a), ("lambda", s.lam),
        ("epsilon", s.epsilon), ("dt0", s.dt0), ("T0", s.T0),
        ("kappa_stop", s.kappa_stop), ("h2_cap", s.h2_cap), ("dt_min", s.dt_min),
        ("u0", s.u0), ("seed", cfg.seed), ("out_dir", cfg.out_dir),
        ("snapshot_every", cfg.snapshot_every), ("corpus", cfg.corpus),
    ]
    with open(os.path.join(out_dir, "config.resolved"), "w") as fh:
        for k, v in ordered:
            fh.write(f"{k} = {_fmt_value(v)}\n")


def _json_dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out(cfg: LabConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_resolved(cfg, cfg.out_dir)
    return cfg.out_dir


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def cmd_run(cfg: LabConfig, args) -> int:
    out = _prepare_out(cfg)
    snap_dir = os.path.join(out, "snapshots")
    snapshot_every = args.snapshot_every if args.snapshot_every is not None else cfg.snapshot_every

    cb = None
    if snapshot_every > 0:
        os.makedirs(snap_dir, exist_ok=True)

        def cb(step, fld):
            write_snapshot(os.path.join(snap_dir, f"step_{step}.csv"), fld)

    record = dynamics.run(cfg.sim, snapshot_every=snapshot_every, snapshot_cb=cb)
    record.write_csv(os.path.join(out, "run.csv"))
    _json_dump(record.summary(), os.path.join(out, "summary.json"))
    print(f"run: {record.terminal} after {record.n_steps} steps "
          f"(t={FLOAT_FMT % record.columns['t'][-1]})")
    return 0


def cmd_verify(cfg: LabConfig, args) -> int:
    out = _prepare_out(cfg)
    reports = identities.run_suite(
        cfg.sim.grid, cfg.sim.epsilon, beta=cfg.sim.beta, tau=cfg.sim.tau,
        a=cfg.sim.a, lam=cfg.sim.lam, seed=cfg.seed, corpus_name=cfg.corpus,
    )
    _json_dump([r.to_dict() for r in reports], os.path.join(out, "identities.json"))
    n_fail = sum(not r.passed for r in reports)
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: residual/scale = "
              f"{r.residual / r.scale:.3e} (tol {r.tol:.3e})")
    print(f"verify: {len(reports) - n_fail}/{len(reports)} checks passed")
    return 1 if n_fail else 0


def cmd_potential(cfg: LabConfig, args) -> int:
    out = _prepare_out(cfg)
    fld = read_snapshot(args.deflection, n_eta=cfg.sim.grid.n_eta)
    v = DeflectionState(fld, zero_boundary=False)
    pf, traces, Ee = solve_traces(v, cfg.sim.epsilon)
    write_cylinder_snapshot(os.path.join(out, "potential.csv"), pf.phi)
    g = fld.grid
    with open(os.path.join(out, "traces.csv"), "w") as fh:
        if g.dim_D == 1:
            fh.write("x,gamma,gamma_b,g\n")
            for i, x in enumerate(g.xs):
                fh.write(",".join(FLOAT_FMT % t for t in (
                    x, traces.gamma.values[i], traces.gamma_b.values[i],
                    traces.g.values[i])) + "\n")
        else:
            fh.write("x,y,gamma,gamma_b,g\n")
            X, Y = g.meshgrid()
            for i in range(g.nx + 2):
                for j in range(g.ny + 2):
                    fh.write(",".join(FLOAT_FMT % t for t in (
                        X[i, j], Y[i, j], traces.gamma.values[i, j],
                        traces.gamma_b.values[i, j], traces.g.values[i, j])) + "\n")
    _json_dump(
        {"E_e": Ee, "g_l1": forcing_l1(traces), "epsilon": cfg.sim.epsilon,
         "kappa": v.kappa, "min_gap": v.min_gap},
        os.path.join(out, "energy.json"),
    )
    print(f"potential: E_e = {FLOAT_FMT % Ee}")
    return 0


def cmd_semigroup(cfg: LabConfig, args) -> int:
    if args.beta is not None or args.tau is not None or args.nx is not None:
        from dataclasses import replace

        grid = cfg.sim.grid if args.nx is None else replace(
            cfg.sim.grid, nx=args.nx, ny=args.nx)
        cfg.sim = replace(
            cfg.sim, grid=grid,
            beta=cfg.sim.beta if args.beta is None else args.beta,
            tau=cfg.sim.tau if args.tau is None else args.tau,
        )
    out = _prepare_out(cfg)
    handle = semigroup.make_operator(cfg.sim.grid, cfg.sim.beta, cfg.sim.tau)
    t_range = None
    if args.t_lo is not None and args.t_hi is not None:
        t_range = (args.t_lo, args.t_hi)
    fit = semigroup.smoothing_rate_fit(
        handle, target_norm=args.target_norm, t_range=t_range, n_times=args.n_times
    )
    with open(os.path.join(out, "smoothing.csv"), "w") as fh:
        fh.write("t,norm\n")
        for t, nval in zip(fit.times, fit.norms):
            fh.write(f"{FLOAT_FMT % t},{FLOAT_FMT % nval}\n")
    _json_dump(fit.to_dict(), os.path.join(out, "smoothing.json"))
    print(f"semigroup: theta_fit = {fit.theta:.6f} +- {fit.theta_stderr:.6f}")
    return 0


def cmd_continue(cfg: LabConfig, args) -> int:
    out = _prepare_out(cfg)
    result = stationary.continue_branch(args.lambda_start, args.dlambda, cfg.sim)
    with open(os.path.join(out, "branch.csv"), "w") as fh:
        fh.write("lambda,sup_defl,min_gap,iters\n")
        for p in result.points:
            fh.write(f"{FLOAT_FMT % p.lam},{FLOAT_FMT % p.sup_defl},"
                     f"{FLOAT_FMT % p.min_gap},{p.newton_iters}\n")
    _json_dump(
        {"lambda_ok": result.lambda_ok, "lambda_fail": result.lambda_fail,
         "bracket_mid": result.bracket_mid,
         "bracket_width": result.lambda_fail - result.lambda_ok,
         "n_points": len(result.points)},
        os.path.join(out, "lambda_star.json"),
    )
    print(f"continue: {len(result.points)} points, fold bracket "
          f"[{FLOAT_FMT % result.lambda_ok}, {FLOAT_FMT % result.lambda_fail}]")
    return 0


# ---------------------------------------------------------------------------
# argument parsing / dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memslab",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "config defaults: dim_D=2 nx=32 ny=32 n_eta=17 beta=1 tau=0 a=0 "
            "lambda=1 epsilon=0.3 dt0=0.01 T0=1 kappa_stop=0.05 h2_cap=none "
            "dt_min=1e-10 u0=zero seed=1234 out_dir=out snapshot_every=0 "
            "corpus=default"
        ),
    )
    sub = parser.add_subparsers(dest="command")

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--out-dir", default=None, help="override out_dir from the config")
        p.set_defaults(fn=fn)
        return p

    p_run = add("run", cmd_run, "evolve the plate and record monitors")
    p_run.add_argument("--snapshot-every", type=int, default=None,
                       help="write a deflection snapshot every N accepted steps")

    add("verify", cmd_verify, "run the identity/inequality suite over the corpus")

    p_pot = add("potential", cmd_potential, "solve the potential for a deflection snapshot")
    p_pot.add_argument("deflection", help="deflection snapshot CSV")

    p_sg = add("semigroup", cmd_semigroup, "fit smoothing rates of the clamped semigroup")
    p_sg.add_argument("--beta", type=float, default=None, help="override beta")
    p_sg.add_argument("--tau", type=float, default=None, help="override tau")
    p_sg.add_argument("--nx", type=int, default=None, help="override nx (and ny)")
    p_sg.add_argument("--target-norm", choices=("L2", "H2proxy"), default="L2")
    p_sg.add_argument("--t-lo", type=float, default=None)
    p_sg.add_argument("--t-hi", type=float, default=None)
    p_sg.add_argument("--n-times", type=int, default=9)

    p_ct = add("continue", cmd_continue, "continue the stationary branch to the fold")
    p_ct.add_argument("--lambda-start", type=float, default=0.4)
    p_ct.add_argument("--dlambda", type=float, default=0.4)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        cfg = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    np.random.seed(cfg.seed % 2**32)      # library-level determinism safety net
    try:
        return args.fn(cfg, args)
    except Exception as exc:  # failed check or solver failure -> exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()

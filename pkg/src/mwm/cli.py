"""Command-line interface: ``mwm <subcommand> [options]``.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 infeasible.
Structured results are JSON, tabular data CSV.  Every numeric output carries
the seed and tolerance used to produce it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mwm import __version__, kernels
from mwm.errors import ConfigError, InfeasibleError, MWMError, NumericalError
from mwm.heuristic import SolutionReport, SolverOptions, diagnose, format_table, optimize
from mwm.machine import (
    MachineConfig,
    Setpoints,
    combination_distribution,
    enumerate_combinations,
    integral_count,
    write_combinations_csv,
)
from mwm.order_stats import lb_min_expectation, max_moments, min_moments
from mwm.simulator import density_table, replicate, run_simulation

# f values used for the published runs; other sizes need an explicit --f
DEFAULT_F = {4: 0.6, 5: 0.5}
TABLE5_F = 0.3

TABLE2_SETUPS = {
    "H=4": (MachineConfig(4, max_shut=2), (294.9, 276.7, 183.7, 66.6)),
    "H=5": (MachineConfig(5, max_shut=2), (203.7, 178.6, 110.9, 191.0, 55.7)),
}
TABLE4_CASES = ((4, 2), (4, 3), (5, 2))
TABLE5_CASES = ((6, 2), (7, 2), (8, 2), (6, 3), (9, 2), (7, 3), (12, 2), (8, 3), (9, 3), (12, 3))


@dataclass
class ExperimentSpec:
    config: MachineConfig
    solver: SolverOptions = field(default_factory=SolverOptions)
    sim_cycles: int = 50_000
    sim_reps: int = 1
    output_dir: Path | None = None
    formats: tuple = ("json",)

    def __post_init__(self):
        if self.sim_cycles < 1000:
            raise ConfigError("sim_cycles must be at least 1000 for an MSE estimate")
        if self.sim_reps < 1:
            raise ConfigError("sim_reps must be positive")
        bad = set(self.formats) - {"json", "csv"}
        if bad:
            raise ConfigError(f"unknown output formats: {sorted(bad)}")
        if self.output_dir is not None:
            self.output_dir = Path(self.output_dir)
            try:
                self.output_dir.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise ConfigError(f"cannot create output directory: {exc}") from exc
            if not os.access(self.output_dir, os.W_OK):
                raise ConfigError(f"output directory {self.output_dir} is not writable")


def _meta(args, **extra):
    d = {"seed": args.seed, "version": __version__, "backend": kernels.BACKEND_NAME}
    if getattr(args, "tol", None) is not None:
        d["integration_tol"] = args.tol
    d.update(extra)
    return d


def _emit(args, name, payload):
    text = json.dumps(payload, indent=2, default=float)
    if args.out:
        path = Path(args.out) / f"{name}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
        print(f"wrote {path}", file=sys.stderr)
    print(text)


def _write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _floats(text):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"cannot parse numbers from {text!r}") from exc


def _load_config(args, need_f=False):
    overrides = {}
    for key, attr in (("H", "hoppers"), ("T", "target"), ("alpha", "alpha"),
                      ("max_shut", "max_shut"), ("epsilon", "epsilon"), ("f", "f")):
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "exclude_all_open", False):
        overrides["exclude_all_open"] = True
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    merged = {**data, **overrides}
    if "H" not in merged:
        raise ConfigError("hopper count missing: pass --hoppers or a config with 'H'")
    if need_f and "f" not in merged:
        H = int(merged["H"])
        if H not in DEFAULT_F:
            raise ConfigError(
                f"--f is required for H={H}; larger machines need increasingly smaller f"
            )
        merged["f"] = DEFAULT_F[H]
    return MachineConfig.from_json_dict(merged)


def _solver(args):
    return SolverOptions(
        n_starts=args.starts,
        bound_mode=args.mode,
        max_inner_evals=args.inner_evals,
        penalty_growth=args.penalty_growth,
        constraint_tol=args.constraint_tol,
        rng_seed=args.seed,
        integration_tol=args.tol,
        threads=args.threads,
    )


def _setup_moments(args):
    """Theta and Sigma from ``--mu`` (with a config) or a JSON file."""
    if args.theta_sigma:
        try:
            d = json.loads(Path(args.theta_sigma).read_text())
            return np.asarray(d["theta"], dtype=float), np.asarray(d["sigma"], dtype=float)
        except (OSError, KeyError, json.JSONDecodeError, ValueError) as exc:
            raise ConfigError(f"cannot read theta/sigma from {args.theta_sigma}: {exc}") from exc
    if not args.mu:
        raise ConfigError("give --mu (with a machine config) or --theta-sigma FILE")
    config = _load_config(args)
    mu = Setpoints(_floats(args.mu))
    return combination_distribution(enumerate_combinations(config), mu.as_array(), config.alpha)


def cmd_enumerate(args):
    config = _load_config(args)
    P = enumerate_combinations(config)
    if args.out:
        path = Path(args.out) / "combinations.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_combinations_csv(P, path)
        print(f"wrote {path}", file=sys.stderr)
    print(f"K={P.shape[0]}")
    return 0


def cmd_moments(args):
    theta, sigma = _setup_moments(args)
    lo = min_moments(theta, sigma, tol=args.tol, seed=args.seed)
    hi = max_moments(theta, sigma, tol=args.tol, seed=args.seed)
    m = lo.merge(hi)
    _emit(args, "moments", {**m.to_dict(), "extreme_avg": m.extreme_avg, "K": int(theta.shape[0]),
                            "meta": _meta(args)})
    return 0


def cmd_bound(args):
    theta, sigma = _setup_moments(args)
    lb = lb_min_expectation(theta, np.diag(sigma))
    _emit(args, "bound", {"lb_e_min": lb, "max_theta": float(theta.max()),
                          "lb_extreme_avg": 0.5 * (lb + float(theta.max())),
                          "K": int(theta.shape[0]), "meta": _meta(args)})
    return 0


def _simulate_payload(mu, config, args):
    if args.reps > 1:
        results, mean, sd = replicate(mu, config, n_cycles=args.cycles, reps=args.reps,
                                      seed=args.seed, refill=args.refill, threads=args.threads)
        return {"mse_mean": mean, "mse_sd": sd, "replications": [r.to_dict() for r in results]}
    return run_simulation(mu, config, n_cycles=args.cycles, seed=args.seed, refill=args.refill).to_dict()


def cmd_optimize(args):
    config = _load_config(args, need_f=True)
    spec = ExperimentSpec(config, _solver(args), sim_cycles=args.cycles, sim_reps=args.reps,
                          output_dir=args.out)
    report = optimize(config, options=spec.solver)
    payload = {**report.to_dict(), "meta": _meta(args)}
    if args.simulate:
        payload["simulation"] = _simulate_payload(report.mu_star.as_array(), config, args)
    _emit(args, "solution", payload)
    return 0


def cmd_simulate(args):
    if args.report:
        try:
            d = json.loads(Path(args.report).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read report {args.report}: {exc}") from exc
        report = SolutionReport.from_dict(d)
        config = report.config
        mu = report.mu_star.as_array()
    else:
        if not args.mu:
            raise ConfigError("give --mu or --report")
        config = _load_config(args)
        mu = Setpoints(_floats(args.mu)).as_array()
    ExperimentSpec(config, sim_cycles=args.cycles, sim_reps=args.reps, output_dir=args.out)
    _emit(args, "simulation", {**_simulate_payload(mu, config, args), "mu": list(mu),
                               "meta": _meta(args, cycles=args.cycles, reps=args.reps)})
    return 0


def cmd_densities(args):
    theta, sigma = _setup_moments(args)
    header, table = density_table(theta, sigma, n_points=args.points, tol=args.tol, seed=args.seed)
    if args.out:
        path = Path(args.out) / "densities.csv"
        _write_csv(path, header, table.tolist())
        print(f"wrote {path}", file=sys.stderr)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(table.tolist())
    return 0


def _table_columns(setups, args, mode="exact"):
    cols = {}
    for name, (config, mu) in setups.items():
        diag = diagnose(mu, config, bound_mode=mode, tol=args.tol, seed=args.seed)
        sim = run_simulation(mu, config, n_cycles=args.cycles, seed=args.seed)
        cols[name] = (mu, diag, sim)
    return cols


def _dump_columns(args, name, cols, extra=None):
    out = {}
    for h, (mu, diag, sim) in cols.items():
        out[h] = {"mu": list(mu), "diagnostics": diag.to_dict(), "simulation": sim.to_dict()}
        if extra:
            out[h].update(extra.get(h, {}))
    if args.out:
        path = Path(args.out) / f"{name}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"columns": out, "meta": _meta(args, cycles=args.cycles)},
                                   indent=2, default=float) + "\n")
        print(f"wrote {path}", file=sys.stderr)


def _optimized(config, args, mode):
    opts = SolverOptions(n_starts=args.starts, bound_mode=mode, rng_seed=args.seed,
                         integration_tol=args.tol, threads=args.threads)
    return optimize(config, options=opts)


def cmd_table(args):
    name = args.name
    if name == "table1":
        rows = []
        for H in range(1, args.max_h + 1):
            n, K = integral_count(H)
            rows.append((H, n, K))
        print("H | integrals | K")
        for r in rows:
            print(" | ".join(str(v) for v in r))
        if args.out:
            _write_csv(Path(args.out) / "table1.csv", ["H", "integrals", "K"], rows)
        return 0
    if name == "table2":
        cols = _table_columns(TABLE2_SETUPS, args)
        print(format_table(cols))
        _dump_columns(args, name, cols)
        return 0
    if name == "table3":
        cols, extra = {}, {}
        for H in (4, 5):
            config = MachineConfig(H, max_shut=2, f=DEFAULT_F[H])
            rep = _optimized(config, args, args.mode)
            cols[f"H={H}"] = _table_columns({"_": (config, rep.mu_star.mu)}, args)["_"]
            extra[f"H={H}"] = {"wall_time": rep.wall_time, "objective": rep.objective_value}
        print(format_table(cols))
        _dump_columns(args, name, cols, extra)
        return 0
    if name in ("table4", "table5"):
        cases = TABLE4_CASES if name == "table4" else TABLE5_CASES
        modes = ("lower_bound", "exact") if (name == "table4" and args.mode == "both") else (
            "lower_bound" if name == "table5" else args.mode,)
        rows = []
        for H, s in cases:
            f = DEFAULT_F[H] if name == "table4" else TABLE5_F
            config = MachineConfig(H, max_shut=s, f=f, exclude_all_open=(H > 10 and s >= 3))
            K = enumerate_combinations(config).shape[0]
            for mode in modes:
                rep = _optimized(config, args, mode)
                _, mean, sd = replicate(rep.mu_star.mu, config, n_cycles=args.cycles,
                                        reps=args.reps, seed=args.seed, threads=args.threads)
                row = (f"{H}({s})", K, mode, round(rep.wall_time, 2), round(mean, 3),
                       round(sd / np.sqrt(args.reps), 3), " ".join(f"{m:.1f}" for m in rep.mu_star.mu))
                rows.append(row)
                print(" | ".join(str(v) for v in row), flush=True)
        if args.out:
            _write_csv(Path(args.out) / f"{name}.csv",
                       ["case", "K", "mode", "time_s", "mse_mean", "mse_se", "mu"], rows)
        return 0
    raise ConfigError(f"unknown table {name!r}")


def _machine_flags(p):
    p.add_argument("--config", help="machine configuration JSON (keys H, T, alpha, max_shut, ...)")
    p.add_argument("--hoppers", "-H", type=int)
    p.add_argument("--max-shut", type=int)
    p.add_argument("--target", "-T", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--f", type=float, help="upper limit of each setpoint as a fraction of T")
    p.add_argument("--exclude-all-open", action="store_true")


def _common_flags(p):
    p.add_argument("--seed", type=int, default=None, help="base seed (default: $MWM_SEED or 0)")
    p.add_argument("--tol", type=float, default=1e-4, help="absolute tolerance of MVN integrals")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="output directory")


def _sim_flags(p, cycles=50_000):
    p.add_argument("--cycles", type=int, default=cycles)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--refill", choices=("fresh", "persistent"), default="fresh")


def build_parser():
    ap = argparse.ArgumentParser(prog="mwm", description="Multihead weigher setpoint tools")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="combination matrix and K")
    _machine_flags(p)
    _common_flags(p)
    p.set_defaults(func=cmd_enumerate)

    for name, func, help_ in (("moments", cmd_moments, "exact extreme order-statistic moments"),
                              ("bound", cmd_bound, "closed-form lower bound on E[min]"),
                              ("densities", cmd_densities, "combination densities as CSV")):
        p = sub.add_parser(name, help=help_)
        _machine_flags(p)
        _common_flags(p)
        p.add_argument("--mu", help="setpoints, comma or space separated")
        p.add_argument("--theta-sigma", help="JSON file with 'theta' and 'sigma'")
        if name == "densities":
            p.add_argument("--points", type=int, default=801)
        p.set_defaults(func=func)

    p = sub.add_parser("optimize", help="heuristic setpoint search")
    _machine_flags(p)
    _common_flags(p)
    _sim_flags(p)
    p.add_argument("--starts", type=int, default=100)
    p.add_argument("--mode", choices=("lower_bound", "exact"), default="lower_bound")
    p.add_argument("--inner-evals", type=int, default=300)
    p.add_argument("--penalty-growth", type=float, default=10.0)
    p.add_argument("--constraint-tol", type=float, default=0.5)
    p.add_argument("--simulate", action="store_true", help="simulate the returned setpoints")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="Monte Carlo cycles for given setpoints")
    _machine_flags(p)
    _common_flags(p)
    _sim_flags(p)
    p.add_argument("--mu", help="setpoints, comma or space separated")
    p.add_argument("--report", help="SolutionReport JSON written by 'optimize'")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("table", help="reproduce a published table end to end")
    p.add_argument("name", choices=("table1", "table2", "table3", "table4", "table5"))
    _common_flags(p)
    p.add_argument("--cycles", type=int, default=50_000)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--starts", type=int, default=100)
    p.add_argument("--mode", choices=("lower_bound", "exact", "both"), default="exact")
    p.add_argument("--max-h", type=int, default=4)
    p.set_defaults(func=cmd_table)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed is None:
        try:
            args.seed = int(os.environ.get("MWM_SEED", "0"))
        except ValueError:
            print("error: MWM_SEED must be an integer", file=sys.stderr)
            return ConfigError.exit_code
    if args.command == "table" and args.name == "table3" and args.mode == "both":
        args.mode = "exact"
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return exc.exit_code
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return exc.exit_code
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return exc.exit_code
    except MWMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"done in {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

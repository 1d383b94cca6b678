"""Command line interface.

Subcommands: simulate, stats, integral, girsanov, varadhan, wasserstein,
rate.  Options come from an optional ``key = value`` config file plus
flag overrides; the master seed falls back to the MASSFLOW_SEED
environment variable.  Exit codes: 0 success, 1 validation error,
2 failed statistical check under --check.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import batteries
from .config import ExperimentConfig, parse_config_file, resolve_master_seed
from .flow import init_uniform, simulate_path
from .girsanov import DriftPath, drift_convergence_diagnostic, log_likelihood_ratio
from .ldp import TargetSet, rate_function, varadhan_sweep
from .measures import AtomicMeasure, pushforward, wasserstein2
from .calculus import SimpleProcess, integrate_simple
from .rng import replica_rng

__all__ = ["main", "cli_run"]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--n", type=int, help="particle count")
    p.add_argument("--T", type=float, help="time horizon")
    p.add_argument("--dt", type=float, help="step size")
    p.add_argument("--epsilon", type=float, help="noise scale")
    p.add_argument("--beta", type=float, help="boundary weight exponent")
    p.add_argument("--replicas", type=int, help="ensemble size")
    p.add_argument("--seed", type=int, help="master seed (env MASSFLOW_SEED fallback)")
    p.add_argument(
        "--convention", choices=("paper", "midpoint"), help="initial grid convention"
    )
    p.add_argument("--out-dir", help="artifact directory")


def _build_config(args) -> ExperimentConfig:
    base = parse_config_file(args.config) if args.config else {}
    cfg = ExperimentConfig(**base)
    # precedence: flag > config file > MASSFLOW_SEED env var > 0
    if args.seed is not None:
        seed = args.seed
    elif "master_seed" in base:
        seed = None
    else:
        seed = resolve_master_seed(None)
    return cfg.with_overrides(
        n=args.n,
        T=args.T,
        dt=args.dt,
        epsilon=args.epsilon,
        beta=args.beta,
        replicas=getattr(args, "replicas", None),
        master_seed=seed,
        initial_convention=args.convention,
        out_dir=args.out_dir,
    )


def _cmd_simulate(args) -> int:
    cfg = _build_config(args)
    path = simulate_path(cfg, cfg.master_seed)
    if args.out:
        path.to_csv(args.out)
        print(f"wrote {args.out} ({path.times.size} grid times, n={path.n})")
    if args.json:
        Path(args.json).write_text(path.to_json(), encoding="utf-8")
        print(f"wrote {args.json}")
    if not args.out and not args.json:
        final = path.state(path.num_steps)
        print(f"T={cfg.T:g} blocks={final.block_count} com={float(final.cell_positions().mean())!r}")
    return 0


def _cmd_wasserstein(args) -> int:
    a = AtomicMeasure.from_csv(args.a)
    b = AtomicMeasure.from_csv(args.b)
    print(repr(wasserstein2(a, b)))
    return 0


def _cmd_rate(args) -> int:
    if args.path != "straightline":
        raise ValueError(f"unknown path kind {args.path!r}")
    times = np.linspace(0.0, args.T, args.steps + 1)
    phi = DriftPath.from_function(
        lambda u, t: u + args.v * t, args.n, times, fn_dot=lambda u, t: args.v
    )
    print(repr(rate_function(phi)))
    return 0


def _cmd_integral(args) -> int:
    cfg = _build_config(args)
    path = simulate_path(cfg, cfg.master_seed)
    f = SimpleProcess.constant(1.0, cfg.n, float(path.times[-1]))
    ip = integrate_simple(path, f)
    if args.out:
        ip.to_csv(args.out)
        print(f"wrote {args.out}")
    print(f"I_T={float(ip.values[-1])!r} qv_T={float(ip.qv[-1])!r}")
    return 0


def _run_batteries(cfg: ExperimentConfig, which: str, u: float, v: float):
    reports = []
    if which in ("martingale", "all"):
        reports += batteries.martingale_battery(cfg)
    if which in ("scaling", "all"):
        reports += batteries.scaling_battery(cfg)
    if which in ("coalescence", "all"):
        reports += batteries.coalescence_battery(cfg, u, v)
    if which in ("generator", "all"):
        reports += batteries.generator_battery(cfg)
    return reports


def _cmd_stats(args) -> int:
    cfg = _build_config(args)
    reports = _run_batteries(cfg, args.battery, args.u, args.v)
    for rep in reports:
        print(rep)
    if args.out:
        Path(args.out).write_text(
            json.dumps([r.to_dict() for r in reports], indent=1), encoding="utf-8"
        )
        print(f"wrote {args.out}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.DictWriter(
                fh,
                fieldnames=["name", "statistic", "band_lo", "band_hi",
                            "passed", "replicas", "runtime", "notes"],
                lineterminator="\n",
            )
            writer.writeheader()
            for rep in reports:
                writer.writerow(rep.to_dict())
        print(f"wrote {args.csv}")
    if args.check and not all(r.passed for r in reports):
        return 2
    return 0


def _cmd_varadhan(args) -> int:
    cfg = _build_config(args)
    base = pushforward(init_uniform(cfg.n, cfg.initial_convention))
    center = AtomicMeasure(base.positions + args.shift, base.weights)
    target = TargetSet(center, args.radius)
    eps_list = [float(x) for x in args.eps_list.split(",")]
    report = varadhan_sweep(
        target,
        eps_list,
        cfg.replicas,
        cfg,
        tilt=None if args.tilt == "none" else "auto",
        workers=args.workers,
    )
    for row in report.rows:
        flag = "" if row.estimable else "  [unestimable: zero hits]"
        print(
            f"eps={row.eps:g} hits={row.hits}/{row.replicas} "
            f"eps*lnP={row.estimate:.6g} band=[{row.band_lo:.6g}, {row.band_hi:.6g}]{flag}"
        )
    print(f"theoretical_rate={report.theoretical_rate!r}")
    print(f"extrapolated={report.extrapolated!r} ({report.fit_label})")
    print(f"finite_n_bias_dW={report.finite_n_bias!r}")
    if args.out:
        report.to_csv(args.out)
        print(f"wrote {args.out}")
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
        print(f"wrote {args.json}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="massflow",
        description="Coalescing heavy-diffusion particle flow laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one path and export it")
    _add_config_flags(p)
    p.add_argument("--out", help="CSV output (t, first, last, position, count)")
    p.add_argument("--json", help="JSON mirror output")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("wasserstein", help="d_W of two measures from CSV files")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=_cmd_wasserstein)

    p = sub.add_parser("rate", help="action functional of a named path")
    p.add_argument("--path", default="straightline")
    p.add_argument("--v", type=float, required=True, help="drift speed")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--steps", type=int, default=100)
    p.set_defaults(func=_cmd_rate)

    p = sub.add_parser("integral", help="stochastic integral of f = 1 along one path")
    _add_config_flags(p)
    p.add_argument("--out", help="CSV output (t, I, qv)")
    p.set_defaults(func=_cmd_integral)

    p = sub.add_parser("stats", help="statistical test batteries")
    _add_config_flags(p)
    p.add_argument(
        "--battery",
        choices=("martingale", "scaling", "coalescence", "generator", "all"),
        default="martingale",
    )
    p.add_argument("--u", type=float, default=0.25, help="first label (coalescence battery)")
    p.add_argument("--v", type=float, default=0.75, help="second label (coalescence battery)")
    p.add_argument("--check", action="store_true", help="exit 2 when any test fails")
    p.add_argument("--out", help="JSON report output")
    p.add_argument("--csv", help="CSV report output")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("girsanov", help="change-of-measure diagnostics")
    _add_config_flags(p)
    p.add_argument("--diagnostic", choices=("unit-mean", "convergence"), default="unit-mean")
    p.add_argument("--h", type=float, default=0.5, help="constant integrand (unit-mean)")
    p.add_argument("--drift", type=float, default=0.3, help="drift speed v (convergence)")
    p.add_argument("--eps-list", default="0.1,0.05,0.025", help="comma separated noise scales")
    p.add_argument("--out", help="CSV output")
    p.set_defaults(func=_cmd_girsanov_real)

    p = sub.add_parser("varadhan", help="short-time rate probe on a Wasserstein ball")
    _add_config_flags(p)
    p.add_argument("--shift", type=float, required=True, help="center = initial law shifted by this")
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--eps-list", required=True, help="comma separated noise scales")
    p.add_argument("--tilt", choices=("auto", "none"), default="auto")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="CSV output")
    p.add_argument("--json", help="JSON output")
    p.set_defaults(func=_cmd_varadhan)
    return parser


def _cmd_girsanov_real(args) -> int:
    import math

    cfg = _build_config(args)
    grid = cfg.grid_times()
    if args.diagnostic == "unit-mean":
        h = DriftPath.constant_integrand(args.h, cfg.n, grid)
        vals = np.empty(cfg.replicas)
        for r in range(cfg.replicas):
            from .flow import _simulate_recorded

            path = _simulate_recorded(cfg, replica_rng(cfg.master_seed, r), eps=cfg.epsilon)
            vals[r] = math.exp(log_likelihood_ratio(path, h, cfg.epsilon))
        mean = vals.mean()
        se = vals.std(ddof=1) / math.sqrt(cfg.replicas)
        ok = abs(mean - 1.0) <= 3 * se
        print(f"E exp(log M) = {mean:.6g} +- {se:.3g}  [{'PASS' if ok else 'FAIL'}: within 3 se of 1]")
        if args.out:
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("statistic,value,std_error\n")
                fh.write(f"unit_mean,{mean:.17g},{se:.17g}\n")
        return 0 if ok else 2
    phi = DriftPath.from_function(
        lambda u, t: u + args.drift * t, cfg.n, grid, fn_dot=lambda u, t: args.drift
    )
    eps_list = [float(x) for x in args.eps_list.split(",")]
    diag = drift_convergence_diagnostic(phi, eps_list, cfg)
    for eps, mean, se in diag.rows:
        print(f"eps={eps:g} mean_sup_distance={mean:.6g} +- {se:.3g}")
    if args.out:
        diag.to_csv(args.out)
        print(f"wrote {args.out}")
    return 0


def cli_run(argv=None) -> int:
    """Parse arguments and run; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:  # console entry point
    sys.exit(cli_run())

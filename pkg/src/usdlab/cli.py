"""Command-line front end.

Every subcommand writes into ``<out>/<subcommand>-<seed>/`` a
``manifest.json`` that records the resolved parameters and seeds needed to
repeat the run, next to its data files.

Exit status: 0 success, 2 invalid arguments, 3 infeasible experiment,
4 budget exhausted under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ExperimentSpec, build_initial_config, default_bias, fig1_k, sqrt_n_log_n
from .core import Configuration
from .errors import InfeasibleSpecError, USDError
from .engine import StopCondition, replicate_seed, run_trajectory, write_snapshots_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_EXHAUSTED = 4


class UsageError(Exception):
    """Bad command-line input detected after parsing."""


@dataclass
class RunManifest:
    """Everything needed to re-run a command bit for bit."""

    command: str
    argv: list
    spec: dict
    master_seed: int
    replicate_seeds: list
    wall_seconds: float = 0.0
    interactions: int = 0
    log_base: str = "natural"
    tool_version: str = __version__
    python: str = field(default_factory=platform.python_version)
    numpy: str = np.__version__
    extra: dict = field(default_factory=dict)

    @property
    def throughput(self) -> Optional[float]:
        return self.interactions / self.wall_seconds if self.wall_seconds > 0 else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interactions_per_second"] = self.throughput
        return d


# ---------------------------------------------------------------------------
# Parser


def _common(p: argparse.ArgumentParser, k_required: bool = False) -> None:
    p.add_argument("--n", type=int, help="population size")
    p.add_argument("--k", type=int, required=k_required, help="number of opinions")
    p.add_argument("--bias", type=int, help="initial advantage x1 - x2")
    p.add_argument("--seed", type=int, help="master seed (64-bit, default 0)")
    p.add_argument("--reps", type=int, help="replicates (default 1)")
    p.add_argument("--stride", type=int, help="snapshot interval in interactions (default n)")
    p.add_argument("--budget", type=int, help="max interactions per run")
    p.add_argument("--out", default="runs", help="output root directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="data file format")
    p.add_argument("--no-skip", action="store_true", help="disable no-op skipping")
    p.add_argument("--log-base", choices=("natural", "two"), default="natural")
    p.add_argument("--strict", action="store_true", help="exit 4 if any run exhausts its budget")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usdlab", description="Undecided State Dynamics laboratory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="run one experiment spec")
    _common(p)
    p.add_argument("--spec-file", help="JSON experiment file (flags override its fields)")
    p.add_argument("--full-counts", action="store_true", help="record every x_i in snapshots")

    p = sub.add_parser("sweep", help="run several specs and fit the scaling law")
    _common(p)
    p.add_argument("--ks", help="comma-separated k values at fixed n")
    p.add_argument("--spec-file", help="JSON array of experiment objects")

    p = sub.add_parser("fig1", help="reproduce the reference trajectory figure")
    _common(p)
    p.add_argument("--tracked", type=int, default=2, help="minority opinion to plot")

    p = sub.add_parser("oracle", help="exact absorption analysis of a small chain")
    _common(p)
    p.add_argument("--start", help="start state x1,...,xk,u (default: built from --bias)")
    p.add_argument("--float", dest="force_float", action="store_true", help="floating solve")

    p = sub.add_parser("drift-walk", help="hitting probability of the lazy biased walk")
    _common(p)
    p.add_argument("--p", type=float, required=True, help="move probability")
    p.add_argument("--q", type=float, required=True, help="bias (> 0)")
    p.add_argument("--T", type=int, help="target level (default: smallest admissible)")

    p = sub.add_parser("verify-bounds", help="u band, growth and doubling measurements")
    _common(p)
    p.add_argument("--band-c", type=float, default=5.0)
    p.add_argument("--alpha", type=int, help="doubling target (default 2 sqrt(n ln n))")
    return parser


# ---------------------------------------------------------------------------
# Helpers


def _spec_from_args(args, *, default_n=None, default_k=None, default_bias_value=0, base: Optional[dict] = None):
    data = dict(base or {})
    if args.n is not None:
        data["n"] = args.n
    elif "n" not in data:
        if default_n is None:
            raise UsageError("--n is required")
        data["n"] = default_n
    if args.k is not None:
        data["k"] = args.k
    elif "k" not in data:
        k = default_k(data["n"]) if callable(default_k) else default_k
        if k is None:
            raise UsageError("--k is required")
        data["k"] = k
    if args.bias is not None:
        data["bias"] = args.bias
    elif "bias" not in data:
        b = default_bias_value(data["n"]) if callable(default_bias_value) else default_bias_value
        data["bias"] = b
    for name in ("seed", "reps", "stride", "budget"):
        v = getattr(args, name)
        if v is not None:
            data[name] = v
    if args.no_skip:
        data["skipping"] = False
    return ExperimentSpec.from_dict(data)


def _run_dir(args, seed: int) -> str:
    path = os.path.join(args.out, f"{args.command}-{seed}")
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _finite(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args, argv) -> int:
    base = None
    if args.spec_file:
        with open(args.spec_file) as fh:
            base = json.load(fh)
        if not isinstance(base, dict):
            raise UsageError("spec file must hold one JSON object")
    spec = _spec_from_args(args, base=base)
    build_initial_config(spec.n, spec.k, spec.bias)
    out = _run_dir(args, spec.seed)
    seeds = [spec.seed] if spec.reps == 1 else [replicate_seed(spec.seed, r) for r in range(spec.reps)]
    stop = StopCondition(spec.budget)
    t0 = time.perf_counter()
    results = [run_trajectory(spec, stop, s, full_counts=args.full_counts or None) for s in seeds]
    wall = time.perf_counter() - t0
    summary = []
    for r, res in enumerate(results):
        name = "trajectory" if spec.reps == 1 else f"trajectory-{r}"
        if args.format == "csv":
            write_snapshots_csv(res, os.path.join(out, name + ".csv"))
        else:
            _write_json(os.path.join(out, name + ".json"), {
                "snapshots": [s._asdict() for s in res.snapshots],
            })
        summary.append({
            "seed": res.seed,
            "stabilization_interactions": res.stabilization_interactions,
            "parallel_time": res.parallel_time,
            "winner": res.winner,
            "exhausted": res.exhausted,
            "final": list(res.final.as_tuple()),
        })
    _write_json(os.path.join(out, "summary.json"), summary)
    manifest = RunManifest("simulate", list(argv), spec.to_dict(), spec.seed, seeds, wall,
                           sum(r.end_interaction for r in results), args.log_base)
    _write_json(os.path.join(out, "manifest.json"), manifest.to_dict())
    print(json.dumps(summary if spec.reps > 1 else summary[0], default=_json_default))
    if args.strict and any(r.exhausted for r in results):
        return EXIT_EXHAUSTED
    return EXIT_OK


def cmd_sweep(args, argv) -> int:
    from .experiments import sweep_and_fit

    if args.spec_file:
        with open(args.spec_file) as fh:
            items = json.load(fh)
        if not isinstance(items, list) or not items:
            raise UsageError("sweep file must hold a non-empty JSON array")
        specs = [ExperimentSpec.from_dict(d) for d in items]
    elif args.ks:
        try:
            ks = [int(x) for x in args.ks.split(",")]
        except ValueError:
            raise UsageError(f"bad --ks value {args.ks!r}") from None
        n = args.n
        if n is None:
            raise UsageError("--n is required with --ks")
        bias = args.bias if args.bias is not None else default_bias(n, args.log_base)
        specs = [ExperimentSpec(n=n, k=k, bias=bias, seed=args.seed or 0, reps=args.reps or 1, stride=args.stride,
                                budget=args.budget, skipping=not args.no_skip) for k in ks]
    else:
        raise UsageError("sweep needs --ks or --spec-file")
    for s in specs:
        build_initial_config(s.n, s.k, s.bias)
    master = specs[0].seed
    out = _run_dir(args, master)
    t0 = time.perf_counter()
    report = sweep_and_fit(specs)
    wall = time.perf_counter() - t0
    data = report.to_dict()
    _write_json(os.path.join(out, "sweep.json"), data)
    if args.format == "csv":
        with open(os.path.join(out, "sweep.csv"), "w") as fh:
            cols = ["n", "k", "bias", "reps", "completed", "exhausted", "median_interactions",
                    "median_parallel", "mean_parallel", "std_parallel", "band_violations"]
            fh.write(",".join(cols) + "\n")
            for row in data["rows"]:
                fh.write(",".join("" if row[c] is None else str(row[c]) for c in cols) + "\n")
    seeds = {f"{s.n}/{s.k}/{s.bias}": [replicate_seed(s.seed, r) for r in range(s.reps)] for s in specs}
    interactions = sum(sum(r.stats.observed) for r in report.rows)
    manifest = RunManifest("sweep", list(argv), {"specs": [s.to_dict() for s in specs]}, master,
                           [seeds], wall, interactions, args.log_base)
    _write_json(os.path.join(out, "manifest.json"), manifest.to_dict())
    print(json.dumps(data["fit"], default=_json_default))
    if args.strict and any(r.stats.censored for r in report.rows):
        return EXIT_EXHAUSTED
    return EXIT_OK


def cmd_fig1(args, argv) -> int:
    from .experiments import reproduce_fig1

    spec = _spec_from_args(
        args,
        default_n=10**6,
        default_k=lambda n: fig1_k(n, args.log_base),
        default_bias_value=lambda n: default_bias(n, args.log_base),
    )
    build_initial_config(spec.n, spec.k, spec.bias)
    out = _run_dir(args, spec.seed)
    t0 = time.perf_counter()
    res = reproduce_fig1(spec, out, args.tracked)
    wall = time.perf_counter() - t0
    traj = res.trajectory
    summary = {
        "stabilization_interactions": traj.stabilization_interactions,
        "parallel_time": traj.parallel_time,
        "winner": traj.winner,
        "exhausted": traj.exhausted,
        "minority_exceeded_initial": res.minority_exceeded_initial,
        "k": spec.k,
        "bias": spec.bias,
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    manifest = RunManifest("fig1", list(argv), spec.to_dict(), spec.seed, [spec.seed], wall,
                           traj.end_interaction, args.log_base)
    _write_json(os.path.join(out, "manifest.json"), manifest.to_dict())
    print(json.dumps(summary))
    if args.strict and traj.exhausted:
        return EXIT_EXHAUSTED
    return EXIT_OK


def _parse_start(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"bad --start value {text!r}") from None
    if len(values) < 2 or min(values) < 0:
        raise UsageError("--start needs non-negative x1,...,xk,u")
    return values


def cmd_oracle(args, argv) -> int:
    from .oracle import absorption_analysis, enumerate_states

    if args.start:
        values = _parse_start(args.start)
        start = Configuration.from_tuple(values)
        if args.n is not None and args.n != start.n:
            raise UsageError(f"--start sums to {start.n}, not --n {args.n}")
        if args.k is not None and args.k != start.k:
            raise UsageError(f"--start has {start.k} opinions, not --k {args.k}")
    else:
        if args.n is None or args.k is None:
            raise UsageError("oracle needs --start or both --n and --k")
        start = build_initial_config(args.n, args.k, args.bias or 0)
    t0 = time.perf_counter()
    chain = enumerate_states(start.n, start.k)
    res = absorption_analysis(chain, start, exact=False if args.force_float else None)
    wall = time.perf_counter() - t0
    data = {
        "n": start.n,
        "k": start.k,
        "start": list(start.as_tuple()),
        "expected_time": str(res.expected_time) if res.exact else repr(res.expected_time),
        "expected_time_float": float(res.expected_time),
        "absorb_probs": [
            {"state": list(c.as_tuple()), "probability": str(p) if res.exact else repr(p), "float": float(p)}
            for c, p in res.absorb_probs.items()
        ],
        "exact": res.exact,
        "residual": res.residual,
        "transient_states": res.transient_states,
    }
    out = _run_dir(args, args.seed or 0)
    _write_json(os.path.join(out, "oracle.json"), data)
    manifest = RunManifest("oracle", list(argv), {"start": data["start"]}, args.seed or 0, [], wall, 0, args.log_base)
    _write_json(os.path.join(out, "manifest.json"), manifest.to_dict())
    print(json.dumps(data))
    return EXIT_OK


def cmd_drift_walk(args, argv) -> int:
    from .drift import (
        WalkParams,
        hitting_bound,
        hitting_time_monte_carlo,
        hypothesis_satisfied,
        hypothesis_threshold,
    )

    n = args.n if args.n is not None else 1000
    if not 0 < args.p <= 1 or not 0 < args.q <= args.p:
        raise UsageError("need 0 < q <= p <= 1")
    T = args.T if args.T is not None else math.ceil(hypothesis_threshold(args.p, args.q, n, args.log_base))
    if T < 1:
        raise UsageError("--T must be positive")
    reps = args.reps if args.reps is not None else 10_000
    seed = args.seed or 0
    params = WalkParams.constant(args.p, args.q, n * n)
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    rep = hitting_time_monte_carlo(params, T, reps, rng)
    wall = time.perf_counter() - t0
    data = {
        "p": args.p,
        "q": args.q,
        "T": T,
        "n": n,
        "reps": reps,
        "steps": rep.steps,
        "hits": rep.hits,
        "empirical_prob": rep.fraction,
        "sigma": rep.sigma,
        "lemma_hypothesis_satisfied": hypothesis_satisfied(args.p, args.q, T, n, args.log_base),
        "hypothesis_threshold": hypothesis_threshold(args.p, args.q, n, args.log_base),
        "bernstein_bound": hitting_bound(args.p, args.q, T),
        "target_probability": n ** -2.0,
        "log_base": args.log_base,
    }
    out = _run_dir(args, seed)
    _write_json(os.path.join(out, "drift-walk.json"), data)
    manifest = RunManifest("drift-walk", list(argv), {"p": args.p, "q": args.q, "T": T, "n": n, "reps": reps},
                           seed, [seed], wall, rep.steps * reps, args.log_base)
    _write_json(os.path.join(out, "manifest.json"), manifest.to_dict())
    print(json.dumps(data))
    return EXIT_OK


def cmd_verify_bounds(args, argv) -> int:
    from .experiments import measure_doubling_time, measure_growth_time, u_plateau_report, verify_u_band

    spec = _spec_from_args(args, default_bias_value=lambda n: default_bias(n, args.log_base))
    build_initial_config(spec.n, spec.k, spec.bias)
    out = _run_dir(args, spec.seed)
    t0 = time.perf_counter()
    traj = run_trajectory(spec, full_counts=False)
    band = verify_u_band(traj, spec.n, spec.k, args.band_c, args.log_base)
    plat = u_plateau_report(traj, args.band_c, log_base=args.log_base)
    growth = measure_growth_time(spec)
    alpha = args.alpha if args.alpha is not None else math.ceil(2 * sqrt_n_log_n(spec.n, args.log_base))
    doubling = measure_doubling_time(spec.with_(bias=0), alpha)
    wall = time.perf_counter() - t0
    data = {
        "u_band": {k: _finite(v) for k, v in asdict(band).items()},
        "u_plateau": asdict(plat),
        "growth": growth.to_dict(),
        "doubling": doubling.to_dict(),
    }
    _write_json(os.path.join(out, "bounds.json"), data)
    seeds = [replicate_seed(spec.seed, r) for r in range(spec.reps)]
    manifest = RunManifest("verify-bounds", list(argv), spec.to_dict(), spec.seed, seeds, wall,
                           traj.end_interaction, args.log_base)
    _write_json(os.path.join(out, "manifest.json"), manifest.to_dict())
    print(json.dumps({"u_band": data["u_band"], "growth_median": growth.stats.median,
                      "doubling_median": doubling.stats.median}, default=_json_default))
    if args.strict and traj.exhausted:
        return EXIT_EXHAUSTED
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "fig1": cmd_fig1,
    "oracle": cmd_oracle,
    "drift-walk": cmd_drift_walk,
    "verify-bounds": cmd_verify_bounds,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run the subcommand; returns the exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args, argv)
    except InfeasibleSpecError as exc:
        print(f"usdlab {args.command}: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, USDError, ValueError) as exc:
        print(f"usdlab {args.command}: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()

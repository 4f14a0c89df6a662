"""Experiment suites: u-band checks, hitting times, scaling fits and the reference trajectory figure.

Times are interaction counts unless a name says ``parallel``.  Every
estimate built from replicates treats runs that end without reaching their
target (budget exhausted, or absorbed elsewhere) as right-censored.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import (
    ExperimentSpec,
    build_initial_config,
    default_bias,
    fig1_k,
    realized_bias,
    sqrt_n_log_n,
)
from .engine import Predicate, StopCondition, TrajectoryResult, replicate_seed, run_trajectory
from .svg import emit_svg

__all__ = [
    "ExperimentSpec",
    "build_initial_config",
    "realized_bias",
    "verify_u_band",
    "u_plateau_report",
    "measure_growth_time",
    "measure_doubling_time",
    "sweep_and_fit",
    "reproduce_fig1",
    "fig1_spec",
]

#: Constant in front of ``sqrt(n log n)`` in the literal band.
LITERAL_BAND_CONSTANT = 20 * 132 + 1
DEFAULT_BAND_C = 5.0


def plateau(n: int, k: int) -> float:
    """``n/2 - n/(4k)``, the level around which u settles."""
    return n / 2 - n / (4 * k)


# ---------------------------------------------------------------------------
# Censored statistics


@dataclass
class CensoredStats:
    """Summary of hitting times with right-censored runs.

    ``median`` is ``None`` when at least half of the runs are censored; the
    median is then only known to exceed the censoring level.
    """

    observed: list[int]
    censored: int

    @property
    def total(self) -> int:
        return len(self.observed) + self.censored

    @property
    def median(self) -> Optional[float]:
        obs = sorted(self.observed)
        m = self.total
        if m == 0:
            return None
        # censored runs sort after every observed value
        lo, hi = (m - 1) // 2, m // 2
        if hi >= len(obs):
            return None
        return (obs[lo] + obs[hi]) / 2

    @property
    def median_censored(self) -> bool:
        return self.total > 0 and self.median is None

    @property
    def mean_observed(self) -> Optional[float]:
        return float(np.mean(self.observed)) if self.observed else None

    @property
    def std_observed(self) -> Optional[float]:
        return float(np.std(self.observed, ddof=1)) if len(self.observed) > 1 else None

    def to_dict(self) -> dict:
        return {
            "observed": list(self.observed),
            "censored": self.censored,
            "median": self.median,
            "median_censored": self.median_censored,
            "mean_observed": self.mean_observed,
        }


# ---------------------------------------------------------------------------
# u band


@dataclass
class UBandReport:
    n: int
    k: int
    c: float
    log_base: str
    literal_band: float
    literal_band_vacuous: bool
    empirical_band: float
    max_u: int
    first_violation_literal: Optional[int]
    first_violation_empirical: Optional[int]
    fraction_inside_empirical: float
    snapshots_checked: int


def _pre_absorption(traj: TrajectoryResult) -> np.ndarray:
    rows = traj.rows
    if traj.stabilization_interactions is not None:
        rows = rows[rows[:, 0] < traj.stabilization_interactions]
    return rows


def verify_u_band(
    traj: TrajectoryResult, n: int, k: int, c: float = DEFAULT_BAND_C, log_base: str = "natural"
) -> UBandReport:
    """Compare the undecided count against the literal and the empirical upper band.

    The literal band is ``n/2 - n/(4k) + 10n/(k-1)^2 + 2641 sqrt(n log n)``;
    the empirical one replaces the last two terms by ``c sqrt(n log n)``.
    Snapshots at or after absorption are ignored.
    """
    s = sqrt_n_log_n(n, log_base)
    extra = 10 * n / (k - 1) ** 2 if k > 1 else math.inf
    literal = plateau(n, k) + extra + LITERAL_BAND_CONSTANT * s
    emp = plateau(n, k) + c * s
    rows = _pre_absorption(traj)
    u = rows[:, 1]
    t = rows[:, 0]

    def first_above(level):
        idx = np.flatnonzero(u > level)
        return int(t[idx[0]]) if idx.size else None

    return UBandReport(
        n=n,
        k=k,
        c=c,
        log_base=log_base,
        literal_band=literal,
        literal_band_vacuous=literal >= n,
        empirical_band=emp,
        max_u=int(u.max()) if u.size else 0,
        first_violation_literal=first_above(literal),
        first_violation_empirical=first_above(emp),
        fraction_inside_empirical=float(np.mean(u <= emp)) if u.size else 1.0,
        snapshots_checked=int(u.size),
    )


@dataclass
class PlateauReport:
    """Two-sided band ``plateau +- c sqrt(n log n)`` around the u plateau.

    ``entry_time`` is the first snapshot inside the band.  ``fraction_inside``
    is taken over snapshots from entry up to ``tail`` parallel time before
    absorption (or the last snapshot if the run did not absorb).
    """

    lower: float
    upper: float
    entry_time: Optional[int]
    entered_within: bool
    window_snapshots: int
    fraction_inside: float

    def passes(self, min_fraction: float = 0.9) -> bool:
        return self.entered_within and self.fraction_inside >= min_fraction


def u_plateau_report(
    traj: TrajectoryResult,
    c: float = DEFAULT_BAND_C,
    enter_within: float = 10.0,
    tail: float = 5.0,
    log_base: str = "natural",
) -> PlateauReport:
    n, k = traj.n, traj.k
    s = c * sqrt_n_log_n(n, log_base)
    lo, hi = plateau(n, k) - s, plateau(n, k) + s
    t = traj.rows[:, 0]
    u = traj.rows[:, 1]
    inside = (u >= lo) & (u <= hi)
    idx = np.flatnonzero(inside)
    if idx.size == 0:
        return PlateauReport(lo, hi, None, False, 0, 0.0)
    entry = int(t[idx[0]])
    end = traj.stabilization_interactions if traj.stabilization_interactions is not None else int(t[-1]) + 1
    stop = end - tail * n
    window = (t >= entry) & (t <= stop)
    count = int(window.sum())
    frac = float(inside[window].mean()) if count else 0.0
    return PlateauReport(lo, hi, entry, entry <= enter_within * n, count, frac)


# ---------------------------------------------------------------------------
# Hitting times


@dataclass
class HittingReport:
    """Hitting-time sample with a reference value from the drift bounds."""

    spec: ExperimentSpec
    target: dict
    stats: CensoredStats
    reference: float
    seeds: list[int] = field(default_factory=list)

    @property
    def median_ratio(self) -> Optional[float]:
        m = self.stats.median
        return None if m is None else m / self.reference

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "target": self.target,
            "stats": self.stats.to_dict(),
            "reference": self.reference,
            "median_ratio": self.median_ratio,
        }


def _replicate_seeds(spec: ExperimentSpec) -> list[int]:
    return [replicate_seed(spec.seed, r) for r in range(spec.reps)]


def measure_growth_time(
    spec: ExperimentSpec,
    i: int = 2,
    lo: Optional[int] = None,
    hi: Optional[int] = None,
) -> HittingReport:
    """Interactions between ``x_i <= lo`` and the next ``x_i >= hi``.

    Defaults are ``lo = floor(3n / 2k)`` and ``hi = floor(2n / k)``; the
    reference is ``kn / 25``.  A window with ``lo >= hi`` and a start with
    ``x_i >= hi`` both give 0.  Runs that never complete the window are
    censored.
    """
    n, k = spec.n, spec.k
    lo = (3 * n) // (2 * k) if lo is None else lo
    hi = (2 * n) // k if hi is None else hi
    if not 1 <= i <= k:
        raise ValueError(f"opinion index {i} outside [1, {k}]")
    start = build_initial_config(n, k, spec.bias)
    seeds = _replicate_seeds(spec)
    target = {"opinion": i, "lo": lo, "hi": hi}
    if lo >= hi or start.x(i) >= hi:
        return HittingReport(spec, target, CensoredStats([0] * spec.reps, 0), k * n / 25, seeds)
    stop = StopCondition(spec.budget, True, Predicate("growth", lo, i, hi))
    observed, censored = [], 0
    for s in seeds:
        r = run_trajectory(spec, stop, s, record=False)
        if r.hit_interaction is None:
            censored += 1
        else:
            observed.append(r.hit_interaction - r.stage_interaction)
    return HittingReport(spec, target, CensoredStats(observed, censored), k * n / 25, seeds)


def measure_doubling_time(spec: ExperimentSpec, alpha: int) -> HittingReport:
    """First interaction with ``max_i x_i - min_j x_j >= alpha``; reference ``kn / 24``."""
    seeds = _replicate_seeds(spec)
    stop = StopCondition(spec.budget, True, Predicate("delta_ge", alpha))
    observed, censored = [], 0
    for s in seeds:
        r = run_trajectory(spec, stop, s, record=False)
        if r.hit_interaction is None:
            censored += 1
        else:
            observed.append(r.hit_interaction)
    target = {"alpha": alpha}
    return HittingReport(spec, target, CensoredStats(observed, censored), spec.k * spec.n / 24, seeds)


# ---------------------------------------------------------------------------
# Sweeps


def fit_feature(n: int, k: int) -> float:
    """``k n ln(sqrt(n) / (k ln n))``."""
    return k * n * math.log(math.sqrt(n) / (k * math.log(n)))


@dataclass
class SweepRow:
    n: int
    k: int
    bias: int
    reps: int
    stats: CensoredStats
    winners: dict
    band_violations: int
    band_c: float

    @property
    def median_parallel(self) -> Optional[float]:
        m = self.stats.median
        return None if m is None else m / self.n

    @property
    def std_parallel(self) -> Optional[float]:
        s = self.stats.std_observed
        return None if s is None else s / self.n

    @property
    def mean_parallel(self) -> Optional[float]:
        m = self.stats.mean_observed
        return None if m is None else m / self.n

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "bias": self.bias,
            "reps": self.reps,
            "completed": len(self.stats.observed),
            "exhausted": self.stats.censored,
            "median_interactions": self.stats.median,
            "mean_interactions": self.stats.mean_observed,
            "median_parallel": self.median_parallel,
            "mean_parallel": self.mean_parallel,
            "std_parallel": self.std_parallel,
            "winners": {str(k): v for k, v in self.winners.items()},
            "band_violations": self.band_violations,
            "band_c": self.band_c,
        }


@dataclass
class SweepFit:
    """Least-squares ``T ~ c k n ln(sqrt(n)/(k ln n))`` through the origin."""

    c: Optional[float]
    residuals: dict
    points: list
    lower_bound_constant: float = 1 / 25

    @property
    def max_abs_residual(self) -> Optional[float]:
        return max((abs(r) for r in self.residuals.values()), default=None)


@dataclass
class SweepReport:
    rows: list[SweepRow]
    fit: SweepFit
    partial: bool
    upper_bound_ratio: dict

    def medians_increasing(self) -> bool:
        meds = [r.stats.median for r in sorted(self.rows, key=lambda r: r.k)]
        return all(m is not None for m in meds) and all(a < b for a, b in zip(meds, meds[1:]))

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "fit": {
                "c": self.fit.c,
                "relative_residuals": {str(k): v for k, v in self.fit.residuals.items()},
                "lower_bound_constant": self.fit.lower_bound_constant,
                "log_base": "natural",
            },
            "median_parallel_over_k_ln_n": {str(k): v for k, v in self.upper_bound_ratio.items()},
            "partial": self.partial,
        }


def fit_scaling(points: Sequence[tuple[int, int, float]]) -> SweepFit:
    """Fit ``c`` from ``(n, k, median interactions)``; residuals are ``(T - c f) / T``."""
    use = [(n, k, t, fit_feature(n, k)) for n, k, t in points if t is not None and t > 0 and fit_feature(n, k) > 0]
    if not use:
        return SweepFit(None, {}, [])
    f = np.array([u[3] for u in use])
    t = np.array([u[2] for u in use])
    c = float(f @ t / (f @ f))
    res = {u[1]: (u[2] - c * u[3]) / u[2] for u in use}
    return SweepFit(c, res, [(u[0], u[1], u[2]) for u in use])


def run_spec(spec: ExperimentSpec, band_c: float = DEFAULT_BAND_C) -> SweepRow:
    """All replicates of one spec with stabilization, winner and band tallies."""
    stop = StopCondition(spec.budget)
    observed, censored = [], 0
    winners: dict = {}
    violations = 0
    for s in _replicate_seeds(spec):
        r = run_trajectory(spec, stop, s, full_counts=False)
        if r.stabilization_interactions is None:
            censored += 1
            winners["exhausted"] = winners.get("exhausted", 0) + 1
        else:
            observed.append(r.stabilization_interactions)
            key = r.winner if r.winner is not None else "none"
            winners[key] = winners.get(key, 0) + 1
        if spec.k > 1 and verify_u_band(r, spec.n, spec.k, band_c).first_violation_empirical is not None:
            violations += 1
    return SweepRow(spec.n, spec.k, spec.bias, spec.reps, CensoredStats(observed, censored), winners, violations, band_c)


def sweep_and_fit(specs: Sequence[ExperimentSpec], band_c: float = DEFAULT_BAND_C) -> SweepReport:
    """Run every spec and fit the lower-bound functional form.

    Rows are sorted by ``(n, k, bias)``.  The report is flagged partial when
    some row has a censored median.
    """
    rows = sorted((run_spec(s, band_c) for s in specs), key=lambda r: (r.n, r.k, r.bias))
    fit = fit_scaling([(r.n, r.k, r.stats.median) for r in rows])
    partial = any(r.stats.median is None for r in rows)
    upper = {r.k: (r.median_parallel / (r.k * math.log(r.n)) if r.median_parallel is not None and r.k > 0 else None)
             for r in rows}
    return SweepReport(rows, fit, partial, upper)


# ---------------------------------------------------------------------------
# Reference trajectory figure


def fig1_spec(n: int = 10**6, seed: int = 0, log_base: str = "natural", **changes) -> ExperimentSpec:
    """``k = sqrt(n)/(log n log log n)`` and bias ``ceil(sqrt(n ln n))``."""
    spec = ExperimentSpec(n=n, k=fig1_k(n, log_base), bias=default_bias(n, log_base), seed=seed)
    return spec.with_(**changes) if changes else spec


@dataclass
class Fig1Result:
    trajectory: TrajectoryResult
    tracked: int
    series: dict
    minority_exceeded_initial: bool
    csv_path: Optional[str] = None
    svg_path: Optional[str] = None


FIG1_COLUMNS = ("parallel_time", "x1", "k_x_tracked", "u", "majority_delta", "max_delta")


def reproduce_fig1(
    spec: ExperimentSpec, out_dir: Optional[str] = None, tracked: int = 2
) -> Fig1Result:
    """One run with per-stride series of ``x_1``, ``k x_tracked``, ``u`` and the majority gap.

    With ``out_dir`` set, ``fig1.csv`` and ``fig1.svg`` are written there.
    """
    if not 2 <= tracked <= spec.k:
        raise ValueError(f"tracked opinion must lie in [2, {spec.k}]")
    traj = run_trajectory(spec, full_counts=True)
    t = traj.series("interaction") / spec.n
    series = {
        "parallel_time": t,
        "x1": traj.series("x1"),
        "k_x_tracked": spec.k * traj.series(f"x{tracked}"),
        "u": traj.series("u"),
        "majority_delta": traj.series("majority_delta"),
        "max_delta": traj.series("max_delta"),
    }
    start = traj.rows[0, 8:]
    exceeded = bool(np.any(traj.rows[:, 9:] > start[1:]))
    res = Fig1Result(traj, tracked, series, exceeded)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        res.csv_path = os.path.join(out_dir, "fig1.csv")
        with open(res.csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIG1_COLUMNS)
            for vals in zip(*(series[c] for c in FIG1_COLUMNS)):
                w.writerow([repr(float(vals[0]))] + [int(v) for v in vals[1:]])
        res.svg_path = os.path.join(out_dir, "fig1.svg")
        with open(res.svg_path, "w") as fh:
            fh.write(fig1_svg(res))
    return res


def fig1_svg(res: Fig1Result) -> str:
    s = res.series
    t = s["parallel_time"].tolist()
    k = res.trajectory.k
    return emit_svg(
        {
            "x1": (t, s["x1"].tolist()),
            f"{k} * x{res.tracked}": (t, s["k_x_tracked"].tolist()),
            "u": (t, s["u"].tolist()),
            "max(x1 - xj)": (t, s["majority_delta"].tolist()),
        },
        title=f"USD, n={res.trajectory.n}, k={k}",
        xlabel="parallel time",
        ylabel="agents",
    )

"""Lazy biased random walks, their monotone coupling and two tail bounds.

The walk moves ``+1`` with probability ``(p + q)/2``, ``-1`` with
``(p - q)/2`` and stays otherwise.  The coupled pair ``(Y, Ỹ)`` shares one
uniform draw per step: ``Y`` uses the time-varying bias ``q(t)`` and ``Ỹ``
the uniform upper bound ``q``, and the thresholds below guarantee
``Ỹ(t) >= Y(t)`` pathwise.

All logarithms are natural unless ``log_base="two"`` is passed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .config import log_fn
from .core import Configuration
from .errors import InvalidWalkParamsError

Schedule = Callable[[int], Union[float, np.ndarray]]

#: Constant of the hitting-bound hypothesis ``T >= 32 (...) log n``.
HYPOTHESIS_CONSTANT = 32
#: Constant of the drift theorem's condition (iii) and bound.
OW_CONSTANT = 132


def _check_probs(p, q, tol: float = 1e-12):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    bad = (p < -tol) | (p > 1 + tol) | (q < -p - tol) | (q > p + tol)
    if np.any(bad):
        raise InvalidWalkParamsError(f"invalid step probabilities (p={p!r}, q={q!r}); need 0 <= p <= 1, |q| <= p")


def step_probabilities(p_t: float, q_t: float) -> tuple[float, float, float]:
    """``(stay, up, down)`` for one step.

    Raises:
        InvalidWalkParamsError: if any of them leaves ``[0, 1]``.
    """
    _check_probs(p_t, q_t)
    return 1.0 - p_t, (p_t + q_t) / 2, (p_t - q_t) / 2


@dataclass(frozen=True)
class WalkParams:
    """Schedules ``p(t)``, ``q(t)`` with uniform bounds ``p_max``, ``q_max``.

    Schedules may return arrays to give each of several parallel walks its
    own parameters.
    """

    p_schedule: Schedule
    q_schedule: Schedule
    p_max: float
    q_max: float
    horizon: int

    def __post_init__(self):
        if not 0 < self.p_max <= 1:
            raise InvalidWalkParamsError(f"p_max must lie in (0, 1] (got {self.p_max})")
        if not self.q_max > 0:
            raise InvalidWalkParamsError(f"q_max must be positive (got {self.q_max})")
        if self.horizon < 0:
            raise InvalidWalkParamsError("horizon must be non-negative")

    @classmethod
    def constant(cls, p: float, q: float, horizon: int) -> "WalkParams":
        return cls(lambda t: p, lambda t: q, p, q, horizon)

    def at(self, t: int):
        """``(p(t), q(t))`` after checking them against the bounds."""
        p, q = self.p_schedule(t), self.q_schedule(t)
        _check_probs(p, q)
        if np.any(np.asarray(p) > self.p_max + 1e-12) or np.any(np.asarray(q) > self.q_max + 1e-12):
            raise InvalidWalkParamsError(f"schedule exceeds its bounds at t={t}")
        return p, q

    def validate(self, upto: Optional[int] = None) -> None:
        """Check every step up to ``min(upto, horizon)``."""
        for t in range(min(self.horizon, self.horizon if upto is None else upto)):
            self.at(t)


@dataclass(frozen=True)
class DriftTheoremInputs:
    """Interval ``[a, b]``, drift bound ``epsilon`` and scaling factor ``r``."""

    a: float
    b: float
    epsilon: float
    r: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("need a < b")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.r >= 1:
            raise ValueError("r must be at least 1")

    @property
    def ell(self) -> float:
        return self.b - self.a


# ---------------------------------------------------------------------------
# Walk steps


def _moves(r, p_t, q_t, q_hi):
    """Moves of ``Y`` (bias ``q_t``) and ``Ỹ`` (bias ``q_hi``) for uniforms ``r``."""
    stay = r <= 1.0 - p_t
    up = r <= 1.0 - p_t + (p_t + q_t) / 2
    cross = r <= 1.0 - p_t + (p_t + q_hi) / 2
    dy = np.where(stay, 0, np.where(up, 1, -1))
    dyt = np.where(stay, 0, np.where(cross, 1, -1))
    return dy, dyt


def step_walk(y: int, p_t: float, q_t: float, rng: np.random.Generator) -> int:
    """One step of the lazy walk."""
    _check_probs(p_t, q_t)
    dy, _ = _moves(rng.random(), p_t, q_t, q_t)
    return y + int(dy)


def coupled_step(
    y: int, y_tilde: int, p_t: float, q_t: float, q_max: float, rng: np.random.Generator
) -> tuple[int, int]:
    """One coupled step; ``Y`` up implies ``Ỹ`` up and both stay together."""
    _check_probs(p_t, q_t)
    _check_probs(p_t, q_max)
    if q_t > q_max:
        raise InvalidWalkParamsError(f"q_t={q_t} exceeds q_max={q_max}")
    dy, dyt = _moves(rng.random(), p_t, q_t, q_max)
    return y + int(dy), y_tilde + int(dyt)


class CoupledRun(NamedTuple):
    """Summary of many coupled trajectories."""

    violations: int
    min_gap: int
    y: np.ndarray
    y_tilde: np.ndarray


def run_coupled(
    params: WalkParams, steps: int, reps: int, rng: np.random.Generator, *, check: bool = True
) -> CoupledRun:
    """``reps`` coupled walks for ``steps`` steps, counting ``Ỹ < Y`` events.

    ``params.q_max`` drives ``Ỹ``; it must keep ``(p(t), q_max)`` valid.
    """
    y = np.zeros(reps, dtype=np.int64)
    yt = np.zeros(reps, dtype=np.int64)
    violations = 0
    min_gap = 0
    for t in range(steps):
        p, q = params.at(t) if check else (params.p_schedule(t), params.q_schedule(t))
        if check:
            _check_probs(p, params.q_max)
        dy, dyt = _moves(rng.random(reps), p, q, params.q_max)
        y += dy
        yt += dyt
        gap = yt - y
        bad = int(np.count_nonzero(gap < 0))
        violations += bad
        min_gap = min(min_gap, int(gap.min()))
    return CoupledRun(violations, min_gap, y, yt)


def one_step_moves(p_t: float, q_t: float, q_max: float, draws: int, rng: np.random.Generator):
    """Move counts ``{-1, 0, +1}`` of ``Y``, ``Ỹ`` and of an uncoupled walk.

    Returns three length-3 arrays ordered ``(-1, 0, +1)``; the uncoupled walk
    uses fresh draws with ``(p_t, q_t)``.
    """
    _check_probs(p_t, q_t)
    _check_probs(p_t, q_max)
    dy, dyt = _moves(rng.random(draws), p_t, q_t, q_max)
    free, _ = _moves(rng.random(draws), p_t, q_t, q_t)
    tally = lambda d: np.bincount(d + 1, minlength=3)
    return tally(dy), tally(dyt), tally(free)


# ---------------------------------------------------------------------------
# Tail bounds


def bernstein_tail(t: float, sum_var: float, M: float) -> float:
    """``exp(-(t^2/2) / (sum_var + M t / 3))``."""
    if not t > 0 or sum_var < 0 or not M > 0:
        raise ValueError("need t > 0, sum_var >= 0 and M > 0")
    return math.exp(-(t * t / 2) / (sum_var + M * t / 3))


def walk_scale(p: float, q: float) -> float:
    """``(p - q^2) / (2q) + 2/3``, the scale of the hitting threshold."""
    if not q > 0:
        raise InvalidWalkParamsError("q must be positive")
    return (p - q * q) / (2 * q) + 2 / 3


def hitting_bound(p: float, q: float, T: float) -> float:
    """Bernstein bound on one step: ``exp(-(T/8) / ((p - q^2)/(2q) + 2/3))``."""
    return math.exp(-(T / 8) / walk_scale(p, q))


def hypothesis_threshold(p: float, q: float, n: int, log_base: str = "natural") -> float:
    """Smallest admissible ``T``: ``32 ((p - q^2)/(2q) + 2/3) log n``."""
    return HYPOTHESIS_CONSTANT * walk_scale(p, q) * log_fn(log_base)(n)


def hypothesis_satisfied(p: float, q: float, T: float, n: int, log_base: str = "natural") -> bool:
    return T >= hypothesis_threshold(p, q, n, log_base)


def hitting_window(T: int, q_max: float, horizon: int) -> int:
    """Number of steps watched: ``min(floor(T / (2 q)), horizon)``."""
    return min(math.floor(T / (2 * q_max)), horizon)


class HitReport(NamedTuple):
    hits: int
    reps: int
    steps: int

    @property
    def fraction(self) -> float:
        return self.hits / self.reps

    @property
    def sigma(self) -> float:
        """Binomial standard error of :attr:`fraction`."""
        f = self.fraction
        return math.sqrt(f * (1 - f) / self.reps)


def hitting_time_monte_carlo(
    params: WalkParams, T: int, reps: int, rng: np.random.Generator, *, chunk: int = 100_000
) -> HitReport:
    """Fraction of walks reaching ``T`` within :func:`hitting_window` steps."""
    if T < 1:
        raise ValueError("T must be at least 1")
    steps = hitting_window(T, params.q_max, params.horizon)
    hits = 0
    done = 0
    while done < reps:
        m = min(chunk, reps - done)
        y = np.zeros(m, dtype=np.int64)
        reached = np.zeros(m, dtype=bool)
        for t in range(steps):
            p, q = params.at(t)
            dy, _ = _moves(rng.random(m), p, q, q)
            y += dy
            reached |= y >= T
        hits += int(reached.sum())
        done += m
    return HitReport(hits, reps, steps)


# ---------------------------------------------------------------------------
# Drift theorem


class DriftCheck(NamedTuple):
    """Condition (iii) outcome and the bound ``exp(-eps ell / (132 r^2))``."""

    lower_ok: bool
    upper_ok: bool
    exponent: float

    @property
    def condition_iii(self) -> bool:
        return self.lower_ok and self.upper_ok

    @property
    def bound(self) -> float:
        return math.exp(self.exponent)


def oliveto_witt_check(inputs: DriftTheoremInputs, log_base: str = "natural") -> DriftCheck:
    """Evaluate ``1 <= r^2 <= eps ell / (132 log(r / eps))`` and the bound scale.

    Conditions on the drift and on jump sizes concern the process itself
    and are left to the caller (see :func:`jump_condition_table`).  When
    ``log(r / eps) <= 0`` the upper inequality is reported false.
    """
    r2 = inputs.r ** 2
    el = inputs.epsilon * inputs.ell
    lg = log_fn(log_base)(inputs.r / inputs.epsilon)
    upper = lg > 0 and r2 <= el / (OW_CONSTANT * lg)
    return DriftCheck(r2 >= 1, bool(upper), -el / (OW_CONSTANT * r2))


def undecided_band_inputs(n: int, log_base: str = "natural", a: float = 0.0) -> DriftTheoremInputs:
    """Inputs used for the undecided count: ``ell = 20 * 132 sqrt(n log n)``,
    ``eps = sqrt(log n / n)``, ``r = sqrt(5)``.
    """
    log = log_fn(log_base)
    ell = 20 * OW_CONSTANT * math.sqrt(n * log(n))
    return DriftTheoremInputs(a, a + ell, math.sqrt(log(n) / n), math.sqrt(5))


def jump_condition_table(increments, r: float, jmax: int = 10):
    """Empirical ``P(|ΔX| >= j r)`` against ``e^{-j}`` for ``j = 0..jmax``.

    Returns a list of ``(j, frequency, limit, ok)``.
    """
    d = np.abs(np.asarray(increments, dtype=float))
    if d.size == 0:
        raise ValueError("no increments")
    out = []
    for j in range(jmax + 1):
        f = float(np.mean(d >= j * r))
        out.append((j, f, math.exp(-j), f <= math.exp(-j)))
    return out


# ---------------------------------------------------------------------------
# USD schedules


def opinion_step(c: Configuration, i: int) -> tuple[float, float]:
    """``(p, q)`` of ``x_i`` at ``c``: ``p = P(+1) + P(-1)``, ``q = P(+1) - P(-1)``."""
    n, u, x = c.n, c.undecided, c.x(i)
    den = n * (n - 1)
    up, down = 2 * x * u / den, 2 * x * (n - u - x) / den
    return up + down, up - down


def delta_step(c: Configuration, i: int, j: int) -> tuple[float, float]:
    """``(p, q)`` of ``x_i - x_j`` at ``c``."""
    n, u = c.n, c.undecided
    xi, xj = c.x(i), c.x(j)
    rest = n - u - xi - xj
    den = n * (n - 1)
    up = (2 * xi * u + 2 * xj * rest) / den
    down = (2 * xj * u + 2 * xi * rest) / den
    return up + down, up - down


def schedule_from_configs(
    times, configs, step: Callable[[Configuration], tuple[float, float]], horizon: Optional[int] = None
) -> WalkParams:
    """Piecewise-constant schedule replaying ``step`` along recorded configurations.

    ``times`` are the interaction indices of ``configs``; between two records
    the earlier one applies.
    """
    times = np.asarray(times, dtype=np.int64)
    if times.size == 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be non-empty and strictly increasing")
    pq = np.array([step(c) for c in configs], dtype=float)
    ps, qs = pq[:, 0], pq[:, 1]

    def at(values):
        return lambda t: float(values[max(0, np.searchsorted(times, t, side="right") - 1)])

    q_max = max(float(qs.max()), np.finfo(float).tiny)
    p_max = min(1.0, max(float(ps.max()), q_max))
    horizon = int(times[-1]) + 1 if horizon is None else horizon
    return WalkParams(at(ps), at(qs), p_max, q_max, horizon)


def configs_from_result(result) -> list[Configuration]:
    """Configurations of a full-count :class:`~usdlab.engine.TrajectoryResult`."""
    if not result.full_counts:
        raise ValueError("trajectory was recorded without full counts")
    return [Configuration(s.counts, s.u) for s in result.snapshots]

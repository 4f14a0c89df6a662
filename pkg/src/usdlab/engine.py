"""Trajectory simulation of USD on the clique.

Two engines share one compiled kernel:

* the count-level engine keeps only ``(x_1, ..., x_k, u)`` and picks the
  two agents' categories directly, optionally jumping over runs of no-op
  interactions with one geometric draw;
* the agent-level engine keeps an explicit length-``n`` state array and is
  meant for cross-validation only.

Both are deterministic functions of a 64-bit seed.  Pure-Python reference
versions of single steps (:func:`step_counts`, :func:`skip_noops`) take a
:class:`numpy.random.Generator` and serve as an independent check of the
kernels.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from .config import MAX_BUDGET, ExperimentSpec, build_initial_config
from .core import (
    BothUndecided,
    Configuration,
    CrossOpinion,
    EventKind,
    Recruit,
    SameOpinion,
    is_absorbing,
)
from .errors import (
    DegeneratePopulationError,
    InfeasibleSpecError,
    InfiniteSkipError,
    InvalidStateError,
)

#: Above this many categories (k + 1) the kernels use Fenwick trees
#: instead of linear scans.
TREE_THRESHOLD = 100

#: Largest population the kernels accept (two 32-bit draws per step).
MAX_N = 2**31 - 1

#: Largest population for the agent-level engine.
MAX_AGENT_N = 10**6

#: Up to this many opinions snapshots carry full counts by default.
FULL_COUNTS_MAX_K = 32

CSV_HEADER = ("interaction", "parallel_time", "u", "x1", "xmax", "xmin", "argmax", "max_delta")

_SKIP_MODES = {"never": K.SKIP_NEVER, "always": K.SKIP_ALWAYS, "auto": K.SKIP_AUTO}
_STOP_KINDS = {
    "x_ge": K.STOP_X_GE,
    "x_le": K.STOP_X_LE,
    "u_ge": K.STOP_U_GE,
    "delta_ge": K.STOP_DELTA_GE,
    "growth": K.STOP_GROWTH,
}

_M64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def replicate_seed(master: int, r: int) -> int:
    """Seed of replicate ``r``: ``splitmix64(splitmix64(master) ^ r)``."""
    return _splitmix64(_splitmix64(master & _M64) ^ (r & _M64))


# ---------------------------------------------------------------------------
# Types


class Predicate(NamedTuple):
    """A stopping predicate evaluated after every productive interaction.

    ``kind`` is one of ``x_ge`` / ``x_le`` (opinion ``index`` crosses
    ``threshold``), ``u_ge``, ``delta_ge`` (max pairwise difference) or
    ``growth`` (first ``x_index <= threshold``, then ``x_index >= upper``).
    """

    kind: str
    threshold: int
    index: int = 1
    upper: int = 0


@dataclass(frozen=True)
class StopCondition:
    """When a trajectory ends.

    Attributes:
        max_interactions: budget; ``None`` means ``2^63 - 1``.
        stop_on_absorbing: end at the first absorbing configuration.  When
            false the clock keeps running to the budget.
        stop_when: optional :class:`Predicate`.
    """

    max_interactions: Optional[int] = None
    stop_on_absorbing: bool = True
    stop_when: Optional[Predicate] = None

    def __post_init__(self):
        if self.max_interactions is None and not self.stop_on_absorbing and self.stop_when is None:
            raise ValueError("StopCondition needs at least one active rule")
        if self.max_interactions is not None and not 0 <= self.max_interactions <= MAX_BUDGET:
            raise ValueError(f"budget must lie in [0, 2^63-1] (got {self.max_interactions})")
        if self.stop_when is not None and self.stop_when.kind not in _STOP_KINDS:
            raise ValueError(f"unknown predicate kind {self.stop_when.kind!r}")

    @property
    def budget(self) -> int:
        return MAX_BUDGET if self.max_interactions is None else self.max_interactions


class Snapshot(NamedTuple):
    """Instantaneous summary of the configuration at one interaction index.

    ``argmax`` is 1-based; ``counts`` holds all ``x_i`` in full-count mode
    and is ``None`` otherwise.
    """

    interaction: int
    u: int
    x1: int
    xmax: int
    xmin: int
    argmax: int
    max_delta: int
    counts: Optional[tuple[int, ...]] = None


@dataclass
class TrajectoryResult:
    """Outcome of one run.

    ``stabilization_interactions`` is the first interaction index with an
    absorbing configuration, or ``None`` if none was reached.  ``rows`` is
    the raw snapshot table: columns ``interaction, u, x1, xmax, xmin,
    argmax, max_delta, majority_delta`` followed by ``x_1..x_k`` in
    full-count mode.
    """

    n: int
    k: int
    seed: int
    stabilization_interactions: Optional[int]
    winner: Optional[int]
    exhausted: bool
    end_interaction: int
    final: Configuration
    rows: np.ndarray = field(repr=False)
    hit_interaction: Optional[int] = None
    stage_interaction: Optional[int] = None
    extinction_interaction: Optional[int] = None

    @property
    def parallel_time(self) -> Optional[float]:
        if self.stabilization_interactions is None:
            return None
        return self.stabilization_interactions / self.n

    @property
    def full_counts(self) -> bool:
        return self.rows.shape[1] > K.N_SUMMARY_COLS

    @property
    def snapshots(self) -> list[Snapshot]:
        full = self.full_counts
        out = []
        for row in self.rows.tolist():
            counts = tuple(row[K.N_SUMMARY_COLS:]) if full else None
            out.append(Snapshot(*row[:7], counts))
        return out

    def series(self, column: str) -> np.ndarray:
        """One snapshot column by name (see the class docstring)."""
        names = ("interaction", "u", "x1", "xmax", "xmin", "argmax", "max_delta", "majority_delta")
        if column in names:
            return self.rows[:, names.index(column)]
        if column.startswith("x") and self.full_counts:
            i = int(column[1:])
            if 1 <= i <= self.k:
                return self.rows[:, K.N_SUMMARY_COLS + i - 1]
        raise KeyError(column)


# ---------------------------------------------------------------------------
# Simulation entry points


def _skip_code(skipping: Union[bool, str]) -> int:
    if skipping is True:
        return K.SKIP_AUTO
    if skipping is False:
        return K.SKIP_NEVER
    try:
        return _SKIP_MODES[skipping]
    except KeyError:
        raise ValueError(f"skipping must be a bool or one of {sorted(_SKIP_MODES)}") from None


def _use_tree(k: int) -> bool:
    return k + 1 > TREE_THRESHOLD


def _counts_array(c: Configuration) -> np.ndarray:
    if c.n > MAX_N:
        raise InvalidStateError(f"n={c.n} exceeds the engine limit {MAX_N}")
    return np.asarray(c.as_tuple(), dtype=np.int64)


def _predicate_args(pred: Optional[Predicate], k: int) -> tuple[int, int, int, int]:
    if pred is None:
        return K.STOP_NONE, 0, 0, 0
    if pred.kind in ("x_ge", "x_le", "growth") and not 1 <= pred.index <= k:
        raise InvalidStateError(f"opinion index {pred.index} outside [1, {k}]")
    return _STOP_KINDS[pred.kind], pred.index - 1, int(pred.threshold), int(pred.upper)


def simulate(
    config: Configuration,
    seed: int,
    stop: Optional[StopCondition] = None,
    *,
    stride: Optional[int] = None,
    skipping: Union[bool, str] = True,
    record: bool = True,
    full_counts: Optional[bool] = None,
    agent_level: bool = False,
) -> TrajectoryResult:
    """Simulate from ``config`` with the given seed.

    Args:
        config: start configuration.
        seed: 64-bit seed of the trajectory.
        stop: stopping rule; defaults to stopping at absorption.
        stride: snapshot interval in interactions (default ``n``).
        skipping: ``True``/``"auto"`` skips no-ops while they are the
            majority of pairs, ``"always"`` / ``"never"`` force a path,
            ``False`` is ``"never"``.  Ignored by the agent-level engine.
        record: keep snapshots.
        full_counts: record every ``x_i``; default for ``k <= 32``.
        agent_level: use the explicit agent-array engine.
    """
    stop = stop or StopCondition()
    n, k = config.n, config.k
    if agent_level and n > MAX_AGENT_N:
        raise InfeasibleSpecError(f"agent-level engine is limited to n <= {MAX_AGENT_N}")
    stride = n if stride is None else int(stride)
    if stride < 1:
        raise ValueError("stride must be positive")
    if full_counts is None:
        full_counts = k <= FULL_COUNTS_MAX_K
    kind, idx, a, b = _predicate_args(stop.stop_when, k)
    seed = int(seed) & _M64
    t, status, hit, stage, extinct, absorb, rows, cnt = K.simulate(
        _counts_array(config), n, k, np.uint64(seed), stop.budget, stride,
        _skip_code(skipping), stop.stop_on_absorbing, kind, idx, a, b,
        record, full_counts, agent_level, _use_tree(k),
    )
    final = Configuration(tuple(int(x) for x in cnt[:k]), int(cnt[k]))
    absorbed = absorb >= 0
    return TrajectoryResult(
        n=n,
        k=k,
        seed=seed,
        stabilization_interactions=int(absorb) if absorbed else None,
        winner=_winner(final) if absorbed else None,
        exhausted=status == K.EXHAUSTED and not absorbed,
        end_interaction=int(t),
        final=final,
        rows=rows if record else rows[:0],
        hit_interaction=int(hit) if hit >= 0 else None,
        stage_interaction=int(stage) if stage >= 0 else None,
        extinction_interaction=int(extinct) if extinct >= 0 else None,
    )


def _winner(c: Configuration) -> Optional[int]:
    for i, x in enumerate(c.counts):
        if x == c.n:
            return i + 1
    return None


def _default_stop(spec: ExperimentSpec, stop: Optional[StopCondition]) -> StopCondition:
    if stop is not None:
        return stop
    return StopCondition(max_interactions=spec.budget)


def run_trajectory(
    spec: ExperimentSpec,
    stop: Optional[StopCondition] = None,
    seed: Optional[int] = None,
    *,
    full_counts: Optional[bool] = None,
    record: bool = True,
) -> TrajectoryResult:
    """Count-level run from :func:`build_initial_config` of ``spec``.

    ``seed`` overrides ``spec.seed``; the budget defaults to ``spec.budget``.
    """
    return simulate(
        build_initial_config(spec.n, spec.k, spec.bias),
        spec.seed if seed is None else seed,
        _default_stop(spec, stop),
        stride=spec.resolved_stride,
        skipping=spec.skipping,
        record=record,
        full_counts=full_counts,
    )


def run_agent_reference(
    spec: ExperimentSpec,
    stop: Optional[StopCondition] = None,
    seed: Optional[int] = None,
    *,
    full_counts: Optional[bool] = None,
    record: bool = True,
) -> TrajectoryResult:
    """Agent-level run; same contract as :func:`run_trajectory`."""
    return simulate(
        build_initial_config(spec.n, spec.k, spec.bias),
        spec.seed if seed is None else seed,
        _default_stop(spec, stop),
        stride=spec.resolved_stride,
        record=record,
        full_counts=full_counts,
        agent_level=True,
    )


def run_replicates(
    spec: ExperimentSpec,
    stop: Optional[StopCondition] = None,
    *,
    agent_level: bool = False,
    record: bool = True,
) -> list[TrajectoryResult]:
    """``spec.reps`` runs seeded by :func:`replicate_seed` of ``spec.seed``."""
    runner = run_agent_reference if agent_level else run_trajectory
    return [
        runner(spec, stop, replicate_seed(spec.seed, r), record=record)
        for r in range(spec.reps)
    ]


def batch_outcomes(
    config: Configuration,
    master_seed: int,
    reps: int,
    *,
    budget: Optional[int] = None,
    skipping: Union[bool, str] = True,
    agent_level: bool = False,
    first_rep: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Absorption times and outcomes of many replicates, computed in one call.

    Replicate ``r`` uses seed ``replicate_seed(master_seed, r)``.

    Returns:
        ``(times, outcomes)``: interaction counts (``-1`` when the budget ran
        out) and winners (``1..k``; ``0`` for all-undecided; ``-1`` when the
        budget ran out).
    """
    if agent_level and config.n > MAX_AGENT_N:
        raise InfeasibleSpecError(f"agent-level engine is limited to n <= {MAX_AGENT_N}")
    budget = MAX_BUDGET if budget is None else budget
    return K.run_batch(
        _counts_array(config), config.n, config.k, np.uint64(master_seed & _M64),
        first_rep, reps, budget, _skip_code(skipping), agent_level, _use_tree(config.k),
    )


# ---------------------------------------------------------------------------
# Python reference steps


def _categories(c: Configuration) -> np.ndarray:
    return np.asarray(c.as_tuple(), dtype=np.int64)


def _event_from_categories(a: int, b: int, k: int) -> EventKind:
    if a == k and b == k:
        return BothUndecided()
    if a == k:
        return Recruit(b + 1)
    if b == k:
        return Recruit(a + 1)
    if a == b:
        return SameOpinion(a + 1)
    return CrossOpinion(a + 1, b + 1)


def _apply_categories(c: Configuration, a: int, b: int) -> Configuration:
    k = c.k
    if a == b:
        return c
    x = list(c.counts)
    u = c.undecided
    if a == k or b == k:
        x[b if a == k else a] += 1
        u -= 1
    else:
        x[a] -= 1
        x[b] -= 1
        u += 2
    return Configuration(tuple(x), u)


def step_counts(c: Configuration, rng: np.random.Generator) -> tuple[Configuration, EventKind]:
    """One scheduler step: draw two distinct agents and apply the rule.

    The first agent's category is drawn proportionally to the counts, that
    category is decremented, and the second agent comes from the remaining
    ``n - 1``.

    Raises:
        DegeneratePopulationError: if ``n < 2``.
    """
    if c.n < 2:
        raise DegeneratePopulationError(f"n={c.n}: no pair of agents to schedule")
    cats = _categories(c)
    a = int(np.searchsorted(np.cumsum(cats), rng.integers(c.n), side="right"))
    cats[a] -= 1
    b = int(np.searchsorted(np.cumsum(cats), rng.integers(c.n - 1), side="right"))
    return _apply_categories(c, a, b), _event_from_categories(a, b, c.k)


def productive_probability(c: Configuration) -> float:
    """Probability that one step changes the counts."""
    if c.n < 2:
        raise DegeneratePopulationError(f"n={c.n}: no pair of agents to schedule")
    cats = _categories(c)
    nn1 = c.n * (c.n - 1)
    return (nn1 - int((cats * (cats - 1)).sum())) / nn1


def skip_noops(c: Configuration, rng: np.random.Generator) -> int:
    """Number of no-op steps before the next productive one (geometric).

    Raises:
        InfiniteSkipError: if ``c`` is absorbing.
    """
    if c.n >= 2 and is_absorbing(c):
        raise InfiniteSkipError(f"{c} is absorbing; no productive step exists")
    p = productive_probability(c)
    if p <= 0.0:
        raise InfiniteSkipError(f"{c} has no productive pair")
    return int(rng.geometric(p)) - 1


def productive_step(c: Configuration, rng: np.random.Generator) -> tuple[Configuration, EventKind]:
    """One step conditioned on changing the counts.

    The first agent's category ``a`` has weight ``x_a (n - x_a)``; the second
    is uniform over the ``n - x_a`` agents in other categories.
    """
    if is_absorbing(c):
        raise InfiniteSkipError(f"{c} is absorbing; no productive step exists")
    cats = _categories(c)
    w = cats * (c.n - cats)
    a = int(np.searchsorted(np.cumsum(w), rng.integers(int(w.sum())), side="right"))
    others = cats.copy()
    others[a] = 0
    b = int(np.searchsorted(np.cumsum(others), rng.integers(c.n - cats[a]), side="right"))
    return _apply_categories(c, a, b), _event_from_categories(a, b, c.k)


def one_step_pairs(c: Configuration, seed: int, samples: int) -> np.ndarray:
    """Kernel histogram of (first, second) categories over independent steps.

    Entry ``[a, b]`` counts draws with first agent in category ``a`` and
    second in ``b``; category ``k`` is undecided.
    """
    if c.n < 2:
        raise DegeneratePopulationError(f"n={c.n}: no pair of agents to schedule")
    return K.one_step_histogram(_counts_array(c), c.n, c.k, np.uint64(seed & _M64), samples, _use_tree(c.k))


def productive_pairs(c: Configuration, seed: int, samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Kernel skip lengths and productive category pairs (see :func:`one_step_pairs`)."""
    if is_absorbing(c):
        raise InfiniteSkipError(f"{c} is absorbing; no productive step exists")
    return K.productive_histogram(_counts_array(c), c.n, c.k, np.uint64(seed & _M64), samples, _use_tree(c.k))


# ---------------------------------------------------------------------------
# CSV


def csv_header(k: int, full_counts: bool) -> list[str]:
    head = list(CSV_HEADER)
    if full_counts:
        head += [f"x{i}" for i in range(2, k + 1)]
    return head


def write_snapshots_csv(result: TrajectoryResult, target: Union[str, os.PathLike, io.TextIOBase]) -> None:
    """Write snapshots with the header ``interaction,parallel_time,u,x1,...``."""
    full = result.full_counts
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", newline="") as fh:
            _write_csv(result, fh, full)
    else:
        _write_csv(result, target, full)


def _write_csv(result: TrajectoryResult, fh, full: bool) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(csv_header(result.k, full))
    for s in result.snapshots:
        row = [s.interaction, repr(s.interaction / result.n), s.u, s.x1, s.xmax, s.xmin, s.argmax, s.max_delta]
        if full:
            row += list(s.counts[1:])
        w.writerow(row)


def read_snapshots_csv(source: Union[str, os.PathLike, Iterable[str]]) -> list[Snapshot]:
    """Parse a file written by :func:`write_snapshots_csv`."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            return _read_csv(fh)
    return _read_csv(source)


def _read_csv(lines) -> list[Snapshot]:
    reader = csv.reader(lines)
    head = next(reader)
    if tuple(head[: len(CSV_HEADER)]) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {head}")
    full = len(head) > len(CSV_HEADER)
    out = []
    for row in reader:
        v = [int(row[0])] + [int(x) for x in row[2:]]
        counts = (v[2],) + tuple(v[7:]) if full else None
        out.append(Snapshot(*v[:7], counts))
    return out


def snapshots_conserve(snapshots: Sequence[Snapshot], n: int) -> bool:
    """``u + sum(counts) == n`` on every full-count snapshot."""
    return all(s.counts is None or s.u + sum(s.counts) == n for s in snapshots)

"""Configurations, the USD transition rule and exact one-step drifts.

A configuration of the Undecided State Dynamics on the clique is the vector
``(x_1, ..., x_k, u)``: ``x_i`` agents hold opinion ``i`` and ``u`` agents are
undecided.  Opinions are labelled ``1..k`` in every public function; the label
order is fixed by the initial configuration and never re-sorted.

Every probability and drift is available in two arithmetic modes.  With
``exact=True`` the result is a :class:`fractions.Fraction`; otherwise it is a
float.  The scheduler picks an ordered pair of distinct agents uniformly, so
all probabilities share the denominator ``n(n-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence, Union

from .errors import (
    DegeneratePopulationError,
    InfeasibleEventError,
    InvalidStateError,
)

Number = Union[Fraction, float]

#: Agent state for "undecided" in :func:`transition`.
UNDECIDED = None


@dataclass(frozen=True)
class Configuration:
    """Opinion counts plus the undecided count."""

    counts: tuple[int, ...]
    undecided: int = 0

    def __post_init__(self):
        counts = tuple(int(x) for x in self.counts)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "undecided", int(self.undecided))
        if len(counts) < 1:
            raise InvalidStateError("a configuration needs at least one opinion")
        if any(x < 0 for x in counts) or self.undecided < 0:
            raise InvalidStateError(f"negative count in {counts}, u={self.undecided}")
        if self.n < 1:
            raise InvalidStateError("population size must be positive")

    @property
    def n(self) -> int:
        return sum(self.counts) + self.undecided

    @property
    def k(self) -> int:
        return len(self.counts)

    @property
    def decided(self) -> int:
        return self.n - self.undecided

    def x(self, i: int) -> int:
        """Count of opinion ``i`` (1-based)."""
        _check_opinion(i, self.k)
        return self.counts[i - 1]

    def as_tuple(self) -> tuple[int, ...]:
        """``(x_1, ..., x_k, u)``."""
        return self.counts + (self.undecided,)

    @classmethod
    def from_tuple(cls, values: Sequence[int]) -> "Configuration":
        """Inverse of :meth:`as_tuple`; the last entry is ``u``."""
        values = tuple(values)
        if len(values) < 2:
            raise InvalidStateError("need at least (x_1, u)")
        return cls(values[:-1], values[-1])

    def __str__(self):
        return f"({', '.join(map(str, self.counts))} | u={self.undecided})"


def _check_opinion(i: int, k: int) -> None:
    if not isinstance(i, int) or isinstance(i, bool) or not 1 <= i <= k:
        raise InvalidStateError(f"opinion index {i!r} outside [1, {k}]")


# ---------------------------------------------------------------------------
# Event classes


@dataclass(frozen=True)
class SameOpinion:
    i: int


@dataclass(frozen=True)
class CrossOpinion:
    """Two agents with different opinions meet; both become undecided.

    The pair is unordered, so ``CrossOpinion(2, 1) == CrossOpinion(1, 2)``.
    """

    i: int
    j: int

    def __post_init__(self):
        if self.i == self.j:
            raise InvalidStateError("CrossOpinion needs two distinct opinions")
        if self.i > self.j:
            a, b = self.j, self.i
            object.__setattr__(self, "i", a)
            object.__setattr__(self, "j", b)


@dataclass(frozen=True)
class Recruit:
    """An opinion-``i`` agent meets an undecided agent and recruits it."""

    i: int


@dataclass(frozen=True)
class BothUndecided:
    pass


EventKind = Union[SameOpinion, CrossOpinion, Recruit, BothUndecided]


def transition(s1: Optional[int], s2: Optional[int], k: int) -> tuple[Optional[int], Optional[int]]:
    """The USD transition function on two agent states.

    States are opinions ``1..k`` or :data:`UNDECIDED` (``None``).
    """
    for s in (s1, s2):
        if s is not UNDECIDED:
            _check_opinion(s, k)
    if s1 is not UNDECIDED and s2 is not UNDECIDED:
        if s1 != s2:
            return UNDECIDED, UNDECIDED
        return s1, s2
    if s1 is not UNDECIDED:
        return s1, s1
    if s2 is not UNDECIDED:
        return s2, s2
    return s1, s2


def event_for_states(s1: Optional[int], s2: Optional[int]) -> EventKind:
    """Classify the interaction of two agent states as an :data:`EventKind`."""
    if s1 is UNDECIDED and s2 is UNDECIDED:
        return BothUndecided()
    if s1 is UNDECIDED:
        return Recruit(s2)
    if s2 is UNDECIDED:
        return Recruit(s1)
    if s1 == s2:
        return SameOpinion(s1)
    return CrossOpinion(s1, s2)


def event_weights(c: Configuration) -> list[tuple[EventKind, int]]:
    """Integer weights (number of ordered agent pairs) for every event class.

    Weights sum to ``n(n-1)``.  Zero-weight events are omitted.
    """
    x = c.counts
    u = c.undecided
    out: list[tuple[EventKind, int]] = []
    for a in range(c.k):
        if x[a] > 1:
            out.append((SameOpinion(a + 1), x[a] * (x[a] - 1)))
    for a in range(c.k):
        for b in range(a + 1, c.k):
            w = 2 * x[a] * x[b]
            if w:
                out.append((CrossOpinion(a + 1, b + 1), w))
    for a in range(c.k):
        w = 2 * x[a] * u
        if w:
            out.append((Recruit(a + 1), w))
    if u > 1:
        out.append((BothUndecided(), u * (u - 1)))
    return out


def event_probabilities(c: Configuration, exact: bool = False) -> list[tuple[EventKind, Number]]:
    """Probability of each event class for one scheduler step.

    Raises:
        DegeneratePopulationError: if ``n < 2``.
    """
    n = c.n
    if n < 2:
        raise DegeneratePopulationError(f"n={n}: no pair of agents to schedule")
    total = n * (n - 1)
    if exact:
        return [(e, Fraction(w, total)) for e, w in event_weights(c)]
    return [(e, w / total) for e, w in event_weights(c)]


def is_feasible(c: Configuration, e: EventKind) -> bool:
    x, u = c.counts, c.undecided
    if isinstance(e, SameOpinion):
        return 1 <= e.i <= c.k and x[e.i - 1] >= 2
    if isinstance(e, CrossOpinion):
        return 1 <= e.i and e.j <= c.k and x[e.i - 1] >= 1 and x[e.j - 1] >= 1
    if isinstance(e, Recruit):
        return 1 <= e.i <= c.k and x[e.i - 1] >= 1 and u >= 1
    if isinstance(e, BothUndecided):
        return u >= 2
    raise TypeError(f"not an event: {e!r}")


def apply_event(c: Configuration, e: EventKind) -> Configuration:
    """Configuration after event ``e``.

    Raises:
        InfeasibleEventError: if ``c`` lacks the agents ``e`` needs.
    """
    if not is_feasible(c, e):
        raise InfeasibleEventError(f"{e} is infeasible in {c}")
    if isinstance(e, CrossOpinion):
        x = list(c.counts)
        x[e.i - 1] -= 1
        x[e.j - 1] -= 1
        return Configuration(tuple(x), c.undecided + 2)
    if isinstance(e, Recruit):
        x = list(c.counts)
        x[e.i - 1] += 1
        return Configuration(tuple(x), c.undecided - 1)
    return c


def is_absorbing(c: Configuration) -> bool:
    """True for monochromatic and all-undecided configurations."""
    n = c.n
    return c.undecided == n or any(x == n for x in c.counts)


def winner(c: Configuration) -> Optional[int]:
    """Opinion holding every agent, or ``None``."""
    for a, x in enumerate(c.counts):
        if x == c.n:
            return a + 1
    return None


# ---------------------------------------------------------------------------
# Drifts


class Drift(NamedTuple):
    """Expected one-step change with its up/down probabilities."""

    mean: Number
    p_up: Number
    p_down: Number


def _denominator(c: Configuration) -> int:
    n = c.n
    if n < 2:
        raise DegeneratePopulationError(f"n={n}: no pair of agents to schedule")
    return n * (n - 1)


def _div(num: int, den: int, exact: bool) -> Number:
    return Fraction(num, den) if exact else num / den


def expected_undecided_drift(c: Configuration, exact: bool = False) -> Number:
    """``E[u(t+1) - u(t) | x(t) = c]`` with the finite-n ``n(n-1)`` denominator.

    ``u`` grows by 2 on a cross-opinion meeting and shrinks by 1 on a recruit.
    """
    den = _denominator(c)
    n, u = c.n, c.undecided
    num = 2 * sum(x * (n - u - x) for x in c.counts) - 2 * u * (n - u)
    return _div(num, den, exact)


def expected_opinion_drift(c: Configuration, i: int, exact: bool = False) -> Drift:
    """Drift of ``x_i``: ``2 x_i (2u - n + x_i) / (n(n-1))``.

    ``x_i`` gains one agent when it recruits an undecided agent and loses one
    when it meets any other opinion.
    """
    _check_opinion(i, c.k)
    den = _denominator(c)
    n, u, xi = c.n, c.undecided, c.counts[i - 1]
    up = 2 * xi * u
    down = 2 * xi * (n - u - xi)
    return Drift(_div(up - down, den, exact), _div(up, den, exact), _div(down, den, exact))


def expected_delta_drift(c: Configuration, i: int, j: int, exact: bool = False) -> Drift:
    """Drift of ``x_i - x_j``: ``2 (x_i - x_j)(2u - n + x_i + x_j) / (n(n-1))``.

    The difference grows when ``i`` recruits or when ``j`` meets a third
    opinion, and shrinks symmetrically.  A cross meeting between ``i`` and
    ``j`` themselves leaves it unchanged.
    """
    _check_opinion(i, c.k)
    _check_opinion(j, c.k)
    if i == j:
        raise InvalidStateError("delta drift needs two distinct opinions")
    den = _denominator(c)
    n, u = c.n, c.undecided
    xi, xj = c.counts[i - 1], c.counts[j - 1]
    rest = n - u - xi - xj
    up = 2 * xi * u + 2 * xj * rest
    down = 2 * xj * u + 2 * xi * rest
    return Drift(_div(up - down, den, exact), _div(up, den, exact), _div(down, den, exact))


def max_pairwise_delta(c: Configuration) -> int:
    """``max_i x_i - min_j x_j`` (0 when k = 1)."""
    return max(c.counts) - min(c.counts)


def majority_delta(c: Configuration) -> int:
    """``max_{j >= 2} (x_1 - x_j)``, keyed to the initial labels (0 when k = 1)."""
    if c.k == 1:
        return 0
    return c.counts[0] - min(c.counts[1:])


def undecided_threshold(c: Configuration, i: int) -> Fraction:
    """Value of ``u`` above which ``x_i`` drifts up: ``(n - x_i) / 2``."""
    return Fraction(c.n - c.x(i), 2)

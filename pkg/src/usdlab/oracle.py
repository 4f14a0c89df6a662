"""Exact Markov-chain analysis of USD on small populations.

States are all ``(x_1, ..., x_k, u)`` with sum ``n``, listed in descending
lexicographic order, so ``(n, 0, ..., 0)`` comes first and the all-undecided
state last.  :func:`rank` and :func:`unrank` convert between a state and its
position in closed form.

Absorption is solved exactly over the rationals with sympy domain matrices.
Rational fill-in makes that cost grow steeply (tens of seconds at ~450
transient states), so above :data:`EXACT_STATE_LIMIT` transient states a
floating sparse LU solve is used instead and its residual is reported.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Optional, Sequence, Union

import numpy as np

from .core import Configuration, apply_event, event_probabilities, is_absorbing
from .errors import ChainTooLargeError, InvalidStateError, SingularChainError

DEFAULT_STATE_CAP = 200_000
EXACT_STATE_LIMIT = 300
DEFAULT_MARGINAL_CAP = 10_000

Number = Union[Fraction, float]


def state_count(n: int, k: int) -> int:
    """Number of configurations: ``binomial(n + k, k)``."""
    return comb(n + k, k)


def rank(values: Sequence[int]) -> int:
    """Position of ``(x_1, ..., x_k, u)`` in descending lexicographic order.

    At each position, the states sharing the prefix but holding a larger
    value there number ``C(rem - v - 1 + m, m)``, where ``rem`` is the mass
    left, ``v`` the value and ``m`` the count of later positions.
    """
    values = tuple(values)
    rem = sum(values)
    m = len(values) - 1
    r = 0
    for v in values[:-1]:
        if v < rem:
            r += comb(rem - v - 1 + m, m)
        rem -= v
        m -= 1
    return r


def unrank(r: int, n: int, k: int) -> tuple[int, ...]:
    """Inverse of :func:`rank` for states of ``n`` agents and ``k`` opinions."""
    if not 0 <= r < state_count(n, k):
        raise IndexError(f"rank {r} outside [0, {state_count(n, k)})")
    out = []
    rem = n
    for m in range(k, 0, -1):
        # largest values come first; skip blocks until r falls inside one
        v = rem
        while True:
            block = comb(rem - v + m - 1, m - 1)
            if r < block:
                break
            r -= block
            v -= 1
        out.append(v)
        rem -= v
    out.append(rem)
    return tuple(out)


@dataclass
class ExactChain:
    """Enumerated state space with optional sparse exact transitions.

    ``transitions[i]`` maps target index to probability; ``None`` until
    :func:`build_transitions` runs.
    """

    n: int
    k: int
    states: list[Configuration]
    absorbing: list[int]
    transitions: Optional[list[dict[int, Fraction]]] = field(default=None, repr=False)

    def __len__(self):
        return len(self.states)

    def index(self, c: Union[Configuration, Sequence[int]]) -> int:
        values = c.as_tuple() if isinstance(c, Configuration) else tuple(c)
        if len(values) != self.k + 1 or sum(values) != self.n or min(values) < 0:
            raise InvalidStateError(f"{values} is not a state of n={self.n}, k={self.k}")
        return rank(values)

    def row(self, i: int) -> dict[int, Fraction]:
        if self.transitions is not None:
            return self.transitions[i]
        return transition_row(self.states[i])


def enumerate_states(n: int, k: int, cap: int = DEFAULT_STATE_CAP) -> ExactChain:
    """All configurations of ``n`` agents over ``k`` opinions.

    Raises:
        ChainTooLargeError: if there are more than ``cap`` states.
    """
    if n < 1 or k < 1:
        raise InvalidStateError(f"need n >= 1 and k >= 1 (got n={n}, k={k})")
    total = state_count(n, k)
    if total > cap:
        raise ChainTooLargeError(f"n={n}, k={k} has {total} states, above the cap of {cap}")
    states = [Configuration.from_tuple(v) for v in _compositions(n, k + 1)]
    absorbing = [i for i, c in enumerate(states) if is_absorbing(c)]
    return ExactChain(n, k, states, absorbing)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for v in range(total, -1, -1):
        for rest in _compositions(total - v, parts - 1):
            yield (v,) + rest


def transition_row(c: Configuration) -> dict[int, Fraction]:
    """Exact one-step distribution from ``c`` keyed by state rank."""
    if c.n < 2:
        return {rank(c.as_tuple()): Fraction(1)}
    row: dict[int, Fraction] = {}
    for e, p in event_probabilities(c, exact=True):
        j = rank(apply_event(c, e).as_tuple())
        row[j] = row.get(j, Fraction(0)) + p
    return row


def build_transitions(chain: ExactChain) -> ExactChain:
    """Fill ``chain.transitions`` with exact rational rows."""
    chain.transitions = [transition_row(c) for c in chain.states]
    return chain


@dataclass
class AbsorptionResult:
    """Expected absorption time and absorption law from one start state.

    ``residual`` is the max-norm residual of the floating solve, ``None``
    when the solve was exact.
    """

    start: Configuration
    expected_time: Number
    absorb_probs: dict[Configuration, Number]
    exact: bool
    transient_states: int
    residual: Optional[float] = None


def _reachable(chain: ExactChain, start: int) -> list[int]:
    seen = {start}
    order = [start]
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in chain.row(i):
            if j not in seen:
                seen.add(j)
                order.append(j)
                queue.append(j)
    return order


def _trapped(chain: ExactChain, transient: list[int]) -> list[int]:
    """Transient states from which no absorbing state can be reached."""
    absorbing = set(chain.absorbing)
    preds: dict[int, list[int]] = {}
    for i in transient:
        for j in chain.row(i):
            preds.setdefault(j, []).append(i)
    good = set()
    queue = deque(a for a in absorbing if a in preds)
    while queue:
        j = queue.popleft()
        for i in preds.get(j, ()):
            if i not in good:
                good.add(i)
                queue.append(i)
    return [i for i in transient if i not in good]


def absorption_analysis(
    chain: ExactChain,
    start: Union[Configuration, Sequence[int]],
    exact: Optional[bool] = None,
) -> AbsorptionResult:
    """Solve ``(I - Q) t = 1`` and ``(I - Q) B = R`` on the states reachable from ``start``.

    Args:
        chain: chain from :func:`enumerate_states`.
        start: start configuration.
        exact: force rational (``True``) or floating (``False``) solving.  By
            default the solve is exact up to :data:`EXACT_STATE_LIMIT`
            transient states.

    Raises:
        SingularChainError: if some reachable state cannot be absorbed.
    """
    s = chain.index(start)
    start_c = chain.states[s]
    absorbing = set(chain.absorbing)
    if s in absorbing:
        one = Fraction(1) if exact is not False else 1.0
        return AbsorptionResult(start_c, one * 0, {start_c: one}, exact is not False, 0)
    reach = _reachable(chain, s)
    transient = [i for i in reach if i not in absorbing]
    targets = sorted(i for i in reach if i in absorbing)
    trapped = _trapped(chain, transient)
    if trapped:
        shown = ", ".join(str(chain.states[i]) for i in trapped[:5])
        raise SingularChainError(f"{len(trapped)} transient states cannot be absorbed, e.g. {shown}")
    if exact is None:
        exact = len(transient) <= EXACT_STATE_LIMIT
    pos = {i: p for p, i in enumerate(transient)}
    col = {a: p for p, a in enumerate(targets)}
    solver = _solve_exact if exact else _solve_float
    sol, residual = solver(chain, transient, pos, col)
    row0 = pos[s]
    probs = {chain.states[a]: sol[row0][1 + col[a]] for a in targets}
    return AbsorptionResult(start_c, sol[row0][0], probs, exact, len(transient), residual)


def _system(chain, transient, pos, col):
    """Sparse ``I - Q`` and right-hand side ``[1 | R]`` as dicts of dicts."""
    a: dict[int, dict[int, Fraction]] = {}
    b: dict[int, dict[int, Fraction]] = {}
    for i in transient:
        r = pos[i]
        arow = {r: Fraction(1)}
        brow = {0: Fraction(1)}
        for j, p in chain.row(i).items():
            if j in pos:
                c = pos[j]
                arow[c] = arow.get(c, Fraction(0)) - p
            else:
                brow[1 + col[j]] = brow.get(1 + col[j], Fraction(0)) + p
        a[r] = {c: v for c, v in arow.items() if v != 0}
        b[r] = brow
    return a, b


def _solve_exact(chain, transient, pos, col):
    from sympy import QQ
    from sympy.polys.matrices import DomainMatrix
    from sympy.polys.matrices.exceptions import DMNonInvertibleMatrixError

    a, b = _system(chain, transient, pos, col)
    m = len(transient)
    width = 1 + len(col)
    conv = lambda d: {i: {j: QQ(v.numerator, v.denominator) for j, v in row.items()} for i, row in d.items()}
    A = DomainMatrix(conv(a), (m, m), QQ)
    B = DomainMatrix(conv(b), (m, width), QQ)
    try:
        X = A.lu_solve(B)
    except DMNonInvertibleMatrixError as exc:
        raise SingularChainError("transient block is singular") from exc
    rows = X.to_list()
    return [[Fraction(int(v.numerator), int(v.denominator)) for v in r] for r in rows], None


def _solve_float(chain, transient, pos, col):
    from scipy.sparse import csc_matrix
    from scipy.sparse.linalg import splu

    a, b = _system(chain, transient, pos, col)
    m = len(transient)
    width = 1 + len(col)
    ri, ci, vals = [], [], []
    for i, row in a.items():
        for j, v in row.items():
            ri.append(i)
            ci.append(j)
            vals.append(float(v))
    A = csc_matrix((vals, (ri, ci)), shape=(m, m))
    B = np.zeros((m, width))
    for i, row in b.items():
        for j, v in row.items():
            B[i, j] = float(v)
    try:
        X = splu(A).solve(B)
    except RuntimeError as exc:
        raise SingularChainError("transient block is singular") from exc
    residual = float(np.abs(A @ X - B).max())
    return X.tolist(), residual


def exact_marginal(
    chain: ExactChain,
    start: Union[Configuration, Sequence[int]],
    t: int,
    cap: int = DEFAULT_MARGINAL_CAP,
) -> dict[Configuration, Fraction]:
    """Exact distribution after ``t`` steps from ``start``.

    Raises:
        ValueError: if ``t`` is negative or above ``cap``.
    """
    if not 0 <= t <= cap:
        raise ValueError(f"t={t} outside [0, {cap}]")
    dist = {chain.index(start): Fraction(1)}
    for _ in range(t):
        nxt: dict[int, Fraction] = {}
        for i, p in dist.items():
            for j, q in chain.row(i).items():
                nxt[j] = nxt.get(j, Fraction(0)) + p * q
        dist = nxt
    return {chain.states[i]: p for i, p in sorted(dist.items())}


def expectation(dist: dict[Configuration, Number], f) -> Number:
    """``E[f(C)]`` under a distribution over configurations."""
    return sum((p * f(c) for c, p in dist.items()), Fraction(0))

"""Experiment parameters and the initial configuration they describe."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Optional

from .core import Configuration
from .errors import InfeasibleSpecError

#: Largest interaction budget the engine accepts (int64).
MAX_BUDGET = 2**63 - 1


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: population, opinions, bias and replicate settings.

    ``stride`` defaults to ``n`` (one snapshot per parallel time unit) and
    ``budget`` to :data:`MAX_BUDGET`.  ``skipping`` enables the adaptive
    no-op skipping path.
    """

    n: int
    k: int
    bias: int = 0
    seed: int = 0
    reps: int = 1
    stride: Optional[int] = None
    skipping: bool = True
    budget: Optional[int] = None

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise InfeasibleSpecError(f"need n >= 1 and k >= 1 (got n={self.n}, k={self.k})")
        if self.bias < 0:
            raise InfeasibleSpecError(f"bias must be non-negative (got {self.bias})")
        if self.reps < 1:
            raise InfeasibleSpecError(f"reps must be >= 1 (got {self.reps})")
        if self.stride is not None and self.stride < 1:
            raise InfeasibleSpecError(f"stride must be >= 1 (got {self.stride})")
        if self.budget is not None and not 0 <= self.budget <= MAX_BUDGET:
            raise InfeasibleSpecError(f"budget must lie in [0, 2^63-1] (got {self.budget})")
        if not 0 <= self.seed < 2**64:
            raise InfeasibleSpecError("seed must be a 64-bit unsigned integer")

    @property
    def resolved_stride(self) -> int:
        return self.stride if self.stride is not None else self.n

    @property
    def resolved_budget(self) -> int:
        return self.budget if self.budget is not None else MAX_BUDGET

    def with_(self, **changes) -> "ExperimentSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InfeasibleSpecError(f"unknown experiment keys: {sorted(unknown)}")
        missing = {"n", "k"} - set(data)
        if missing:
            raise InfeasibleSpecError(f"missing experiment keys: {sorted(missing)}")
        return cls(**data)


def build_initial_config(n: int, k: int, bias: int) -> Configuration:
    """Start with ``u = 0``, ``k - 1`` equal minorities and a biased opinion 1.

    Minorities get ``base = (n - bias) // k`` agents each; the remainder of that
    division goes to opinion 1, so the realized bias ``x_1 - x_2`` may exceed
    ``bias`` by up to ``k - 1``.

    Raises:
        InfeasibleSpecError: if every opinion cannot hold at least one agent.
    """
    if k < 1 or n < k:
        raise InfeasibleSpecError(f"cannot place k={k} opinions among n={n} agents")
    if bias < 0 or bias + k > n:
        raise InfeasibleSpecError(f"bias={bias} with k={k} does not fit in n={n}")
    base, rem = divmod(n - bias, k)
    counts = (base + bias + rem,) + (base,) * (k - 1)
    return Configuration(counts, 0)


def realized_bias(c: Configuration) -> int:
    """``x_1 - x_2`` of a configuration (0 when k = 1)."""
    return c.counts[0] - c.counts[1] if c.k > 1 else 0


def log_fn(base: str = "natural"):
    """Logarithm selected by name: ``"natural"`` or ``"two"``."""
    if base == "natural":
        return math.log
    if base == "two":
        return math.log2
    raise ValueError(f"unknown log base {base!r} (use 'natural' or 'two')")


def sqrt_n_log_n(n: int, log_base: str = "natural") -> float:
    return math.sqrt(n * log_fn(log_base)(n))


def default_bias(n: int, log_base: str = "natural") -> int:
    """``ceil(sqrt(n log n))``, the bias used for the reference trajectory run."""
    return math.ceil(sqrt_n_log_n(n, log_base))


def fig1_k(n: int, log_base: str = "natural") -> int:
    """``floor(sqrt(n) / (log n * log log n))``."""
    log = log_fn(log_base)
    return max(1, math.floor(math.sqrt(n) / (log(n) * log(log(n)))))

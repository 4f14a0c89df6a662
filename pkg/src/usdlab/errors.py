"""Exception hierarchy shared by every usdlab module."""


class USDError(Exception):
    """Base class for all usdlab errors."""


class InvalidStateError(USDError, ValueError):
    """An agent state or configuration violates its invariants."""


class DegeneratePopulationError(USDError, ValueError):
    """The population is too small for pairwise interactions (n < 2)."""


class InfeasibleEventError(USDError, ValueError):
    """An event requires agents that the configuration does not have."""


class InfeasibleSpecError(USDError, ValueError):
    """An experiment cannot be set up (e.g. more opinions than agents)."""


class InfiniteSkipError(USDError):
    """No productive interaction can ever happen from this configuration."""


class EmptySamplerError(USDError, ValueError):
    """A weighted sampler was asked to draw with total weight zero."""


class ChainTooLargeError(USDError):
    """The exact state space exceeds the configured cap."""


class SingularChainError(USDError):
    """Some transient states cannot reach an absorbing state."""


class InvalidWalkParamsError(USDError, ValueError):
    """Random-walk step probabilities fall outside [0, 1]."""

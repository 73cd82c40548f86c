# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_nonlin_mdp

from typing import Any, Optional


class NonlinMDPError(Exception):
    """Base class for every error raised by the solver toolkit."""

    pass


class StochasticityError(NonlinMDPError, ValueError):
    """Raised when a transition row does not sum to one."""

    pass


class WeightError(NonlinMDPError, ValueError):
    """Raised when the weight function drops below one."""

    pass


class BoundError(NonlinMDPError, ValueError):
    """Raised when utilities (or stopping rewards) break their weighted bounds."""

    pass


class ParamError(NonlinMDPError, ValueError):
    """Raised for parameters outside their admissible range."""

    pass


class GridError(ParamError):
    """Raised for malformed state or action grids."""

    pass


class MeanShockError(ParamError):
    """Raised when the mean production shock exceeds one."""

    pass


class PresetError(NonlinMDPError, ValueError):
    """Raised when a named preset is unknown or malformed."""

    pass


class DivergenceError(NonlinMDPError):
    """Raised when the nested gamma-tilde sums fail to settle within the cap."""

    pass


class NotConvergedError(NonlinMDPError):
    """Raised when an algorithm needs a converged value function that is not available."""

    pass


class CycleError(NonlinMDPError):
    """Raised when policy improvement revisits a policy without improving."""

    pass


class MonotonicityViolation(NonlinMDPError):
    """Raised when truncated values increase along the K schedule."""

    pass


class TreeTooLargeError(NonlinMDPError):
    """Raised when a history tree exceeds the enumeration budget."""

    pass


class IterationCapError(NonlinMDPError):
    """
    Raised when an iterative loop hits its cap.
    The best iterate reached so far travels with the exception.
    """

    def __init__(self, message: str, best: Optional[Any] = None, iterations: int = 0) -> None:
        super().__init__(message)
        self.best = best
        self.iterations = iterations

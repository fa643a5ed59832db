# src/errors.py
from __future__ import annotations

from typing import Any, Dict, Optional


class BundleKitError(Exception):
    """Base class for every error raised by the solver toolkit."""


class InstanceError(BundleKitError, ValueError):
    """
    A problem instance (or its JSON file) is malformed.

    Example: dimensions of Q, q and x0 disagree, or an unknown field is present.
    """


class EmptyModelError(BundleKitError, ValueError):
    """A cutting-plane model was evaluated without any cut."""

    def __init__(self, message: str = "empty model") -> None:
        super().__init__(message)


class NotPositiveDefiniteError(BundleKitError, ValueError):
    """Cholesky factorisation hit a non-positive pivot."""

    def __init__(self, message: str = "matrix not positive definite") -> None:
        super().__init__(message)


class EigenvalueConvergenceError(BundleKitError, RuntimeError):
    def __init__(self, iterations: int) -> None:
        super().__init__(f"eigenvalue computation did not converge after {iterations} iterations")
        self.iterations = iterations


class LmoError(BundleKitError, RuntimeError):
    """The linear maximization oracle could not return a cut."""


class PreconditionError(BundleKitError, ValueError):
    """An operation was called outside its contract."""


class SubproblemError(BundleKitError, RuntimeError):
    """
    The bundle subproblem could not be solved.

    `state` holds a small dump of the solver state (weights, support, residual)
    so a failing run can be inspected without re-running it.
    """

    def __init__(
        self,
        message: str,
        *,
        state: Optional[Dict[str, Any]] = None,
        iteration: Optional[int] = None,
    ) -> None:
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.state = dict(state or {})
        self.iteration = iteration


class IdentityViolationError(BundleKitError, AssertionError):
    """A primal-dual identity checked at runtime exceeded its contract."""

    def __init__(self, identity: str, residual: float, limit: float) -> None:
        super().__init__(f"identity '{identity}' violated: residual {residual:.3e} > {limit:.1e}")
        self.identity = identity
        self.residual = residual
        self.limit = limit

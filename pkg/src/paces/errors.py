"""Exception hierarchy shared across the package.

The CLI maps these classes onto distinct exit codes: configuration
problems exit 2, infeasible instances exit 3, integrity violations
(stale tables, off-table states, oracle disagreement) exit 4.
"""


class PacesError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(PacesError):
    """Invalid domain value or mismatched model dimensions."""


class ConfigError(PacesError):
    """Configuration input rejected (schema, units, or cross-field rules)."""


class StateSpaceError(ConfigError):
    """Discretized state space exceeds the configured cap."""

    def __init__(self, count: int, cap: int):
        super().__init__(
            f"state explosion: instance enumerates {count} states, cap is {cap}"
        )
        self.count = count
        self.cap = cap


class InfeasibleError(PacesError):
    """No decision trajectory satisfies every constraint.

    ``earliest_dead_slot`` is the first slot at which every branch from the
    initial state has died.  ``lambda_hint_w`` carries the smallest privacy
    bound found feasible by a bisection probe, when one was run; it is a
    diagnostic only.
    """

    def __init__(self, message: str, earliest_dead_slot: int | None = None,
                 lambda_hint_w: float | None = None):
        super().__init__(message)
        self.earliest_dead_slot = earliest_dead_slot
        self.lambda_hint_w = lambda_hint_w


class IntegrityError(PacesError):
    """Artifact inconsistent with the live configuration or table."""

"""Exception hierarchy shared by all aggtrack modules."""

from __future__ import annotations


class AggTrackError(Exception):
    """Base class for every error raised by the package."""


class DimensionMismatch(AggTrackError, ValueError):
    pass


class DisconnectedGraph(AggTrackError, ValueError):
    """Raised when the communication graph has more than one component.

    The offending components are kept on ``components`` (lists of 0-based
    agent indices).
    """

    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        super().__init__(
            f"graph is disconnected: {len(self.components)} components {self.components}"
        )


class InvalidNetwork(AggTrackError, ValueError):
    pass


class NonConvergent(AggTrackError, RuntimeError):
    """Dykstra's algorithm hit its sweep cap (likely empty intersection)."""

    def __init__(self, message, point=None, residual=None):
        super().__init__(message)
        self.point = point
        self.residual = residual


class EmptySample(AggTrackError, ValueError):
    pass


class InfeasibleStart(AggTrackError, ValueError):
    def __init__(self, agents, residuals):
        self.agents = list(agents)
        self.residuals = list(residuals)
        super().__init__(
            "initial point outside X_{i,0} for agents "
            + ", ".join(f"{i} (residual {r:.3e})" for i, r in zip(self.agents, self.residuals))
        )


class OracleFailure(AggTrackError, RuntimeError):
    """A problem callback raised while the algorithm was evaluating it."""


class NoConvergence(AggTrackError, RuntimeError):
    def __init__(self, message, best=None, residual=None, round_index=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.round_index = round_index


class MissingOracle(AggTrackError, ValueError):
    pass


class MissingConstants(AggTrackError, ValueError):
    pass


class InvalidConstants(AggTrackError, ValueError):
    pass


class NoStableDelta(AggTrackError, RuntimeError):
    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve


class NotSchur(AggTrackError, ValueError):
    pass


class InvalidConfig(AggTrackError, ValueError):
    pass


class InvariantViolation(AggTrackError, RuntimeError):
    """A runtime invariant of the simulation failed.

    ``name`` identifies the invariant and ``round_index`` the first round at
    which it was observed.
    """

    def __init__(self, name, round_index, detail=""):
        self.name = name
        self.round_index = round_index
        self.detail = detail
        super().__init__(f"invariant '{name}' violated at round {round_index}: {detail}")

"""Exception types shared across the package.

The CLI maps each of these to a stable exit code (see ``cli.EXIT_CODES``).
"""


class TubeMPCError(Exception):
    """Base class for all package errors."""


class DimensionError(TubeMPCError, ValueError):
    pass


class EmptySetError(TubeMPCError, ValueError):
    """A set operation produced an empty (or unbounded) polytope."""


class VertexCapError(TubeMPCError, ValueError):
    """Vertex enumeration requested above the supported dimension."""


class NonContractiveError(TubeMPCError, ValueError):
    """The closed-loop error matrix A+BK is not Schur stable."""


class ConstraintQualificationError(TubeMPCError, ValueError):
    """Tightened constraint set is empty or has no interior."""


class AssumptionViolation(TubeMPCError):
    """A standing assumption (interior steady state, dissipativity, ...) failed."""


class InfeasibleError(TubeMPCError):
    pass


class InitialInfeasibleError(InfeasibleError):
    """The tube OCP has no admissible nominal state at the initial measurement."""


class MidRunInfeasibleError(InfeasibleError):
    """The tube OCP became infeasible during a closed-loop run.

    ``log`` holds the prefix recorded up to (excluding) ``step``.
    """

    def __init__(self, message, step, log=None):
        super().__init__(message)
        self.step = step
        self.log = log


class DisturbanceError(TubeMPCError, ValueError):
    """A supplied disturbance sample lies outside W."""


class ScenarioError(TubeMPCError, ValueError):
    pass


class SelectorError(TubeMPCError, ValueError):
    """Unknown verification selector, or not enough horizons to judge it."""

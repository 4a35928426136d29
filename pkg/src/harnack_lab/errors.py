"""Exception hierarchy shared by every module of the lab."""


class HarnackLabError(Exception):
    """Base class for all lab errors."""


class GraphError(HarnackLabError):
    pass


class DisconnectedGraph(GraphError):
    pass


class NonpositiveWeight(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class NonpositiveFactor(GraphError):
    pass


class DomainError(HarnackLabError):
    pass


class DisconnectedInterior(DomainError):
    pass


class OverlappingSets(DomainError):
    pass


class IsolatedBoundaryVertex(DomainError):
    pass


class Unreachable(DomainError):
    pass


class Infeasible(DomainError):
    pass


class NoFarPoint(DomainError):
    pass


class NoChain(DomainError):
    pass


class SolverError(HarnackLabError):
    pass


class NoBoundary(SolverError):
    pass


class SolverDivergence(SolverError):
    pass


class BadNesting(HarnackLabError):
    pass


class HypothesisFailed(HarnackLabError):
    pass


class EmptyHalfBall(HarnackLabError):
    pass


class DegenerateDomain(HarnackLabError):
    pass


class EmptyFreeBoundary(HarnackLabError):
    pass


class EmptyCone(HarnackLabError):
    pass


class EmptySphere(HarnackLabError):
    pass


class NoSpecialPoint(HarnackLabError):
    pass


class PatchExceeded(HarnackLabError):
    """A requested ball reaches the artificial frame of a finite patch."""


class BadMesh(HarnackLabError):
    pass


class EmptyInterior(HarnackLabError):
    pass


class ConfigParse(HarnackLabError):
    pass


class MissingCoordinates(HarnackLabError):
    pass

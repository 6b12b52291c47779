"""Exception hierarchy shared by all modules."""


class SmoothDistError(Exception):
    """Base class for library errors."""


class UnboundedPolytope(SmoothDistError):
    pass


class EmptyInterior(SmoothDistError):
    pass


class PointOutside(SmoothDistError):
    pass


class NonPositiveDelta(SmoothDistError, ValueError):
    pass


class NonPositiveLambda(SmoothDistError, ValueError):
    pass


class PointNotInterior(SmoothDistError):
    pass


class DegenerateRegion(SmoothDistError):
    pass


class SolverFailure(SmoothDistError):
    pass


class CoverageFailure(SmoothDistError):
    pass


class OutsidePolytope(SmoothDistError):
    """Query point was detected to lie outside the polytope."""


class EmptyPatchList(SmoothDistError):
    pass


class DomainError(SmoothDistError, ValueError):
    pass

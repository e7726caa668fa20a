"""Exception hierarchy shared by all modules."""


class HDCycleError(Exception):
    """Base class for every error raised by this package."""


class InvalidSpec(HDCycleError, ValueError):
    pass


class InvalidMatrix(HDCycleError, ValueError):
    pass


class OutOfDomain(HDCycleError, ValueError):
    pass


class AtBreakpoint(HDCycleError, ValueError):
    pass


class LeftNeighborhood(HDCycleError):
    """An orbit left every chart box of the cycle neighbourhood."""


class DomainEscape(HDCycleError):
    pass


class NoFixedPoint(HDCycleError):
    pass


class TooFewDomains(HDCycleError):
    pass


class OracleMismatch(HDCycleError):
    pass


class NoNegativeMultiplier(HDCycleError):
    pass


class BudgetExceeded(HDCycleError):
    pass


class OutOfInterval(HDCycleError):
    pass


class BoundViolated(HDCycleError):
    pass


class ResidualBroken(HDCycleError):
    pass


class SnapBudgetExceeded(BudgetExceeded):
    pass


class NotTwisted(HDCycleError):
    pass


class NoAccumulationData(HDCycleError):
    pass


class TwistedWithoutAccumulation(HDCycleError):
    """The cycle is twisted and no bi-accumulation data was supplied."""


class EmptyRegion(HDCycleError):
    pass


class RootsOutsideBase(HDCycleError):
    pass


class MarginViolated(HDCycleError):
    def __init__(self, step, margin):
        super().__init__(f"margin violated at step {step}: {margin!r}")
        self.step = step
        self.margin = margin

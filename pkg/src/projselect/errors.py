"""Exception types shared across the package."""


class ProjSelectError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(ProjSelectError, ValueError):
    """An argument violates a documented precondition."""


class InfeasibleSelectionError(ProjSelectError):
    """No subset satisfying the separation constraint exists.

    ``achieved`` reports how many positions could be accepted before the
    search ran out of candidates.
    """

    def __init__(self, message: str, achieved: int = 0):
        super().__init__(message)
        self.achieved = achieved


class ProblemTooLargeError(ProjSelectError):
    """Exhaustive search was requested on an instance above its size cap."""


class MissingArtifactError(ProjSelectError):
    """A pipeline stage requires files that an earlier stage has not produced.

    ``stage`` names the command that has to run first.
    """

    def __init__(self, message: str, stage: str):
        super().__init__(message)
        self.stage = stage

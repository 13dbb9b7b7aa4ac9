"""Exception hierarchy shared by the library, the CLI and the HTTP surface."""


class RobustHalfError(Exception):
    """Base class for every error raised by robusthalf."""


class InvalidInputError(RobustHalfError, ValueError):
    """Malformed vectors, labels, datasets or dimension mismatches."""


class InvalidHypothesisError(RobustHalfError, ValueError):
    """A halfspace that cannot be evaluated, e.g. a zero weight vector."""


class ConfigError(RobustHalfError, ValueError):
    pass


class ProtocolViolationError(RobustHalfError):
    """An oracle broke its contract (zero hyperplane, non-convex answers, unbounded body)."""


class NumericFailureError(RobustHalfError):
    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration


class CertificationError(RobustHalfError):
    """A certificate failed its own re-verification, or could not be set up."""


class GenerationError(RobustHalfError):
    pass

"""Exception hierarchy shared by all oedkit modules."""


class OEDError(Exception):
    """Base class for every error raised by oedkit."""


class EmptySupport(OEDError):
    pass


class NegativeWeight(OEDError):
    pass


class DimensionMismatch(OEDError):
    pass


class TooFewTrials(OEDError):
    pass


class IntegrationFailure(OEDError):
    pass


class OutOfDomain(OEDError):
    pass


class UnsupportedOrder(OEDError):
    pass


class SingularInformation(OEDError):
    pass


class DegenerateInit(OEDError):
    pass


class RankDeficientCandidates(OEDError):
    pass


class NoiseModelZero(OEDError):
    pass


class SingularCovariance(OEDError):
    pass


class InsufficientCandidates(OEDError):
    pass


class DegenerateDenominator(OEDError):
    pass


class NumericalBlowup(OEDError):
    """Simulation state left the admissible range; ``trace`` holds the partial run."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class EstimationDivergence(OEDError):
    pass


class ParseError(OEDError):
    """Problem-file validation failure.

    ``errors`` is a list of ``(path, message)`` pairs, one per problem found.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{path}: {msg}" for path, msg in self.errors]
        super().__init__("; ".join(lines) if lines else "invalid problem")

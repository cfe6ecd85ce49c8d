"""Exception hierarchy shared by every geoedit module."""


class GeoEditError(Exception):
    """Base class for all geoedit errors."""


# geo-model
class MalformedDocument(GeoEditError):
    pass


class InvalidGeometry(GeoEditError):
    pass


class CoordinateOutOfRange(GeoEditError):
    pass


class FeatureNotFound(GeoEditError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# projection
class PoleSingularity(GeoEditError):
    pass


# geometry toolkit
class TruncationExceedsLength(GeoEditError):
    pass


class DegenerateTerminalSegment(GeoEditError):
    pass


class EmptyGreenSet(GeoEditError):
    pass


# planning
class UnparseableInstruction(GeoEditError):
    def __init__(self, message, fragment=""):
        super().__init__(message)
        self.fragment = fragment


class NoRatioFound(GeoEditError):
    pass


class ExternalPlannerError(GeoEditError):
    pass


class EndpointUnavailable(ExternalPlannerError):
    pass


class SchemaViolation(ExternalPlannerError):
    def __init__(self, message, errors=()):
        super().__init__(message)
        self.errors = list(errors)


# execution / validation
class ToolError(GeoEditError):
    pass


class SubtaskExhausted(GeoEditError):
    def __init__(self, message, attempts=()):
        super().__init__(message)
        self.attempts = list(attempts)


class SessionFailed(GeoEditError):
    """Raised when a session cannot finish; carries the partial result."""

    def __init__(self, message, layout=None, summary=None):
        super().__init__(message)
        self.layout = layout
        self.summary = summary


# metrics
class ZeroMagnitude(GeoEditError):
    pass


class ZeroTarget(GeoEditError):
    pass


class EmptyCorpus(GeoEditError):
    pass


# corpus
class PoleProximity(GeoEditError):
    pass


class NetworkError(GeoEditError):
    pass


class RateLimited(NetworkError):
    def __init__(self, message, retry_after=None):
        super().__init__(message)
        self.retry_after = retry_after


class MalformedResponse(GeoEditError):
    pass


class Rejected(GeoEditError):
    def __init__(self, reason):
        super().__init__(f"patch rejected: {reason}")
        self.reason = reason


class InsufficientFeatures(GeoEditError):
    pass

"""Exception hierarchy shared by all adaptleak modules."""


class AdaptLeakError(Exception):
    """Base class for every error raised by this package."""


# registry
class RegistryError(AdaptLeakError, ValueError):
    pass


class MalformedDocument(RegistryError):
    pass


class EmptyContextList(RegistryError):
    pass


class EmptyActionList(RegistryError):
    pass


class DuplicateActionAcrossRules(RegistryError):
    pass


class ContextActionOverlap(RegistryError):
    pass


class TooManyActions(RegistryError):
    pass


# trace model / persistence
class TraceError(AdaptLeakError, ValueError):
    pass


class NonMonotoneTimestamp(TraceError):
    pass


class WrongActionSet(TraceError):
    pass


class RecordBeyondHorizon(TraceError):
    pass


class SchemaMismatch(TraceError):
    pass


class IoFailure(AdaptLeakError, OSError):
    pass


# scenario
class ScenarioError(AdaptLeakError, ValueError):
    pass


class ProfileCountOutOfRange(ScenarioError):
    pass


# detection
class DetectionError(AdaptLeakError, ValueError):
    pass


class NotADistribution(DetectionError):
    pass


class EmptyHistogram(DetectionError):
    pass


class NotAProtectedGetter(DetectionError):
    pass


class DegeneratePopulation(DetectionError):
    pass


# attacker
class AttackError(AdaptLeakError, ValueError):
    pass


class TooFewRows(AttackError):
    pass


class SingleCluster(AttackError):
    pass


class LengthMismatch(AttackError):
    pass


# mitigation
class MitigationError(AdaptLeakError, ValueError):
    pass


class UnknownAction(MitigationError):
    pass


class LadderExhausted(MitigationError):
    """All ladder methods at maximum magnitude and the observer is still above threshold."""


# harness
class ConfigError(AdaptLeakError, ValueError):
    pass

"""Exception hierarchy shared by all modules."""


class DurationalError(Exception):
    """Base class for every error raised by this package."""


# --- ingestion / validation ------------------------------------------------

class MalformedRow(DurationalError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class NegativeDuration(MalformedRow):
    pass


class SelfLoop(MalformedRow):
    pass


class OverlappingEvents(DurationalError):
    pass


class ActorIdGap(DurationalError):
    pass


class TimeOutOfWindow(DurationalError):
    pass


class OutOfOrderTransition(DurationalError):
    pass


class ExclusiveEngagementViolation(DurationalError):
    pass


# --- statistics -------------------------------------------------------------

class InadmissibleStatistic(DurationalError):
    pass


class PairNotTied(DurationalError):
    pass


# --- likelihood / estimation -----------------------------------------------

class PairNotAtRisk(DurationalError):
    pass


class InvalidInterval(DurationalError):
    pass


class DimensionMismatch(DurationalError):
    pass


class InstanceTooLarge(DurationalError):
    pass


class SingularHessian(DurationalError):
    pass


class CollinearStatistics(SingularHessian):
    pass


class NonFiniteLikelihood(DurationalError):
    pass


class ZeroExposureInterval(DurationalError):
    pass


class SingularInnerBlock(DurationalError):
    def __init__(self, block, message=""):
        self.block = block
        super().__init__(f"singular {block} block {message}".strip())


class ConfigError(DurationalError):
    pass


class NRInfeasible(InstanceTooLarge):
    pass


# --- warnings ---------------------------------------------------------------

class MaxIterExceeded(UserWarning):
    pass


class RateUnderflow(UserWarning):
    pass


class EventBudgetExhausted(UserWarning):
    pass

"""Exception hierarchy shared by every module."""


class GFNLossError(ValueError):
    """Base class for all errors raised by gfnloss."""


# dag_core
class CycleDetected(GFNLossError):
    pass


class UnreachableState(GFNLossError):
    pass


class SinkNotReachable(GFNLossError):
    pass


class NegativeReward(GFNLossError):
    pass


class AllRewardsZero(GFNLossError):
    pass


class TrajectoryBudgetExceeded(GFNLossError):
    pass


class PolicyNotNormalized(GFNLossError):
    pass


# losses
class UnknownLoss(GFNLossError):
    pass


class QuadratureFailed(GFNLossError):
    pass


class InconclusiveClassification(GFNLossError):
    pass


class KeyMismatch(GFNLossError):
    pass


class ExpressionError(GFNLossError):
    pass


# objectives
class IncompatibleObject(GFNLossError):
    pass


class MissingModelHead(GFNLossError):
    pass


class ModifiedVariantPreconditionViolated(GFNLossError):
    pass


class MissingReward(GFNLossError):
    """A reward is needed at a non-terminating state (forward-looking variants)."""


# model
class SinkHasNoChildren(GFNLossError):
    pass


class GraphNotRecorded(GFNLossError):
    pass


class ShapeMismatch(GFNLossError):
    pass


class CheckpointMismatch(GFNLossError):
    pass


# envs
class CoordinateOutOfRange(GFNLossError):
    pass


class IncompleteSequence(GFNLossError):
    pass


# metrics
class TooLargeForExact(GFNLossError):
    pass


class EmptyWindow(GFNLossError):
    pass


class LengthMismatch(GFNLossError):
    pass


class DegenerateConstantInput(GFNLossError):
    pass


# oracle
class NotGraded(GFNLossError):
    pass


class InfeasibleEnumeration(GFNLossError):
    pass


class NonConvergence(GFNLossError):
    pass


# cli / training
class ConfigError(GFNLossError):
    pass


class NumericalDivergence(GFNLossError):
    pass

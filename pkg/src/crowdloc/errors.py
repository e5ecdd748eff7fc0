"""Exception hierarchy.

Every failure raised by the library derives from :class:`CrowdLocError`.
Geometry failures are :class:`NumericalError` subclasses so the CLI can map
them to their own exit code.
"""


class CrowdLocError(Exception):
    """Base class for all library errors."""


class ValidationError(CrowdLocError, ValueError):
    """Input data violates a documented precondition."""


class NumericalError(CrowdLocError, ArithmeticError):
    """A computation hit a singular or infeasible configuration."""


# geometry
class NonPositiveDepth(NumericalError):
    pass


class RayParallelToGround(NumericalError):
    pass


class IntersectionBehindCamera(NumericalError):
    pass


class DegenerateDenominator(NumericalError):
    pass


class HVIPAboveVanishingLine(IntersectionBehindCamera):
    pass


# calib
class GroundNotVisibleAtPixel(NumericalError):
    pass


class InsufficientAxes(ValidationError):
    pass


class OptimizerDiverged(NumericalError):
    pass


# tiling
class RowAboveVanishingLine(NumericalError):
    pass


class NoValidRows(NumericalError):
    pass


# detect
class NoCommonKeypoints(ValidationError):
    pass


# upright
class TorsoRayMissesPlane(NumericalError):
    pass


class DegenerateBasis(NumericalError):
    pass


class MissingChain(ValidationError):
    pass


class MissingAnkles(ValidationError):
    pass


# metrics
class TooFewPairs(ValidationError):
    pass


class CoincidentGroundTruth(ValidationError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class NoLabeledKeypoints(ValidationError):
    pass


class JointSetMismatch(ValidationError):
    pass


class ZeroF1(NumericalError):
    pass


# synth / pipeline
class PlacementInfeasible(CrowdLocError):
    pass


class CalibrationFailed(NumericalError):
    pass


class NoDetections(CrowdLocError):
    pass

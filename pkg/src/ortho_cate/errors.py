"""Exception hierarchy.

Every error raised by the package derives from :class:`OrthoCateError`; the
ones signalling bad input values also derive from :class:`ValueError` so that
callers can catch them generically.
"""


class OrthoCateError(Exception):
    """Base class for all package errors."""


# -- ingestion / core -------------------------------------------------------
class MissingColumn(OrthoCateError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NonBinaryTreatment(OrthoCateError, ValueError):
    pass


class NonFiniteValue(OrthoCateError, ValueError):
    pass


class InvalidK(OrthoCateError, ValueError):
    pass


class DimensionMismatch(OrthoCateError, ValueError):
    pass


class LengthMismatch(OrthoCateError, ValueError):
    pass


class InconsistentOutcomes(OrthoCateError, ValueError):
    """Observed outcome differs from the potential outcome of the received arm."""


class EmptyInput(OrthoCateError, ValueError):
    pass


# -- weights / pseudo-outcomes ----------------------------------------------
class PropensityOutOfRange(OrthoCateError, ValueError):
    pass


class ZeroDenominator(OrthoCateError, ArithmeticError):
    pass


# -- learners -----------------------------------------------------------------
class InvalidSpec(OrthoCateError, ValueError):
    pass


class DegenerateDesign(OrthoCateError, ValueError):
    pass


class NegativeWeights(OrthoCateError, ValueError):
    pass


class SingleClass(OrthoCateError, ValueError):
    pass


class AllSpecsFailed(OrthoCateError, RuntimeError):
    pass


class SingleArm(OrthoCateError, ValueError):
    pass


class SingleArmInFold(OrthoCateError, ValueError):
    pass


class VSubsetNotSupported(OrthoCateError, ValueError):
    pass


class EmptySecondStage(OrthoCateError, ValueError):
    pass


# -- dgp / metrics / diagnostics ----------------------------------------------
class InvalidParams(OrthoCateError, ValueError):
    pass


class NoTreated(OrthoCateError, ValueError):
    pass


class ZeroNormalizer(OrthoCateError, ArithmeticError):
    pass


class DegenerateDirection(OrthoCateError, ValueError):
    pass


class StepTooSmall(OrthoCateError, ValueError):
    pass

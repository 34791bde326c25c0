"""Domain errors for the counting engine.

Every error carries the CLI exit code it maps to, so the command-line surface
and the HTTP layer can translate failures without inspecting messages.
"""


class LGDCError(Exception):
    """Base class for all engine errors."""

    exit_code: int = 1


# Usage errors (exit 2)


class ConfigError(LGDCError, ValueError):
    exit_code = 2


class InvalidHyperparameter(LGDCError, ValueError):
    exit_code = 2


# Data errors (exit 3)


class DataError(LGDCError, ValueError):
    exit_code = 3


class ShapeMismatch(DataError):
    pass


class IndivisibleShape(DataError):
    pass


class PointOutOfBounds(DataError):
    pass


class NonPositiveSigma(DataError):
    pass


class SceneTooSmall(DataError):
    pass


class CropTooLarge(DataError):
    pass


class EmptyInput(DataError):
    pass


class LengthMismatch(DataError):
    pass


class CheckpointError(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class NotScalar(DataError):
    pass


class DetachedGraph(DataError):
    pass


# Degenerate support (exit 4)


class AllSamplesDegenerate(LGDCError):
    """Every support density column is (near) zero: the support shows no crowd."""

    exit_code = 4


class DegenerateSupportError(AllSamplesDegenerate):
    """Episode-level wrapper naming the offending support image."""

    def __init__(self, support: str, detail: str = ""):
        self.support = support
        message = (
            f"support image {support!r} carries no crowd density; "
            "annotate at least one head inside the region of interest or pick another support"
        )
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)

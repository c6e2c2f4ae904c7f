"""Exception hierarchy shared across the package.

Every data-level failure raises a subclass of AttnVprError so the CLI can
map it to exit code 2 and print the error name.
"""


class AttnVprError(Exception):
    """Base class for all attnvpr data errors."""


# --- binary / manifest I/O ---

class BadMagic(AttnVprError):
    pass


class ShapeMismatch(AttnVprError):
    pass


class NonFinite(AttnVprError):
    pass


class IoFailure(AttnVprError):
    pass


class DuplicateId(AttnVprError):
    pass


class CoordinateOutOfRange(AttnVprError):
    pass


class MalformedRow(AttnVprError):
    pass


class DimMismatch(AttnVprError):
    pass


class NormViolation(AttnVprError):
    pass


# --- attention parsing / rasterization ---

class UnparseableResponse(AttnVprError):
    pass


class EmptyPointList(AttnVprError):
    pass


class SingularKernel(AttnVprError):
    pass


# --- llm client ---

class EmptyCity(AttnVprError):
    pass


class ProviderUnavailable(AttnVprError):
    pass


class ExhaustedRetries(AttnVprError):
    pass


class FixtureMissing(AttnVprError):
    pass


# --- aggregation ---

class NegativeActivation(AttnVprError):
    pass


class AllZeroWeights(AttnVprError):
    pass


class DegenerateScale(AttnVprError):
    pass


class ZeroVector(AttnVprError):
    pass


# --- retrieval / evaluation ---

class EmptyDb(AttnVprError):
    pass


class InsufficientHits(AttnVprError):
    pass


class MissingGroundTruth(AttnVprError):
    pass

"""Exception taxonomy for the toolkit.

Two families matter for the CLI exit-code mapping: ``UsageError`` (bad
flags / config, exit 1) and everything else derived from ``DataError``
(malformed or inconsistent data, exit 2).
"""


class ProtoAdaptError(Exception):
    """Base class for all toolkit errors."""


class UsageError(ProtoAdaptError):
    """Bad command line or configuration input."""


class DataError(ProtoAdaptError):
    """Malformed, inconsistent, or out-of-contract data."""


# --- file ingestion -----------------------------------------------------

class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class CountMismatch(DataError):
    pass


# --- clustering ---------------------------------------------------------

class KTooLarge(DataError):
    pass


class DimMismatch(DataError):
    pass


# --- prototypes / pseudo-labels -----------------------------------------

class EmptyCluster(DataError):
    pass


class MissingPartitions(DataError):
    pass


class AllClassesUndefined(DataError):
    pass


class UndefinedPrototype(DataError):
    pass


class ZeroNormEmbedding(DataError):
    pass


# --- distillation -------------------------------------------------------

class BadShape(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NonFiniteLoss(DataError):
    pass


# --- metrics ------------------------------------------------------------

class NoClosedSamples(DataError):
    pass


class EmptySide(DataError):
    pass


# --- style augmentation -------------------------------------------------

class MagnitudeOutOfRange(DataError):
    pass


class NotNormalized(DataError):
    pass


class NonFiniteGradient(DataError):
    pass


class ImageTooSmall(DataError):
    pass


# --- synthetic benchmark ------------------------------------------------

class DegenerateData(DataError):
    pass


class TooLargeForOracle(DataError):
    pass


# --- configuration ------------------------------------------------------

class UnknownKey(UsageError):
    pass


class BadValue(UsageError):
    pass

"""Exception hierarchy shared by every forambench module."""


class ForamBenchError(Exception):
    """Base class for all library errors."""


class DimensionError(ForamBenchError):
    """Shape or extent contract violated."""


class ContractError(ForamBenchError):
    """Non-shape precondition violated."""


class ConfigError(ForamBenchError):
    """Invalid or inconsistent configuration."""


class NumericsError(ForamBenchError):
    """NaN/Inf reached a place that requires finite values."""


class IngestError(ForamBenchError):
    """Dataset ingestion produced no usable records."""


class EvaluationError(ForamBenchError):
    """An evaluation run cannot be carried out as requested."""


class ImageFormatError(ForamBenchError):
    """An image file could not be decoded."""

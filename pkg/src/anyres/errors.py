"""Exception types raised across the toolkit.

Everything derives from :class:`AnyresError` (itself a ``ValueError``) so
callers can catch toolkit failures in one place; the CLI maps it to the
data-error exit code.
"""


class AnyresError(ValueError):
    pass


# tiler / layout
class InvalidRangeError(AnyresError):
    pass


class InvalidDimensionsError(AnyresError):
    pass


class InconsistentPlanError(AnyresError):
    pass


# coords
class BoxParseError(AnyresError):
    pass


class BoxRangeError(AnyresError):
    pass


class BoxOrderError(AnyresError):
    pass


class InvalidTileError(AnyresError):
    pass


class FrameMismatchError(AnyresError):
    pass


# mixture
class MixtureError(AnyresError):
    pass


class CyclicReferenceError(MixtureError):
    pass


class ZeroMassError(MixtureError):
    pass


class EmptyCategoryError(MixtureError):
    pass


# scoring
class UnknownBenchmarkError(AnyresError):
    pass


class MetricRangeError(AnyresError):
    pass


class MissingBenchmarkError(AnyresError):
    def __init__(self, category: str, missing: list[str]):
        self.category = category
        self.missing = list(missing)
        super().__init__(
            f"category {category!r} is missing benchmarks: {', '.join(self.missing)}"
        )


# corpus
class SchemaError(AnyresError):
    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


class InvalidDistributionError(AnyresError):
    pass


class RecordError(AnyresError):
    """A failure while processing one manifest record; names the record."""

    def __init__(self, record_id: str, cause: Exception):
        self.record_id = record_id
        self.cause = cause
        super().__init__(f"record {record_id!r}: {cause}")

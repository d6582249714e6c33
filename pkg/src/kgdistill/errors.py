"""Error and warning taxonomy shared by all engine modules.

Every failure mode that callers are expected to handle has a named class;
anything else escaping the package is a bug.
"""


class KgdError(Exception):
    """Base class for all engine errors."""


class EmptyInput(KgdError):
    """An operation received a matrix or list with no elements."""


class NonFiniteInput(KgdError):
    """An input carries NaN/Inf where finite values are required."""


class IsolatedNode(KgdError):
    """A graph row has zero degree and cannot be symmetrically normalized."""

    def __init__(self, row: int):
        self.row = row
        super().__init__(f"row {row} has zero degree; cannot normalize")


class BadAlpha(KgdError):
    """Smoothing scale outside the open interval (0, 1)."""


class SingularSystem(KgdError):
    """Dense solve hit a numerically singular system."""


class LexiconParseError(KgdError):
    """Lexicon file is malformed; message carries location context."""


class DuplicateCategory(KgdError):
    """Two lexicon entries share a category name."""


class TooFewCategories(KgdError):
    """The engine needs at least two categories to operate."""


class FormatError(KgdError):
    """Embedding file has a bad magic or unsupported version."""


class TruncatedFile(KgdError):
    """Embedding file payload does not match its declared shape."""


class CorruptData(KgdError):
    """Embedding file contains a non-finite value."""

    def __init__(self, offset: int):
        self.offset = offset
        super().__init__(f"non-finite value at payload offset {offset}")


class ProposalFormatError(KgdError):
    """Proposal fixture line violates the schema or its invariants."""


class DegenerateBox(KgdError):
    """Bounding box has zero width or height."""


class DimMismatch(KgdError):
    """Matrix/vector shapes are inconsistent with the operation."""


class RowCountMismatch(DimMismatch):
    """File-backed provider row count differs from the prompt count."""


class ZeroVector(KgdError):
    """A feature or node vector has zero norm where cosine is required."""

    def __init__(self, kind: str, row: int):
        self.kind = kind
        self.row = row
        super().__init__(f"{kind} row {row} has zero norm")


class DivergedGcn(KgdError):
    """Graph-network training produced non-finite gradients."""


class DivergedStudent(KgdError):
    """Student head update produced a non-finite loss."""


class ConfigError(KgdError):
    """Run configuration violates its invariants."""


class AdaptationAborted(KgdError):
    """A module error stopped the loop; carries iteration/image context.

    The original error is chained as __cause__.
    """


class DegenerateBandwidth(UserWarning):
    """All pairwise distances equal; affinity bandwidth floored at epsilon."""


class NumericalUnderflow(UserWarning):
    """A probability was clamped away from exact zero before taking a log."""

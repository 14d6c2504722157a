"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` so the CLI can emit
single-line parsable failures. Evaluation tooling must fail loudly: nothing
here is ever swallowed or turned into a NaN.
"""


class FeatAlignError(Exception):
    """Base class; ``code`` is a stable kebab-case identifier."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ShapeMismatchError(FeatAlignError):
    code = "shape-mismatch"


class ConfigError(FeatAlignError):
    code = "config"


class DegenerateVectorError(FeatAlignError):
    code = "degenerate-vector"


class DegenerateTextError(FeatAlignError):
    code = "degenerate-text"


class ValidationError(FeatAlignError):
    """Malformed record in an input file; names record index and field."""

    code = "validation"


class FormatError(FeatAlignError):
    """Structurally broken file (bad magic, truncation, wrong version)."""

    code = "format"


class CoverageError(FeatAlignError):
    """Sample present on one side of a join but not the other."""

    code = "coverage"


class DigestMismatchError(FeatAlignError):
    code = "digest-mismatch"


class ZeroVarianceError(FeatAlignError):
    code = "zero-variance"


class PhaseMismatchError(FeatAlignError):
    code = "phase-mismatch"


class NonFiniteError(FeatAlignError):
    code = "non-finite"


class LockError(FeatAlignError):
    code = "locked"

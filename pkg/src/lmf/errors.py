"""Exception hierarchy shared across the toolkit.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented process exit codes: 2 for input/format problems, 3 for numeric
divergence, 4 for degenerate inputs that make an operation undefined.
"""


class LMFError(Exception):
    exit_code = 1


class RatingFormatError(LMFError):
    """Malformed rating-log line (bad field count or non-numeric rating)."""

    exit_code = 2

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class DuplicateEntryError(LMFError):
    """The same (user, item) pair was observed twice."""

    exit_code = 2


class EmptyInputError(LMFError):
    """A rating log with no records, or an operation on zero entries."""

    exit_code = 4


class DegenerateViewError(LMFError):
    """Density requested for a view with no rows or no columns."""

    exit_code = 4


class DegenerateInputError(LMFError):
    """An aggregate asked over an empty collection."""

    exit_code = 4


class OutOfBlockError(LMFError):
    """A restricted-density vector that does not lie inside the block."""

    exit_code = 4


class ShapeError(LMFError):
    """Dimension mismatch between two objects that must agree."""

    exit_code = 2


class TooSmallError(LMFError):
    """Graph too small to bisect (fewer than two nodes)."""

    exit_code = 4


class NoSplitError(LMFError):
    """No vertex separator exists that leaves two non-empty parts."""

    exit_code = 4


class DegenerateBlockError(LMFError):
    """Density promotion stalled: no single vector removal raises the
    pooled block density while it is still below target."""

    exit_code = 4


class DomainError(LMFError):
    """Input values outside an algorithm's domain (e.g. negatives for NMF)."""

    exit_code = 2


class DivergenceError(LMFError):
    """Training produced a non-finite objective."""

    exit_code = 3

    def __init__(self, iteration, message=None):
        super().__init__(message or f"non-finite objective at iteration {iteration}")
        self.iteration = iteration

    def __reduce__(self):
        return (DivergenceError, (self.iteration, self.args[0]))


class UndefinedMetricError(LMFError):
    """Metric asked for zero observations (e.g. FCHR over zero rounds)."""

    exit_code = 4

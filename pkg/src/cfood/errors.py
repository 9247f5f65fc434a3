"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all cfood errors."""


class FormatError(ToolkitError):
    """An on-disk artifact is malformed: bad magic, truncation, size mismatch."""


class ValidationError(ToolkitError):
    """In-memory data violates a container invariant or a call contract."""


class EmptyClassError(ToolkitError):
    """A query targeted a class with no eligible training rows."""


class DegenerateInputError(ToolkitError):
    """The input coincides with the training mean; the score normalizer is zero."""


class SearchError(ToolkitError):
    """A counterfactual search could not reach the target class."""

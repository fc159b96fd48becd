"""Exception hierarchy shared across the package.

Exit codes used by the CLI: parse-class errors map to 2, domain-class
errors to 3, and I/O failures to 4.
"""


class VoxRefineError(Exception):
    """Base class for all voxrefine errors."""

    exit_code = 1


class ParseError(VoxRefineError):
    """Malformed input bytes: bad headers, truncated or corrupt streams."""

    exit_code = 2


class SchemaError(ParseError):
    """Structurally valid input that is missing required fields."""


class DecodeError(ParseError):
    """A bitstream that cannot be decoded back into a value."""


class DomainError(VoxRefineError):
    """A value outside the range the operation is defined on."""

    exit_code = 3


class InputError(DomainError):
    """Arguments that violate an operation's precondition."""


class ShapeError(DomainError):
    """Tensor or grid dimensions that do not line up."""

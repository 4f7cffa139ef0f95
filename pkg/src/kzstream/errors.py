"""Exception types shared across the toolkit.

Exit-code mapping for the CLI lives in :mod:`kzstream.cli`: usage/parse
problems exit 2, probabilistic failures (recovery overflow) exit 3, and
enumeration-budget refusals exit 4.
"""


class UsageError(ValueError):
    """A caller violated an operation's precondition (bad arguments)."""


class BudgetError(RuntimeError):
    """A desk-scale enumeration would exceed its combination budget."""


class ParseError(ValueError):
    """A stream or coreset file is malformed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RecoveryOverflowError(RuntimeError):
    """Sparse recovery held more distinct keys than its sparsity budget.

    Partial decodes are withheld; the run is marked failed.
    """

"""Exception types shared across the package."""


class TempComposeError(Exception):
    """Base class for all package errors."""


class ModelError(TempComposeError):
    """Invalid preference model (parse error or broken invariant).

    Carries an optional source location so parse failures name line and block.
    """

    def __init__(self, message, line=None, block=None):
        loc = ""
        if line is not None:
            loc += f"line {line}"
        if block:
            loc += f"{', ' if loc else ''}block '{block}'"
        super().__init__(f"{message} [{loc}]" if loc else message)
        self.line = line
        self.block = block


class OutOfDomainError(TempComposeError):
    """A raw value falls outside every declared semantic range."""


class RequestError(TempComposeError):
    """Invalid request, request set, or request file."""


class WorkloadError(TempComposeError):
    """Invalid workload specification."""


class CompositionError(TempComposeError):
    """Invalid composition problem, hyperparameters, or composer input."""


class DegenerateTreeError(TempComposeError):
    """Cophenetic coefficient is undefined (fewer than two pairs or zero variance)."""


class LibraryError(TempComposeError):
    """Corrupt or inconsistent policy library."""

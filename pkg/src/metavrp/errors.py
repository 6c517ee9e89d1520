"""Exception hierarchy shared across the package."""


class MetaVRPError(Exception):
    """Base class for all package errors."""


class InvalidArgument(MetaVRPError, ValueError):
    pass


class InvalidState(MetaVRPError, RuntimeError):
    pass


class ValidationError(MetaVRPError, ValueError):
    """A solution or instance violates its feasibility invariants."""


class ParseError(MetaVRPError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedFormat(MetaVRPError, ValueError):
    pass


class ExternalSolverError(MetaVRPError, RuntimeError):
    def __init__(self, message, output=""):
        super().__init__(message)
        self.output = output


class InfeasibleExternalSolution(ExternalSolverError, ValidationError):
    """An external solver emitted a tour that fails validation."""

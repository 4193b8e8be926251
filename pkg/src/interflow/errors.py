"""Exception types shared across the package."""


class InterflowError(Exception):
    """Base class for all errors raised by interflow."""


class InvalidParameterError(InterflowError):
    """A parameter is outside its admissible range."""


class MeshFormatError(InterflowError):
    """A mesh file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MeshValidationError(InterflowError):
    """A mesh violates a structural invariant (names the offending entity)."""


class MeshGenerationError(InterflowError):
    """The mesh generator failed to produce a valid triangulation."""


class CompatibilityError(InterflowError):
    """Source terms violate the zero-net-flux compatibility condition."""


class SolverError(InterflowError):
    """A linear solve failed (singular factorization or residual too large)."""


class UndefinedPointError(InterflowError):
    """Evaluation requested at a point where the field is not defined."""


class ConfigError(InterflowError):
    """A run configuration file is malformed or inconsistent."""

    def __init__(self, message, key=None, line=None):
        parts = []
        if key is not None:
            parts.append(f"key '{key}'")
        if line is not None:
            parts.append(f"line {line}")
        if parts:
            message = f"{message} ({', '.join(parts)})"
        super().__init__(message)
        self.key = key
        self.line = line

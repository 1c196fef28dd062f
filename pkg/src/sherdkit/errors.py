"""Exception types shared across the toolkit."""


class SherdkitError(Exception):
    """Base class for all toolkit errors."""


class MeshFormatError(SherdkitError):
    """Raised when a mesh file cannot be parsed.

    Carries the offending line number for text formats (None for binary).
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix += str(path)
        if line is not None:
            prefix += f":{line}"
        if prefix:
            message = f"{prefix}: {message}"
        super().__init__(message)


class InvalidMeshError(SherdkitError):
    """Raised when mesh data violates a structural invariant."""


class NotWatertightError(SherdkitError):
    """Raised when an operation requires a closed mesh but got an open one.

    ``diagnostics`` holds the MeshDiagnostics that triggered the refusal.
    """

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics
        super().__init__(message)


class OrientationError(SherdkitError):
    """Raised when triangle windings are inconsistent; suggests orient_consistently()."""


class DegenerateInputError(SherdkitError):
    """Raised on geometrically degenerate input (collinear, coplanar, coincident).

    ``dimension`` names the detected affine dimension of the input where relevant.
    """

    def __init__(self, message, dimension=None):
        self.dimension = dimension
        super().__init__(message)


class RegistrationError(SherdkitError):
    """Raised when an alignment or ICP run cannot proceed."""


class ReconstructionError(SherdkitError):
    """Raised by the implicit-surface pipeline (normals, solve, extraction)."""


class SupportError(SherdkitError):
    """Raised by support generation, splitting and engraving."""


class ProjectError(SherdkitError):
    """Raised for invalid project files or failing pipeline tasks.

    ``task`` and ``fragment`` identify where a pipeline run stopped.
    """

    def __init__(self, message, task=None, fragment=None):
        self.task = task
        self.fragment = fragment
        super().__init__(message)

    def record(self):
        """Machine-readable error record for CLI output."""
        return {"error": str(self), "task": self.task, "fragment": self.fragment}

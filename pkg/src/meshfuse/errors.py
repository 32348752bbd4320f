"""Exception types raised by meshfuse."""


class MeshFuseError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateError(MeshFuseError, ValueError):
    """Raised for degenerate geometry (collinear point sets, zero-length edges)."""


class UncoveredPixelError(MeshFuseError, ValueError):
    """Raised when a pixel is not covered by any triangle of the mesh."""


class SolverError(MeshFuseError, RuntimeError):
    """Raised when the optimizer cannot run or fails."""


class DivergenceError(SolverError):
    """Raised when a non-finite value shows up during the iterations."""

    def __init__(self, iteration: int, what: str = "state"):
        self.iteration = iteration
        super().__init__(f"divergence: non-finite {what} at iteration {iteration}")


class FormatError(MeshFuseError, ValueError):
    """Raised by the readers on malformed files."""

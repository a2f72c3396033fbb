"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class SurfpartError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SurfpartError, ValueError):
    pass


class ConstructionError(SurfpartError):
    """Geometry could not be assembled (overlapping or self-intersecting parts)."""


class MeshingError(SurfpartError):
    pass


class SolveError(SurfpartError):
    """Linear solve failed; ``diagnostics`` carries residual/iteration info."""

    def __init__(self, message: str, diagnostics: dict | None = None) -> None:
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class UnsupportedConfiguration(SurfpartError):
    pass


class UndefinedParticipation(SurfpartError):
    pass


class FitError(SurfpartError):
    pass


class SweepError(SurfpartError):
    def __init__(self, message: str, depth_nm: float | None = None) -> None:
        super().__init__(message)
        self.depth_nm = depth_nm


class DivergentRate(SurfpartError):
    pass


class ConfigError(SurfpartError):
    """Invalid run configuration; ``errors`` lists every problem found, with line numbers."""

    def __init__(self, errors: list[str]) -> None:
        super().__init__("; ".join(errors))
        self.errors = list(errors)

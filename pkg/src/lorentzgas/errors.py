"""Exception types shared across the package."""

from __future__ import annotations


class LorentzGasError(Exception):
    """Base class for all package errors."""


class GeometryError(LorentzGasError, ValueError):
    """Invalid geometric input (point inside a scatterer, bad angle, ...)."""


class SceneError(LorentzGasError, ValueError):
    """A gas configuration failed validation (overlap, degenerate lattice, bounds)."""


class SchemaError(SceneError):
    """Scene JSON does not match the schema.  ``path`` is a JSON path like ``$.lattice``."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class SingularStep(LorentzGasError):
    """The next collision is (numerically) tangential."""

    def __init__(self, message: str = "near-tangent collision", *, index: int = 0, partial=None):
        super().__init__(message)
        self.index = index
        self.partial = partial


class HorizonExceeded(LorentzGasError):
    """No scatterer was found along a free flight.

    ``escaped`` is True when the gas has finitely many scatterers and the
    particle left their bounding box, i.e. it escaped to infinity.
    """

    def __init__(self, message: str = "no collision within flight cap", *, escaped: bool = False,
                 index: int = 0, partial=None):
        super().__init__(message)
        self.escaped = escaped
        self.index = index
        self.partial = partial


class ChooseRError(LorentzGasError):
    """Radius search for the excursion threshold gave up."""

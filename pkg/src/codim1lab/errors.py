"""Exception hierarchy shared by all modules."""


class Codim1Error(Exception):
    """Base class for every error raised by the package."""


class GeometryError(Codim1Error, ValueError):
    """Invalid profile parameters or an unusable sample table."""


class DomainError(Codim1Error, ValueError):
    """Arclength parameter outside [0, L]."""


class FocalViolationError(GeometryError):
    """Normal offset beyond the validated fraction of the focal bound."""

    def __init__(self, s, limit):
        self.s = float(s)
        self.limit = float(limit)
        super().__init__(f"offset {self.s!r} exceeds focal validity limit {self.limit!r}")


class InvalidModeError(Codim1Error, ValueError):
    """Fourier mode incompatible with the profile topology or spin structure."""


class InvalidGridError(Codim1Error, ValueError):
    """Grid incompatible with the operator being assembled."""


class NotHermitianError(Codim1Error, ValueError):
    """Matrix handed to a Hermitian solver is not Hermitian within tolerance."""


class ConfigError(Codim1Error, ValueError):
    """Run configuration failed validation."""

"""Exception hierarchy shared by every module."""


class Gibbs1DError(Exception):
    """Base class for all library errors."""


class DimensionCapError(Gibbs1DError):
    """Raised when a dense operator would exceed the configured dimension cap."""


class SupportError(Gibbs1DError):
    """An operator's support is not contained where it has to be."""


class GeometryError(Gibbs1DError):
    """Invalid chain geometry (n < k, overlapping supports, bad indices)."""


class NumericError(Gibbs1DError):
    """Non-finite entries or other numerical breakdown."""


class ShapeError(Gibbs1DError):
    """Wrong matrix shape, or a Hermitian input that is not Hermitian."""


class ExponentOverflowError(Gibbs1DError):
    """exp() of a spectrum would overflow double precision."""


class CommutationError(Gibbs1DError):
    """A method that needs commuting terms got non-commuting ones."""


class StabilityError(Gibbs1DError):
    """An ODE integration blew up; more steps are needed."""


class ConfigError(Gibbs1DError):
    """Malformed run configuration."""

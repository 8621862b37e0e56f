"""Exception types shared across the package."""


class VoxRegError(Exception):
    """Base class for all package errors."""


class ConfigError(VoxRegError):
    """Invalid configuration value or stage combination."""


class GridMismatchError(VoxRegError):
    """Two objects were expected to live on the same grid but do not."""


class DegenerateImageError(VoxRegError):
    """An image is constant and cannot drive a similarity metric."""


class NonConvergentError(VoxRegError):
    """Fixed-point field inversion failed to meet its residual bound."""

    def __init__(self, message, residual_inf_norm=None, bound=None):
        super().__init__(message)
        self.residual_inf_norm = residual_inf_norm
        self.bound = bound


class CertificateError(VoxRegError):
    """A composed map failed its inverse-consistency certificate."""

    def __init__(self, message, residual_inf_norm=None, bound=None):
        super().__init__(message)
        self.residual_inf_norm = residual_inf_norm
        self.bound = bound


class GtEmptyError(VoxRegError):
    """Surface distance requested for a class absent from the reference mask."""


class NiftiError(VoxRegError):
    """Base class for file format errors."""


class CorruptHeaderError(NiftiError):
    """Header bytes do not describe a readable file."""


class UnsupportedDatatypeError(NiftiError):
    """Datatype code outside the supported subset."""


class DimensionalityError(NiftiError):
    """Dataset dimensionality outside the supported layouts."""


class PhantomSpecError(VoxRegError):
    """Phantom description is internally inconsistent."""

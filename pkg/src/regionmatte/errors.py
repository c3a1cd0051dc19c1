"""Exception types raised across the package."""


class MatteError(Exception):
    """Base class for all errors raised by regionmatte."""


class ShapeError(MatteError, ValueError):
    """An operation received tensors of incompatible shapes."""


class NonScalarLossError(MatteError, ValueError):
    """``backward`` was called on a tensor with more than one element."""


class ImageTooSmallError(MatteError, ValueError):
    """The input image is below the minimum size accepted by the backbone."""


class RegionError(MatteError, ValueError):
    """Invalid region coordinates (out of bounds or duplicated)."""


class NonFiniteLossError(MatteError, FloatingPointError):
    """A loss component evaluated to NaN or infinity."""

    def __init__(self, component, value):
        super().__init__(f"loss component {component!r} is not finite ({value})")
        self.component = component
        self.value = value


class PlacementError(MatteError, ValueError):
    """A sprite placement falls outside the destination canvas."""


class CheckpointError(MatteError):
    """A checkpoint file is malformed or incompatible with the model."""


class ImageFormatError(MatteError):
    """An image file could not be decoded."""


class UnpairedFileError(MatteError):
    """Evaluation inputs could not be paired by file stem."""

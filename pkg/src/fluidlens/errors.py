"""Exception types shared across the package."""


class FluidLensError(Exception):
    """Base class for all package errors."""


class ShapeError(FluidLensError, ValueError):
    """Array or image dimensions do not agree."""


class InvalidInputError(FluidLensError, ValueError):
    """An argument is outside its allowed domain."""


class TotalInternalReflectionError(FluidLensError, ArithmeticError):
    """A refracted ray does not exist for the given indices and angle."""


class GenerationError(FluidLensError):
    """A synthetic scene could not be generated for the given config."""


class DatasetError(FluidLensError):
    """A dataset on disk is missing files or violates its manifest."""


class TrainingDivergenceError(FluidLensError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, step: int | None = None, last_finite_loss: float | None = None):
        super().__init__(message)
        self.step = step
        self.last_finite_loss = last_finite_loss

"""Error types shared across the package."""


class FormatError(ValueError):
    """A file does not conform to its on-disk format (bad magic, dims, truncation)."""


class ShapeMismatchError(ValueError):
    """Tensor or grid shapes are incompatible for the requested operation."""


class EmptyShapeError(ValueError):
    """An operation requiring at least one occupied cell got an empty shape."""


class EmptyViewError(ValueError):
    """A rendered view has an all-empty silhouette (shape not visible)."""


class CalibrationError(RuntimeError):
    """Loss-weight calibration failed (e.g. zero naturalness gradient)."""


class TrainingDivergedError(RuntimeError):
    """A loss became non-finite during training."""

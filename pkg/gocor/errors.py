from typing import Optional


class GOCorError(Exception):
    pass


class DimensionError(GOCorError, ValueError):
    """Raised when array shapes disagree"""


class NonFiniteInputError(GOCorError, ValueError):
    """Raised when an input holds NaN or Inf"""


class EmptyInputError(GOCorError, ValueError):
    """Raised when a reduction has nothing to reduce over"""


class SceneGeometryError(GOCorError, ValueError):
    pass


class ConfigError(GOCorError):
    pass


class FormatError(GOCorError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)

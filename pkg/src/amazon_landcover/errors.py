"""Exception types raised across the package."""


class LandCoverError(Exception):
    """Base class for all package errors."""


class ConfigError(LandCoverError, ValueError):
    pass


class ShapeError(LandCoverError, ValueError):
    pass


class UnknownTagError(LandCoverError, KeyError):
    def __init__(self, tag, row=None):
        self.tag = tag
        self.row = row
        where = f" (row {row})" if row is not None else ""
        super().__init__(f"unknown tag {tag!r}{where}")

    def __str__(self):
        return self.args[0]


class ManifestNotFoundError(LandCoverError, FileNotFoundError):
    pass


class MalformedRowError(LandCoverError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        where = f"row {row}: " if row is not None else ""
        super().__init__(where + message)


class EmptyDatasetError(LandCoverError, ValueError):
    pass


class ImageDecodeError(LandCoverError, OSError):
    def __init__(self, message, path=None, chip_id=None):
        self.path = path
        self.chip_id = chip_id
        super().__init__(message)

    def __str__(self):
        return self.args[0]


class WeightShapeError(LandCoverError, ValueError):
    def __init__(self, layer, expected, got):
        self.layer = layer
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(f"layer {layer!r}: expected shape {self.expected}, got {self.got}")


class NumericalError(LandCoverError, ArithmeticError):
    def __init__(self, message, layer=None, history=None):
        self.layer = layer
        self.history = history
        super().__init__(message)


class IoError(LandCoverError, OSError):
    def __str__(self):
        return self.args[0] if self.args else ""


class CheckpointMismatchError(LandCoverError, ValueError):
    """Checkpoint shapes fit but it was trained for a different tag list."""

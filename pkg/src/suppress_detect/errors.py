"""Exception types raised across the pipeline."""


class SuppressError(Exception):
    """Base class for all pipeline errors."""


class NoOverlap(SuppressError):
    pass


class ParseError(SuppressError):
    pass


class UnsupportedShape(ParseError):
    pass


class ScoreOutOfRange(ParseError):
    pass


class FormatError(SuppressError):
    pass


class TooFewPixels(SuppressError):
    pass


class ShapeMismatch(SuppressError):
    pass


class VersionMismatch(SuppressError):
    pass


class EmptyDataset(SuppressError):
    pass


class MixedImages(SuppressError):
    pass


class UnknownTagKey(SuppressError):
    pass


class EmptyGrid(SuppressError):
    pass


class ConfigError(SuppressError):
    pass

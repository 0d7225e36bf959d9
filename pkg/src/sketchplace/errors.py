"""Error hierarchy shared across the pipeline.

Every error class carries a stable machine-readable ``code`` used by the
CLI for exit statuses and single-line error reports.
"""


class SketchPlaceError(Exception):
    """Base class for all pipeline errors."""

    code = "error"
    exit_code = 1


class ConfigurationError(SketchPlaceError):
    """Invalid option, unknown name, or inconsistent configuration."""

    code = "configuration"
    exit_code = 2


class InvalidSceneError(SketchPlaceError):
    """Scene fails validation (e.g. missing ROI sketch)."""

    code = "invalid-scene"
    exit_code = 3


class InsufficientDataError(SketchPlaceError):
    """Too few points for the requested fit."""

    code = "insufficient-data"
    exit_code = 4


class DivergenceError(SketchPlaceError):
    """Non-finite quantity during training or solving."""

    code = "divergence"
    exit_code = 5

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class InfeasibleError(SketchPlaceError):
    """No feasible configuration found within the rejection budget."""

    code = "infeasible"
    exit_code = 6


class ParseError(SketchPlaceError):
    """Malformed scene or chain description file."""

    code = "parse"
    exit_code = 7

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class FormatError(SketchPlaceError):
    """Bad binary payload (depth grid or model file)."""

    code = "format"
    exit_code = 8


class StationaryPointError(SketchPlaceError):
    """Newton projection hit a (near-)zero gradient and cannot proceed."""

    code = "stationary-point"
    exit_code = 9


class BaselineFailureError(SketchPlaceError):
    """A baseline method produced no usable output (e.g. zero IK successes)."""

    code = "baseline-failure"
    exit_code = 10


class EmptyRegionError(SketchPlaceError):
    """Degenerate sketch or projection yielding no points."""

    code = "empty-region"
    exit_code = 11


class InvalidDepthError(SketchPlaceError):
    """Non-positive or non-finite depth passed to projection."""

    code = "invalid-depth"
    exit_code = 12


class ShapeError(SketchPlaceError):
    """Dimension or shape mismatch between arrays."""

    code = "shape"
    exit_code = 13


class LimitError(SketchPlaceError):
    """Joint value outside its declared limits."""

    code = "limit"
    exit_code = 14

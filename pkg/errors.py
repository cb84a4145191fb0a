"""
Exception types shared by every module. Anything deriving from LocusError is a
data problem (bad file, degenerate field, empty dataset) and maps to exit
code 2 in the CLI.
"""


class LocusError(Exception):
    """Base class for data errors raised by the pipeline."""


class GridParseError(LocusError):
    """A grid/SDF container could not be parsed; offset is the byte position."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.reason = message
        self.offset = offset


class DegenerateFieldError(LocusError):
    """Observed space has only one occupancy class, so no surface exists."""


class EmptyFieldError(LocusError):
    """Every cell is unknown."""


class ZeroGradientError(LocusError):
    """A descriptor window carries no gradient energy."""


class DegenerateSampleError(LocusError):
    """A minimal RANSAC sample cannot define a transform."""


class EmptyDatasetError(LocusError):
    """Fewer than two submaps are available for pairing."""


class GenerationError(LocusError):
    """A synthetic world or submap could not be generated from its spec."""


class ConfigError(LocusError):
    """Unknown key or unparsable value in a key=value config file."""


class EmptyCurveError(LocusError):
    """A precision-recall curve without points was queried."""


class EmptyGridError(LocusError):
    """A parameter grid search was given nothing to search."""

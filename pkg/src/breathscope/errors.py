"""Exception hierarchy shared by every pipeline stage."""


class BreathscopeError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(BreathscopeError, ValueError):
    """An argument is outside its allowed domain."""


class FormatError(BreathscopeError, ValueError):
    """Malformed image, manifest or calibration content."""


class SequenceError(BreathscopeError):
    """Frame numbering in an input directory is not contiguous."""


class ConfigError(BreathscopeError, KeyError):
    """A required configuration key is missing or unknown."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ValidationError(BreathscopeError, ValueError):
    """A loaded quantity violates a physical invariant."""


class GeometryError(BreathscopeError):
    """Degenerate camera geometry."""


class InvalidDisparityError(BreathscopeError, ValueError):
    """Disparity is non-positive and cannot be triangulated."""


class DegeneracyError(BreathscopeError):
    """Point sets too small or too degenerate for a rigid fit."""


class AlignmentError(BreathscopeError):
    """ICP ran out of usable correspondences."""


class CoverageError(BreathscopeError):
    """A frame overlaps the reference surface too little to measure."""


class NoSignalError(BreathscopeError):
    """No spectral energy inside the plausible breathing band."""

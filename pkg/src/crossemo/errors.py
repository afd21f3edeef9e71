"""Exception hierarchy shared by all crossemo modules."""


class CrossemoError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CrossemoError):
    """Array dimensions are inconsistent with the operation."""


class UsageError(CrossemoError):
    """An argument is outside the operation's contract (bad tag, bad label, ...)."""


class NumericError(CrossemoError):
    """A computation produced or received a non-finite value."""


class DegenerateInputError(CrossemoError):
    """Input is formally valid but degenerate for this operation (e.g. zero variance)."""


class MiningError(CrossemoError):
    """Triplet mining cannot proceed for the given batch composition."""


class SamplingError(CrossemoError):
    """Mini-batch sampling failed to produce a usable batch."""


class DataError(CrossemoError):
    """A data file is malformed or internally inconsistent."""


class ConfigError(CrossemoError):
    """A run configuration is invalid or references missing resources."""

"""Exception hierarchy shared by all modules."""


class AtomScatterError(Exception):
    """Base class for toolkit errors."""


class ParameterError(AtomScatterError, ValueError):
    """A physical parameter lies outside its domain."""


class ConfigError(AtomScatterError, ValueError):
    """A configuration document failed validation.

    ``pointer`` is the JSON pointer of the offending field ("" for the root).
    """

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer


class BinningError(AtomScatterError, ValueError):
    """Two histograms do not share the same time binning."""


class NormalizationError(AtomScatterError, ValueError):
    """The reference histogram has no counts in the summation window."""


class FitError(AtomScatterError, RuntimeError):
    """Least-squares fit did not converge; ``last_iterate`` holds the final parameters."""

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class FormatError(AtomScatterError, ValueError):
    """An input file could not be parsed."""

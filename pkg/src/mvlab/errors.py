"""Exception types shared across the package."""


class MvlabError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(MvlabError):
    """Bad run configuration: unknown key, missing field, wrong type."""


class NumericError(MvlabError):
    """A numerical routine failed (factorization, divergence, ...)."""


class SingularDriftError(NumericError):
    """Drift evaluation produced NaN/inf; carries path id and node."""

    def __init__(self, message, path_id=None, node=None):
        super().__init__(message)
        self.path_id = path_id
        self.node = node


class DivergentWeightError(NumericError):
    """An exponential weight overflowed (exp-moment of the test function)."""


class UnsupportedSizeError(MvlabError):
    """Input size exceeds what an exact algorithm supports."""


class ResolutionError(MvlabError):
    """Grid too coarse for the requested operator."""

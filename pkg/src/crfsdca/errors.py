"""Exception types shared across the package."""


class CrfSdcaError(Exception):
    """Base class for all package-specific errors."""


class DataError(CrfSdcaError):
    """Malformed input file or inconsistent dataset."""


class ModelFormatError(CrfSdcaError):
    """Unreadable or version-incompatible model/state file."""


class InconsistentMarginalsError(CrfSdcaError):
    """A marginal set violates normalization or edge/node agreement."""


class LineSearchError(CrfSdcaError):
    """The one-dimensional dual objective is not concave; indicates a bug upstream."""


class TrainingError(CrfSdcaError):
    """The training loop detected an impossible state (e.g. a descending dual step)."""

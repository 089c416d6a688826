"""Exception hierarchy shared by every module of the package."""


class StrAttackError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(StrAttackError, ValueError):
    """Array shapes disagree with the declared image dimensions."""


class ParamError(StrAttackError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class StructureError(StrAttackError, ValueError):
    """A group structure is incompatible with the requested operation."""


class FormatError(StrAttackError, ValueError):
    """A file on disk does not follow the expected binary layout."""


class DataError(StrAttackError, ValueError):
    """A dataset is empty or ill-shaped."""


class DegenerateError(StrAttackError, ValueError):
    """A quantity is undefined for the given input (e.g. a zero perturbation)."""


class ProtocolError(StrAttackError, ValueError):
    """Best/average/worst-case selection received unusable input."""

"""Exception taxonomy shared across the package.

CLI exit-code mapping: UsageError -> 2, DataError -> 3, DivergenceError -> 4.
"""


class NerfvsError(Exception):
    """Base class for all package errors."""


class UsageError(NerfvsError):
    """Bad arguments or configuration supplied by the caller."""


class DataError(NerfvsError):
    """Malformed or inconsistent input data (meshes, rasters, datasets)."""


class DivergenceError(NerfvsError):
    """Training produced a non-finite loss."""

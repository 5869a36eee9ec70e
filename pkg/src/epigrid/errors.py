"""Error taxonomy shared across the package.

Kept deliberately small: the CLI maps these onto distinct exit codes, the
library raises them where the failure class matters to a caller.  Plain
ValueError is used for programming errors (bad argument shapes etc.).
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, records, masks)."""


class NumericError(ArithmeticError):
    """Numeric-domain failure: overflow, non-finite values where finite required."""


class ConvergenceError(RuntimeError):
    """Raised when a convergence gate is requested and not met."""

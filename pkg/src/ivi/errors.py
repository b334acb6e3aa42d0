"""Exception hierarchy shared by all modules."""


class IviError(Exception):
    """Base class for package errors."""


class ValidationError(IviError, ValueError):
    """Bad input: invalid mesh, parameter out of range, malformed config."""


class NumericError(IviError, ArithmeticError):
    """A numerical step failed or a stability condition is violated."""


class StabilityError(NumericError):
    """Learning rate or noise scale outside the stable region."""


class InverseCrimeError(ValidationError):
    """Synthetic data requested on a mesh no finer than the inversion mesh."""

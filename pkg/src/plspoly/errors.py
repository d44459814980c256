"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: input errors exit with 2, numeric and
capability errors with 3.
"""


class PlsPolyError(Exception):
    """Base class for all package errors."""


class InputError(PlsPolyError, ValueError):
    """Malformed or inconsistent input (shapes, files, non-finite values)."""


class NumericError(PlsPolyError, ArithmeticError):
    """A numerical kernel failed (non-convergence, breakdown)."""


class CapabilityError(PlsPolyError):
    """The request is valid but outside what a route can compute.

    Raised for example when tuple enumeration would exceed the enumeration
    budget, or when a computation needs ground truth that the problem lacks.
    """

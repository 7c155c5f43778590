"""Exception types shared across the package."""


class GeowalkError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class InvalidInput(GeowalkError, ValueError):
    exit_code = 2


class VincentyNonConvergence(GeowalkError, ArithmeticError):
    exit_code = 3


class NumericalFailure(GeowalkError, FloatingPointError):
    """NaN or Inf appeared during training or inference."""

    exit_code = 3


class NoWalkableNode(InvalidInput):
    pass


class LeakageError(GeowalkError, AssertionError):
    """A held-out (tainted) record reached a training-only stage."""

    exit_code = 2


class StoreError(GeowalkError, OSError):
    exit_code = 4

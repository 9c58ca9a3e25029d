"""Exception types raised by this package."""


class Error(Exception):
    """Base class for all errors raised by taming_sde."""


class ValidationError(Error, ValueError):
    """An argument fails a documented precondition."""


class NonCommutativeError(Error):
    """A Milstein-family scheme was requested for a model whose diffusion
    columns fail the commutativity condition.

    The single-increment Milstein correction used here is only the correct
    iterated-integral replacement for commutative noise, so integration
    refuses to proceed unless explicitly overridden.
    """


class ReferenceBlowUpError(Error):
    """The fine-grid reference trajectory blew up, so no strong error can
    be measured against it."""


class PathExplosionError(Error):
    """More than the tolerated fraction of paths blew up for a scheme that
    is supposed to be stable (a tamed scheme)."""


class UsageError(Error):
    """Bad command line or config file input."""

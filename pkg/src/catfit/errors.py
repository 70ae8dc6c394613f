"""Exception hierarchy. ``ValidationError`` subclasses map to CLI exit code 2."""


class CatfitError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(CatfitError, ValueError):
    """Malformed input: bad file contents, unknown ids, invalid parameters."""


class DataError(ValidationError):
    pass


class ModelError(ValidationError):
    pass


class FitError(CatfitError, RuntimeError):
    """Optimisation failed, e.g. every learning rate diverged."""


class ConvergenceError(CatfitError, RuntimeError):
    pass

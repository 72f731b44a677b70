"""Exception hierarchy shared across the package."""


class PrlkitError(Exception):
    """Base class for every error raised by this package."""


class InputError(PrlkitError):
    """A caller violated an input contract (bad file, bad parameter, bad shape)."""


class InvariantError(PrlkitError):
    """An internal consistency check failed; indicates a bug, not bad input."""

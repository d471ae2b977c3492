"""Exception hierarchy shared by readers, estimators and the CLI."""


class GliomorphError(Exception):
    """Base class for errors caused by bad input rather than bugs."""


class FormatError(GliomorphError, ValueError):
    """File content does not follow the expected format."""


class ParseError(FormatError):
    pass


class UnsupportedError(FormatError):
    """Well-formed input using a feature outside the supported subset."""


class TruncatedFileError(GliomorphError, OSError):
    pass


class ValidationError(GliomorphError, ValueError):
    """Input violates a documented invariant or precondition."""


class DataError(ValidationError):
    """Data content makes the requested computation impossible."""


class InfeasibleError(GliomorphError):
    """No candidate satisfies the search constraints."""

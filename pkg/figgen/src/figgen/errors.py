class FigureError(Exception):
    """Base for everything figgen raises on purpose."""


class SpecError(FigureError):
    """Figure-spec file is malformed or inconsistent."""


class DataError(FigureError):
    """Input CSV is missing, empty, or violates the documented schema."""

"""Exception types shared across the package."""


class FigError(Exception):
    pass


class DimensionError(FigError, ValueError):
    pass


class ConfigError(FigError, ValueError):
    pass


class DataParseError(FigError, ValueError):
    """Malformed input file; message carries the 1-based line number."""


class ValidationError(FigError, ValueError):
    """A graph violates a structural invariant; message names graph index and rule."""


class DivergenceError(FigError, FloatingPointError):
    pass


class UndefinedMetricError(FigError, ValueError):
    pass


class UnsupportedVariantError(FigError, ValueError):
    pass

"""Exception types shared across the package."""


class SelfTuneError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SelfTuneError, ValueError):
    pass


class NumericalError(SelfTuneError, FloatingPointError):
    pass


class StateError(SelfTuneError, RuntimeError):
    pass


class ActionError(SelfTuneError, ValueError):
    pass


class DistributionError(SelfTuneError, ValueError):
    pass


class ConfigError(SelfTuneError, ValueError):
    pass


class DegenerateBatchError(SelfTuneError, ValueError):
    pass


class SchemaError(SelfTuneError, ValueError):
    pass

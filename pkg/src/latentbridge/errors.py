"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class DimensionError(ValueError):
    """Array shapes that must agree do not."""


class OrderError(ValueError):
    """A reverse-time step was requested with t > s."""


class SingularityError(ArithmeticError):
    """A step coefficient would divide by a (numerically) zero variance."""


class DegenerateScheduleError(ValueError):
    """The schedule has zero total variance where a ratio by it is required."""


class TrainingDivergedError(RuntimeError):
    """A training loss became non-finite."""


class GradientCheckError(RuntimeError):
    """An analytic gradient disagrees with finite differences."""


class StageOrderError(RuntimeError):
    """A pipeline stage was run before the stage it depends on."""


class ConfigError(ValueError):
    """Unknown or malformed configuration key."""


class WavFormatError(ValueError):
    """Malformed or unsupported RIFF/WAVE data."""

"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class InvalidInputError(PipelineError, ValueError):
    """An operation received data violating its preconditions."""


class NumericError(PipelineError, ArithmeticError):
    """A computation produced non-finite or inconsistent values."""


class FormatError(PipelineError, ValueError):
    """A persisted artifact or manifest could not be parsed."""


class ConfigError(PipelineError, RuntimeError):
    """A stage was invoked with missing prerequisites or bad configuration."""

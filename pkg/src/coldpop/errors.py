"""Exception hierarchy. Each class maps to one CLI exit code."""


class ColdPopError(Exception):
    exit_code = 1


class ConfigError(ColdPopError, ValueError):
    exit_code = 2


class DataError(ColdPopError, ValueError):
    exit_code = 3


class NumericalError(ColdPopError, ArithmeticError):
    exit_code = 4


class StageError(ColdPopError):
    """Wraps a failure inside a pipeline stage, keeping the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)

class AvibenchError(Exception):
    """Base class for pipeline errors."""


class DatasetError(AvibenchError):
    pass


class ManifestParseError(DatasetError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DecodeError(DatasetError):
    pass


class SpecError(AvibenchError):
    pass


class ConfigError(AvibenchError):
    pass


class SplitError(AvibenchError):
    pass


class ShapeError(AvibenchError):
    pass


class TrainingDiverged(AvibenchError):
    """Raised when the loss becomes non-finite."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class NumericError(AvibenchError):
    pass


class SearchComplete(AvibenchError):
    """No unevaluated candidate is left to propose."""


class SearchFailed(AvibenchError):
    pass


class StageError(AvibenchError):
    """A prerequisite pipeline stage has not been run (or is stale)."""

    def __init__(self, message: str, stage: str):
        super().__init__(message)
        self.stage = stage

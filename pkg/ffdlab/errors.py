class FfdlabError(Exception):
    """Base class for every error raised by ffdlab."""


# data ingest


class MissingColumn(FfdlabError):
    def __init__(self, column: str):
        super().__init__(f"missing column: {column}")
        self.column = column


class UnparseableRow(FfdlabError):
    def __init__(self, line: int, reason: str = ""):
        super().__init__(f"unparseable row at line {line}: {reason}".rstrip(": "))
        self.line = line


class NonMonotonicTimestamp(FfdlabError):
    def __init__(self, line: int, timestamp: int):
        super().__init__(
            f"duplicate or non-increasing timestamp {timestamp} at line {line}"
        )
        self.line = line
        self.timestamp = timestamp


class OHLCViolation(FfdlabError):
    def __init__(self, line: int, reason: str = ""):
        message = f"OHLC invariant violated at line {line}: {reason}"
        super().__init__(message.rstrip(": "))
        self.line = line


class IncompatiblePeriod(FfdlabError):
    pass


# numerics


class NonConvergence(FfdlabError):
    pass


class SeriesTooShort(FfdlabError):
    pass


class DegenerateVariance(FfdlabError):
    pass


class DegenerateInput(FfdlabError):
    pass


class SingularRegression(FfdlabError):
    pass


class NoPassingD(FfdlabError):
    pass


class DegenerateBarrier(FfdlabError):
    def __init__(self, entry_index: int):
        super().__init__(f"zero volatility at entry {entry_index}")
        self.entry_index = entry_index


class ConstantColumn(FfdlabError):
    def __init__(self, name: str):
        super().__init__(f"constant column: {name}")
        self.name = name


class RankDeficient(FfdlabError):
    pass


class AlignmentMismatch(FfdlabError):
    pass


class DimensionMismatch(FfdlabError):
    pass


class NonFiniteLoss(FfdlabError):
    def __init__(self, epoch: int, learning_rate: float):
        super().__init__(
            f"loss became non-finite at epoch {epoch} (learning_rate={learning_rate})"
        )
        self.epoch = epoch
        self.learning_rate = learning_rate


class LengthMismatch(FfdlabError):
    pass


class EmptyInput(FfdlabError):
    pass


class NonPositiveVolatility(FfdlabError):
    def __init__(self, index: int):
        super().__init__(f"non-positive volatility at bar {index}")
        self.index = index


class DegenerateCurve(FfdlabError):
    pass


class InvalidBounds(FfdlabError):
    pass


class ObjectiveFailure(FfdlabError):
    def __init__(self, candidate, cause: Exception):
        super().__init__(f"objective failed for candidate {candidate}: {cause}")
        self.candidate = candidate
        self.cause = cause


class InvalidParams(FfdlabError):
    pass


# orchestration


class SweepRowError(FfdlabError):
    def __init__(self, d: float, cause: Exception):
        super().__init__(f"d-sweep failed at d={d}: {cause}")
        self.d = d
        self.cause = cause


class StageError(FfdlabError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(FfdlabError):
    pass

"""Exception hierarchy shared by every runoffbench module."""


class RunoffBenchError(Exception):
    """Base class for all library errors."""


class ShapeError(RunoffBenchError, ValueError):
    """Incompatible tensor shapes, bad axes, or out-of-bounds slices."""


class ParameterError(RunoffBenchError, ValueError):
    """An argument falls outside its documented domain."""


class ContractError(RunoffBenchError, RuntimeError):
    """A call violates a usage contract (e.g. backward on a non-scalar)."""


class ParseError(RunoffBenchError, ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class IngestionError(RunoffBenchError, ValueError):
    """Structurally valid files whose content breaks the record contract."""


class StatsError(RunoffBenchError, ValueError):
    pass


class FusionError(RunoffBenchError, ValueError):
    pass


class LossError(RunoffBenchError, ValueError):
    pass


class TrainingError(RunoffBenchError, RuntimeError):
    def __init__(self, message, iteration=None, parameter=None):
        self.iteration = iteration
        self.parameter = parameter
        super().__init__(message)


class MetricUndefinedError(RunoffBenchError, ValueError):
    pass


class CheckpointError(RunoffBenchError, ValueError):
    pass

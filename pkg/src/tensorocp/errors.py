class InvalidMeshError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class SolverError(RuntimeError):
    """Krylov solve failed; ``report`` carries the SolveReport when available."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class DivergenceError(SolverError):
    pass


class NotSPDError(SolverError):
    pass


class OracleSizeError(ValueError):
    pass

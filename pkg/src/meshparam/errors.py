"""Exception hierarchy shared by every module."""


class MeshParamError(Exception):
    """Base class; the CLI maps any subclass to exit code 1."""


class DesignationError(MeshParamError, ValueError):
    """Malformed or unsupported NACA designation."""


class ParseError(MeshParamError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatVariantError(ParseError):
    """A recognised but unsupported file layout (e.g. Lednicer .dat)."""


class DegenerateGeometryError(MeshParamError, ValueError):
    pass


class UnsupportedDimensionError(ParseError):
    pass


class MissingMarkerError(MeshParamError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing marker"


class ContractError(MeshParamError, ValueError):
    """Raised when a caller violates a documented pre-condition."""


class TrainingDivergedError(MeshParamError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(f"{message} {self.diagnostics}" if diagnostics else message)


class SamplingError(MeshParamError, RuntimeError):
    pass


class EvaluationError(MeshParamError, RuntimeError):
    pass


class EvaluatorFailure(EvaluationError):
    """Signals the optimizer that the evaluator could not produce a result."""


class ReparameterizationError(MeshParamError, RuntimeError):
    pass

"""Exception hierarchy shared by every module.

Each class carries a short ``category`` string so the CLI can report a
machine-readable failure reason.
"""


class InferostaticError(Exception):
    category = "error"


class InputShapeError(InferostaticError, ValueError):
    category = "input_shape"


class DomainError(InferostaticError, ValueError):
    category = "domain"


class BoundaryError(DomainError):
    category = "boundary"


class DegenerateWeightError(InferostaticError, ZeroDivisionError):
    category = "degenerate_weight"


class TrainingDivergenceError(InferostaticError, FloatingPointError):
    category = "divergence"

    def __init__(self, message, epoch=None, batch=None, instance=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.instance = instance


class ConfigurationError(InferostaticError, ValueError):
    category = "config"


class UnsupportedBaseError(ConfigurationError):
    category = "unsupported_base"


class SchemaError(InferostaticError, ValueError):
    category = "schema"


class SchemaVersionError(SchemaError):
    category = "schema_version"


class ParseError(SchemaError):
    category = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TaskMismatchError(InferostaticError, ValueError):
    category = "task_mismatch"


class SearchDivergenceError(InferostaticError, FloatingPointError):
    category = "search_divergence"

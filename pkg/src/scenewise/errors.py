"""Exception hierarchy shared by all scenewise modules."""


class ScenewiseError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(ScenewiseError, ValueError):
    pass


class ConfigurationError(ScenewiseError, ValueError):
    pass


class GraphValidationError(ScenewiseError, ValueError):
    pass


class GraphParseError(GraphValidationError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class FusionUnsupportedError(ScenewiseError):
    pass


class NonFiniteError(ScenewiseError, FloatingPointError):
    pass


class FormatError(ScenewiseError, ValueError):
    """Malformed manifest or file, with optional location."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class CheckpointError(ScenewiseError):
    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path is not None else message)


class RegistryError(ScenewiseError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DataError(ScenewiseError):
    pass


class InvalidProfileError(ScenewiseError, ValueError):
    pass


class BankError(ScenewiseError):
    pass


class BudgetError(ScenewiseError):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class MetricError(ScenewiseError, ValueError):
    pass

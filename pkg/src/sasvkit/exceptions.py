"""Exception hierarchy shared by every sasvkit module."""


class SASVError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SASVError, ValueError):
    """Input violates a documented precondition."""


class ParseError(ValidationError):
    """A manifest, trial or score file line could not be parsed."""

    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where += f"{path}"
        if lineno is not None:
            where += f":{lineno}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(ValidationError):
    """Invalid configuration value; ``field`` is the dotted path."""

    def __init__(self, field, message):
        self.field = field
        self.reason = message
        super().__init__(f"{field}: {message}")


class LabelLookupError(SASVError, KeyError):
    """A (speaker, source) pair is absent from a closed-set label map."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class TrainingDivergedError(SASVError, RuntimeError):
    """Loss became non-finite during optimisation."""

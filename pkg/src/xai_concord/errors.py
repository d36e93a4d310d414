class XaiConcordError(Exception):
    """Base class for all errors raised by this package."""


class DataError(XaiConcordError, ValueError):
    """Malformed input data (CSV content, synthetic spec, shapes)."""


class ModelError(XaiConcordError, ValueError):
    """Invalid model structure or a training failure."""


class ExplainerError(XaiConcordError, ValueError):
    """Explainer/model mismatch or an invalid explainer request."""


class ConfigError(XaiConcordError, ValueError):
    """Pipeline configuration failed validation.

    ``problems`` holds one message per failed check.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


class StageError(XaiConcordError, RuntimeError):
    """A pipeline stage failed; ``stage`` names where."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")

from typing import Optional


class IlmError(Exception):
    """
    Base error for the pipeline. Every failure path raises a subclass so the
    CLI can map it to a category and an exit code.
    """

    category = "error"
    exit_code = 1

    def __init__(self, detail: str, *, hint: Optional[str] = None):
        super().__init__(detail)
        self.detail = detail
        self.hint = hint

    def __str__(self) -> str:
        if self.hint:
            return f"{self.detail} ({self.hint})"
        return self.detail


class UsageError(IlmError):
    category = "usage"
    exit_code = 2


class ConfigError(IlmError):
    category = "config"
    exit_code = 3


class DimensionError(IlmError):
    category = "dimension"
    exit_code = 10


class DegenerateInputError(IlmError):
    category = "degenerate"
    exit_code = 11


class NumericalError(IlmError):
    category = "numerical"
    exit_code = 12


class NonFiniteError(NumericalError):
    """Raised when a forward op produces NaN/Inf. Carries the op name."""

    def __init__(self, op: str, detail: Optional[str] = None):
        self.op = op
        super().__init__(detail or f"non-finite values produced by op '{op}'")


class VocabularyError(IlmError):
    category = "vocabulary"
    exit_code = 13


class ParseError(IlmError):
    category = "parse"
    exit_code = 20

    def __init__(self, detail: str, *, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {detail}" if where else detail)


class CatalogError(IlmError):
    category = "catalog"
    exit_code = 21


class TemplateError(IlmError):
    category = "template"
    exit_code = 22


class StorageError(IlmError):
    category = "storage"
    exit_code = 30


class DependencyError(IlmError):
    category = "dependency"
    exit_code = 31

    def __init__(self, detail: str, *, stage: Optional[str] = None):
        self.stage = stage
        super().__init__(detail)


class LockError(IlmError):
    category = "lock"
    exit_code = 32

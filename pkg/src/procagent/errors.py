"""Exception and warning types shared across the package."""

from __future__ import annotations


class ProcAgentError(Exception):
    """Base class for all package errors."""


class WrongRequestKind(ProcAgentError):
    pass


class UnknownComponent(ProcAgentError):
    def __init__(self, name: str, suggestions: list[str] | None = None):
        self.name = name
        self.suggestions = list(suggestions or [])
        msg = f"unknown component {name!r}"
        if self.suggestions:
            msg += f" (did you mean: {', '.join(self.suggestions)})"
        super().__init__(msg)


class InvalidUnitParams(ProcAgentError):
    def __init__(self, key: str, reason: str):
        self.key = key
        super().__init__(f"invalid parameter {key!r}: {reason}")


class InvalidPort(ProcAgentError):
    pass


class PortOccupied(ProcAgentError):
    pass


class UnknownUnit(ProcAgentError):
    pass


class SchemaError(ProcAgentError):
    """Malformed flowsheet document; ``pointer`` is a JSON-pointer-style location."""

    def __init__(self, pointer: str, reason: str):
        self.pointer = pointer
        self.reason = reason
        super().__init__(f"{pointer}: {reason}")


class PropertyRangeExceeded(ProcAgentError):
    def __init__(self, message: str, unit: str | None = None):
        self.unit = unit
        super().__init__(message)


class InvalidKValues(ProcAgentError):
    pass


class InfeasibleConversion(ProcAgentError):
    def __init__(self, message: str, unit: str | None = None):
        self.unit = unit
        super().__init__(message)


class SeedGenerationFailed(ProcAgentError):
    pass


class NoRevisitCandidate(ProcAgentError):
    pass


class EmptyTask(ProcAgentError):
    pass


class UnderspecifiedTask(ProcAgentError):
    pass


class LlmUnavailable(ProcAgentError):
    pass


class ToolArgumentError(ProcAgentError):
    pass


class ConfigError(ProcAgentError):
    pass


# -- warnings -----------------------------------------------------------------


class DuplicateChildren(UserWarning):
    pass


class FallbackTemplate(UserWarning):
    pass


class LoopCapReached(UserWarning):
    pass

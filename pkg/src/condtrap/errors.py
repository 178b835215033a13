"""Exception hierarchy shared by every stage of the toolchain."""
from __future__ import annotations


class CondTrapError(Exception):
    """Base class for all toolchain errors."""


class ParseError(CondTrapError):
    def __init__(self, message: str, line: int, col: int) -> None:
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class UnboundOperand(CondTrapError, KeyError):
    def __init__(self, name: str) -> None:
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unbound operand {self.name!r}"


class DomainTooLarge(CondTrapError):
    pass


class UnsupportedConstruct(CondTrapError):
    pass


class UndefinedLabel(CondTrapError):
    def __init__(self, label: str) -> None:
        super().__init__(f"undefined label {label!r}")
        self.label = label


class MachineError(CondTrapError):
    """Raised when the interpreter traps."""


class StepLimitExceeded(MachineError):
    pass


class StackOverflow(MachineError):
    pass


class StackUnderflow(MachineError):
    pass


class ToolchainMismatch(CondTrapError):
    """The correct-mode compilation disagrees with the reference evaluator.

    This is never a finding about the input; it means the toolchain itself
    is broken.
    """


class NotFound(CondTrapError):
    pass


class SearchSpaceExceeded(CondTrapError):
    pass

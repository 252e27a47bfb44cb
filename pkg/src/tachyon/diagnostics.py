"""Source spans and diagnostics shared by the parser, type checker and validators."""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Span:
    """Byte range in an input text, with 1-based line/column of the start."""

    start: int = 0
    end: int = 0
    line: int = 0
    col: int = 0

    def merge(self, other: "Span") -> "Span":
        if other is None:
            return self
        return Span(min(self.start, other.start), max(self.end, other.end),
                    self.line, self.col)


NO_SPAN = Span()


@dataclass
class Diagnostic:
    message: str
    span: Span = field(default_factory=Span)
    severity: str = "error"  # "error" | "warning"

    def render(self, source: str | None = None) -> str:
        loc = f"{self.span.line}:{self.span.col}: " if self.span.line else ""
        return f"{loc}{self.severity}: {self.message}"


class TachyonError(Exception):
    """Base class for toolkit errors carrying a diagnostic."""

    def __init__(self, message: str, span: Span = NO_SPAN):
        super().__init__(message)
        self.diagnostic = Diagnostic(message, span)

    @property
    def span(self) -> Span:
        return self.diagnostic.span


class ParseError(TachyonError):
    pass


class TypeError_(TachyonError):
    """Static type error in an expression or update."""


class EvalError(TachyonError):
    """Runtime evaluation error (division by zero, overflow, bad index)."""

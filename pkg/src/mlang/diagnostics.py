"""Shared diagnostic records.

Printed format is fixed so tests and scripts can assert on it:
    severity file:line:col RULE message
Rule labels for semantic errors match the typing-rule names (binary-div,
cmp-eq, ...).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .syntax.tokens import Span

SEVERITIES = ("error", "warning")


@dataclass
class Diagnostic:
    severity: str
    span: Optional[Span]
    rule: str
    message: str

    def __str__(self):
        where = str(self.span) if self.span else "<unknown>"
        return f"{self.severity} {where} {self.rule} {self.message}"


def error(span, rule, message) -> Diagnostic:
    return Diagnostic("error", span, rule, message)


def warning(span, rule, message) -> Diagnostic:
    return Diagnostic("warning", span, rule, message)


def has_errors(diags) -> bool:
    return any(d.severity == "error" for d in diags)

"""Tokenizer for M source files."""

from __future__ import annotations

from dataclasses import dataclass


class LexError(Exception):
    def __init__(self, message, span):
        super().__init__(message)
        self.message = message
        self.span = span


@dataclass(frozen=True)
class Span:
    file: str
    line: int
    column: int
    length: int

    def __str__(self):
        return f"{self.file}:{self.line}:{self.column}"


@dataclass(frozen=True)
class Token:
    kind: str  # one of KINDS
    lexeme: str
    span: Span

    def __repr__(self):
        return f"Token({self.kind}, {self.lexeme!r})"


KINDS = (
    "identifier",
    "keyword",
    "integer-literal",
    "decimal-literal",
    "string-literal",
    "char-literal",
    "timespan-literal",
    "annotation-body",
    "operator",
    "punctuation",
    "eof",
)

# Reserved words of the grammar. Type names (int8..uint64, float, double,
# actor, ...) are predefined identifiers, not keywords, so they stay usable
# in identifier positions.
KEYWORDS = frozenset({
    "include", "const", "var", "def", "main", "do", "function", "external",
    "return", "if", "else", "cases", "case", "otherwise", "while", "foreach",
    "in", "break", "cancel", "with", "self", "true", "false", "null", "as",
    "any", "bool", "char", "string", "timespan",
    "array", "list", "set", "map", "tuple", "record", "class", "enum",
    "library", "use",
})

TIME_UNITS = ("ns", "us", "ms", "s", "m", "h", "d")

# Longest match first.
OPERATORS = (
    "{=", "=}",
    "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
    "+=", "-=", "*=", "/=", "%=", "++", "--",
    "+", "-", "*", "/", "%", "<", ">", "=", "!", "&", "|", "^", "~", "?",
)

PUNCTUATION = ("(", ")", "[", "]", "{", "}", ",", ";", ":", ".", "@", "#")


def tokenize(source: str, origin: str = "<input>") -> list[Token]:
    """Tokenize M source text. Raises LexError on malformed input."""
    return _Lexer(source, origin).run()


class _Lexer:
    def __init__(self, source, origin):
        self.src = source
        self.origin = origin
        self.pos = 0
        self.line = 1
        self.col = 1
        self.tokens = []

    def run(self):
        while self.pos < len(self.src):
            ch = self.src[self.pos]
            if ch in " \t\r\n":
                self._advance(1)
            elif ch == "/" and self._peek(1) == "/":
                self._skip_line_comment()
            elif ch == "/" and self._peek(1) == "*":
                raise LexError("block comments are not supported, use //",
                               self._span_here(2))
            elif ch.isdigit():
                self._lex_number()
            elif ch.isalpha() or ch == "_":
                self._lex_word()
            elif ch == '"':
                self._lex_string()
            elif ch == "'":
                self._lex_char()
            elif ch == "{" and self._peek(1) == "=":
                self._lex_annotation_body()
            else:
                self._lex_symbol()
        self.tokens.append(Token("eof", "", self._span_here(0)))
        return self.tokens

    def _peek(self, off=0):
        p = self.pos + off
        return self.src[p] if p < len(self.src) else ""

    def _advance(self, n):
        for _ in range(n):
            if self.src[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def _span_here(self, length):
        return Span(self.origin, self.line, self.col, length)

    def _emit(self, kind, start, start_span):
        lexeme = self.src[start:self.pos]
        self.tokens.append(Token(kind, lexeme, Span(
            start_span.file, start_span.line, start_span.column, len(lexeme))))

    def _skip_line_comment(self):
        while self.pos < len(self.src) and self.src[self.pos] != "\n":
            self._advance(1)

    def _match_unit(self):
        """Return the time unit at the current position, longest first."""
        rest = self.src[self.pos:self.pos + 2]
        for unit in ("ns", "us", "ms"):
            if rest.startswith(unit):
                # "ms" wins over "m" only when not followed by another letter
                # that would extend an identifier; units are never followed by
                # identifier letters in well-formed literals.
                return unit
        one = self._peek(0)
        if one in ("s", "m", "h", "d"):
            return one
        return None

    def _scan_decimal(self):
        """Consume digits with optional fraction, return True if any."""
        if not self._peek(0).isdigit():
            return False
        while self._peek(0).isdigit():
            self._advance(1)
        if self._peek(0) == "." and self._peek(1).isdigit():
            self._advance(1)
            while self._peek(0).isdigit():
                self._advance(1)
            return True
        return False

    def _lex_number(self):
        start = self.pos
        span = self._span_here(0)
        had_fraction = self._scan_decimal()
        unit = self._match_unit()
        if unit is not None:
            # timespan-literal: (DECIMAL unit)+
            self._advance(len(unit))
            while self._peek(0).isdigit():
                self._scan_decimal()
                unit = self._match_unit()
                if unit is None:
                    raise LexError("malformed timespan literal: expected a "
                                   "time unit (ns/us/ms/s/m/h/d)",
                                   self._span_here(1))
                self._advance(len(unit))
            self._emit("timespan-literal", start, span)
            return
        if self._peek(0) in ("e", "E") and (
                self._peek(1).isdigit()
                or (self._peek(1) in "+-" and self._peek(2).isdigit())):
            self._advance(1)
            if self._peek(0) in "+-":
                self._advance(1)
            while self._peek(0).isdigit():
                self._advance(1)
            self._emit("decimal-literal", start, span)
            return
        if self._peek(0).isalpha() or self._peek(0) == "_":
            raise LexError(f"malformed number: unexpected {self._peek(0)!r}",
                           self._span_here(1))
        self._emit("decimal-literal" if had_fraction else "integer-literal",
                   start, span)

    def _lex_word(self):
        start = self.pos
        span = self._span_here(0)
        while self._peek(0).isalnum() or self._peek(0) == "_":
            self._advance(1)
        word = self.src[start:self.pos]
        kind = "keyword" if word in KEYWORDS else "identifier"
        self._emit(kind, start, span)

    def _lex_string(self):
        start = self.pos
        span = self._span_here(1)
        self._advance(1)
        while True:
            ch = self._peek(0)
            if ch == "" or ch == "\n":
                raise LexError("unterminated string literal", span)
            if ch == "\\":
                if self._peek(1) == "":
                    raise LexError("unterminated string literal", span)
                self._advance(2)
                continue
            self._advance(1)
            if ch == '"':
                break
        self._emit("string-literal", start, span)

    def _lex_char(self):
        start = self.pos
        span = self._span_here(1)
        self._advance(1)
        if self._peek(0) == "\\":
            self._advance(2)
        elif self._peek(0) not in ("", "'", "\n"):
            self._advance(1)
        if self._peek(0) != "'":
            raise LexError("unterminated char literal", span)
        self._advance(1)
        self._emit("char-literal", start, span)

    def _lex_annotation_body(self):
        # '{=' raw text '=}' — body preserved verbatim for generators.
        start = self.pos
        span = self._span_here(2)
        self._advance(2)
        while True:
            if self.pos >= len(self.src):
                raise LexError("unterminated annotation body (missing '=}')",
                               span)
            if self._peek(0) == "=" and self._peek(1) == "}":
                self._advance(2)
                break
            self._advance(1)
        self._emit("annotation-body", start, span)

    def _lex_symbol(self):
        span = self._span_here(1)
        for op in OPERATORS:
            if self.src.startswith(op, self.pos):
                start = self.pos
                self._advance(len(op))
                self._emit("operator", start, span)
                return
        ch = self._peek(0)
        if ch in PUNCTUATION:
            start = self.pos
            self._advance(1)
            self._emit("punctuation", start, span)
            return
        raise LexError(f"unknown character {ch!r}", span)

"""Front end: tokenizer, parser, AST, pretty-printer, include resolution."""

from . import ast
from .includes import IncludeError, load_model, parse_model_source
from .parser import parse, parse_source
from .printer import to_source
from .tokens import LexError, Span, Token, tokenize

__all__ = [
    "ast", "tokenize", "parse", "parse_source", "to_source",
    "load_model", "parse_model_source",
    "Token", "Span", "LexError", "IncludeError",
]

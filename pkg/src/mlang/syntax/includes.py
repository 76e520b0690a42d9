"""Include resolution: parse a model file and splice its includes.

Inclusion follows C-style textual composition: an included file's top-level
declarations are spliced before the including file's declarations. A file is
included at most once per compilation (idempotent) and cycles are rejected
with the full include chain. "mcore.m" falls back to the embedded prelude
when no file of that name is found on disk.
"""

from __future__ import annotations

import hashlib
import os

from .. import diagnostics as diag
from . import ast
from .parser import parse_source
from .tokens import LexError, Span


class IncludeError(Exception):
    def __init__(self, message, span=None, chain=()):
        super().__init__(message)
        self.message = message
        self.span = span
        self.chain = tuple(chain)


def load_model(path, search_paths=(), implicit_prelude=True):
    """Load, parse and include-merge a model file.

    Returns (Program, diagnostics, source_hash). The program has all included
    declarations spliced in; diagnostics carry lex/syntax/include errors from
    every file touched.
    """
    resolver = _Resolver(search_paths, implicit_prelude)
    program = resolver.load(os.path.abspath(path))
    return program, resolver.diags, resolver.digest()


def parse_model_source(source, origin="<input>", search_paths=(),
                       implicit_prelude=True):
    """Like load_model but for in-memory source (tests, snippets)."""
    resolver = _Resolver(search_paths, implicit_prelude)
    program = resolver.load_source(source, origin, base_dir=os.getcwd())
    return program, resolver.diags, resolver.digest()


class _Resolver:
    def __init__(self, search_paths, implicit_prelude):
        self.search_paths = [os.path.abspath(p) for p in search_paths]
        self.implicit_prelude = implicit_prelude
        self.diags: list[diag.Diagnostic] = []
        self.loaded: dict[str, ast.Program] = {}
        self.active: list[str] = []  # include chain for cycle reports
        self.hasher = hashlib.sha256()

    def digest(self):
        return self.hasher.hexdigest()

    def load(self, path):
        try:
            with open(path, encoding="utf-8") as fh:
                source = fh.read()
        except OSError as exc:
            self.diags.append(diag.error(
                Span(path, 1, 1, 0), "include", f"cannot read file: {exc}"))
            return ast.Program(origin=path)
        return self.load_source(source, path, os.path.dirname(path))

    def load_source(self, source, origin, base_dir):
        self.hasher.update(source.encode("utf-8"))
        program = self._parse(source, origin)
        includes = list(program.includes)
        if self.implicit_prelude and not any(
                os.path.basename(i.path) == "mcore.m" for i in includes):
            includes.insert(0, ast.Include("mcore.m", span=program.span))
        merged = ast.Program(origin=origin, span=program.span,
                             annotations=list(program.annotations),
                             main=program.main)
        self.active.append(origin)
        try:
            for inc in includes:
                sub = self._resolve_include(inc, base_dir)
                if sub is None:
                    continue
                merged.annotations.extend(sub.annotations)
                merged.decls.extend(sub.decls)
                if sub.main is not None:
                    if merged.main is not None:
                        self.diags.append(diag.error(
                            sub.main.span, "include",
                            f"included file {sub.origin} brings a second "
                            "main block"))
                    else:
                        merged.main = sub.main
        finally:
            self.active.pop()
        merged.decls.extend(program.decls)
        return merged

    def _parse(self, source, origin):
        try:
            program, errors = parse_source(source, origin)
        except LexError as exc:
            self.diags.append(diag.error(exc.span, "lex", exc.message))
            return ast.Program(origin=origin)
        for err in errors:
            self.diags.append(diag.error(err.span, "syntax", err.message))
        return program

    def _resolve_include(self, inc: ast.Include, base_dir):
        path = self._find(inc.path, base_dir)
        if path is None:
            if os.path.basename(inc.path) == "mcore.m":
                return self._load_prelude()
            chain = " -> ".join(self.active + [inc.path])
            self.diags.append(diag.error(
                inc.span, "include",
                f'included file "{inc.path}" not found (chain: {chain})'))
            return None
        if path in self.active:
            chain = " -> ".join(self.active + [path])
            self.diags.append(diag.error(
                inc.span, "include", f"include cycle: {chain}"))
            return None
        if path in self.loaded:  # idempotent inclusion
            return ast.Program(origin=path)
        try:
            with open(path, encoding="utf-8") as fh:
                source = fh.read()
        except OSError as exc:
            self.diags.append(diag.error(
                inc.span, "include", f'cannot read "{inc.path}": {exc}'))
            return None
        sub = self.load_source(source, path, os.path.dirname(path))
        self.loaded[path] = sub
        return sub

    def _load_prelude(self):
        key = "<mcore.m>"
        if key in self.loaded:
            return ast.Program(origin=key)
        from ..stdlib import PRELUDE_SOURCE
        self.hasher.update(PRELUDE_SOURCE.encode("utf-8"))
        sub = self._parse(PRELUDE_SOURCE, "mcore.m")
        self.loaded[key] = sub
        return sub

    def _find(self, name, base_dir):
        candidates = [os.path.join(base_dir, name)]
        candidates += [os.path.join(p, name) for p in self.search_paths]
        env = os.environ.get("M_INCLUDE_PATH")
        if env:
            candidates += [os.path.join(p, name)
                           for p in env.split(os.pathsep) if p]
        for c in candidates:
            if os.path.isfile(c):
                return os.path.abspath(c)
        return None

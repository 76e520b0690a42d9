"""Recursive-descent parser for M.

Produces a RawAst (Program) from a token stream. Syntax errors are collected
with spans and the parser resynchronizes at statement boundaries so several
errors can be reported in one pass.

Known deviations from the published grammar, required by the example corpus:
  * string literals support ${postfixExpr} interpolation,
  * shorthand collection literals [1,2,3] and {"k":v},
  * enum type definitions (used by every state-machine example),
  * map literal keys are expressions, not bare identifiers,
  * postfix ++/-- sugar (desugared to compound assignment),
  * `expr as Type` cast syntax,
  * const/function/type declarations may interleave and main is optional
    (include files have no main),
  * foreach loop variables may carry type annotations; `entries` is accepted
    as an alias of `pairs`.
"""

from __future__ import annotations

from . import ast
from .tokens import Span, Token, tokenize

ASSIGN_OPS = ("=", "+=", "-=", "*=", "/=", "%=")

# binary operator precedence, loosest first
BINARY_LEVELS = (
    ("||",),
    ("&&",),
    ("|",),
    ("^",),
    ("&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("<<", ">>"),
    ("+", "-"),
    ("*", "/", "%"),
)

COLLECTION_KWS = ("array", "list", "set", "map")
TYPE_KEYWORDS = ("any", "bool", "char", "string", "timespan") + COLLECTION_KWS


class SyntaxErrorInfo:
    def __init__(self, message: str, span: Span):
        self.message = message
        self.span = span

    def __str__(self):
        return f"{self.span}: {self.message}"

    def __repr__(self):
        return f"SyntaxErrorInfo({self})"


class ParseAbort(Exception):
    """Internal signal: give up on the current statement and resync."""


def parse(tokens: list[Token], origin: str = "<input>"):
    """Parse a token list into (Program, errors)."""
    return _Parser(tokens, origin).parse_program()


def parse_source(source: str, origin: str = "<input>"):
    return parse(tokenize(source, origin), origin)


class _Parser:
    def __init__(self, tokens, origin):
        self.toks = tokens
        self.i = 0
        self.origin = origin
        self.errors: list[SyntaxErrorInfo] = []

    # -- token helpers ---------------------------------------------------

    def peek(self, off=0) -> Token:
        j = min(self.i + off, len(self.toks) - 1)
        return self.toks[j]

    def at(self, lexeme, kind=None, off=0) -> bool:
        t = self.peek(off)
        if kind is not None and t.kind != kind:
            return False
        return t.lexeme == lexeme

    def at_kind(self, kind, off=0) -> bool:
        return self.peek(off).kind == kind

    def advance(self) -> Token:
        t = self.toks[self.i]
        if self.i < len(self.toks) - 1:
            self.i += 1
        return t

    def expect(self, lexeme, what=None) -> Token:
        if self.peek().lexeme == lexeme and self.peek().kind != "eof":
            return self.advance()
        self.error(f"expected {lexeme!r}" + (f" {what}" if what else "")
                   + f", found {self._describe(self.peek())}")
        raise ParseAbort()

    def expect_ident(self, what="identifier") -> Token:
        if self.at_kind("identifier"):
            return self.advance()
        self.error(f"expected {what}, found {self._describe(self.peek())}")
        raise ParseAbort()

    @staticmethod
    def _describe(tok: Token) -> str:
        return "end of file" if tok.kind == "eof" else repr(tok.lexeme)

    def error(self, message, span=None):
        self.errors.append(SyntaxErrorInfo(message, span or self.peek().span))

    def sync_statement(self):
        """Skip to just after the next ';' or before the next '}'."""
        depth = 0
        while not self.at_kind("eof"):
            t = self.peek()
            if t.lexeme == ";" and depth == 0:
                self.advance()
                return
            if t.lexeme in ("(", "[", "{"):
                depth += 1
            elif t.lexeme in (")", "]"):
                depth = max(0, depth - 1)
            elif t.lexeme == "}":
                if depth == 0:
                    return
                depth -= 1
            self.advance()

    # -- program ----------------------------------------------------------

    def parse_program(self):
        prog = ast.Program(origin=self.origin, span=self.peek().span)
        while self.at("@"):
            try:
                prog.annotations.append(self.parse_annotation())
            except ParseAbort:
                self.sync_statement()
        while self.at("include", "keyword"):
            try:
                prog.includes.append(self.parse_include())
            except ParseAbort:
                self.sync_statement()
        while not self.at_kind("eof"):
            t = self.peek()
            try:
                if t.lexeme == "const" and t.kind == "keyword":
                    prog.decls.append(self.parse_const_decl())
                elif t.lexeme in ("function", "external") and t.kind == "keyword":
                    prog.decls.append(self.parse_function_decl())
                elif t.lexeme == "def" and t.kind == "keyword":
                    prog.decls.append(self.parse_type_decl())
                elif t.lexeme == "main" and t.kind == "keyword":
                    if prog.main is not None:
                        self.error("duplicate main block", t.span)
                    self.advance()
                    prog.main = ast.MainBlock(block=self.parse_block(), span=t.span)
                elif t.lexeme == "include" and t.kind == "keyword":
                    self.error("include statements must precede declarations",
                               t.span)
                    self.advance()
                    self.sync_statement()
                elif t.lexeme in ("library", "use") and t.kind == "keyword":
                    self.error(f"'{t.lexeme}' is reserved and not yet supported",
                               t.span)
                    self.advance()
                    self.sync_statement()
                else:
                    self.error("expected a declaration or main block, found "
                               + self._describe(t))
                    self.advance()
                    self.sync_statement()
            except ParseAbort:
                self.sync_statement()
        return prog, self.errors

    def parse_annotation(self):
        span = self.expect("@").span
        name = self.expect_ident("annotation name").lexeme
        props = self.parse_properties() if self.at("[") else []
        body = None
        if self.at_kind("annotation-body"):
            raw = self.advance().lexeme
            body = raw[2:-2]  # strip {= =}
        return ast.Annotation(name, props, body, span=span)

    def parse_include(self):
        span = self.expect("include").span
        tok = self.peek()
        if tok.kind != "string-literal":
            self.error("expected a file name string after 'include'")
            raise ParseAbort()
        self.advance()
        self.expect(";")
        return ast.Include(tok.lexeme[1:-1], span=span)

    def parse_properties(self) -> list[ast.Property]:
        self.expect("[")
        props = [self._parse_one_property()]
        while self.at(","):
            self.advance()
            props.append(self._parse_one_property())
        self.expect("]")
        return props

    # -- declarations ------------------------------------------------------

    def parse_const_decl(self):
        span = self.expect("const").span
        name = self.expect_ident("constant name").lexeme
        self.expect(":")
        ty = self.parse_type()
        self.expect("=")
        value = self.parse_expr()
        self.expect(";")
        return ast.ConstDecl(name, ty, value, span=span)

    def parse_var_decl(self):
        span = self.expect("var").span
        props = self.parse_properties() if self.at("[") else []
        name = self.expect_ident("variable name").lexeme
        self.expect(":")
        ty = self.parse_type()
        value = None
        if self.at("="):
            self.advance()
            value = self.parse_expr()
        self.expect(";")
        return ast.VarDecl(name, ty, value, props, span=span)

    def parse_function_decl(self):
        external = False
        span = self.peek().span
        if self.at("external", "keyword"):
            external = True
            self.advance()
        self.expect("function")
        name = self._parse_function_name()
        self.expect("(")
        params = []
        if not self.at(")"):
            params = self.parse_formal_args(allow_placeholder=external)
        self.expect(")")
        ret = None
        if self.at(":"):
            self.advance()
            ret = self.parse_type(allow_placeholder=external)
        if external:
            self.expect(";")
            return ast.FunctionDecl(name, params, ret, None, True, span=span)
        body = self.parse_block()
        return ast.FunctionDecl(name, params, ret, body, False, span=span)

    def _parse_function_name(self) -> str:
        # dotted names route to one external, e.g. string.format
        tok = self.peek()
        if tok.kind == "identifier" or (tok.kind == "keyword"
                                        and tok.lexeme == "string"):
            self.advance()
        else:
            self.error("expected a function name")
            raise ParseAbort()
        parts = [tok.lexeme]
        while self.at("."):
            self.advance()
            parts.append(self.expect_ident("name after '.'").lexeme)
        return ".".join(parts)

    def parse_formal_args(self, allow_placeholder=False):
        params = []
        while True:
            name = self.expect_ident("parameter name").lexeme
            self.expect(":")
            ty = self.parse_type(allow_placeholder=allow_placeholder)
            params.append((name, ty))
            if self.at(","):
                self.advance()
                continue
            return params

    def parse_type_decl(self):
        span = self.expect("def").span
        name = self.expect_ident("type name").lexeme
        target = self.parse_type_definition()
        self.expect(";")
        return ast.TypeDecl(name, target, span=span)

    def parse_type_definition(self):
        t = self.peek()
        if t.lexeme == "tuple" and t.kind == "keyword":
            return self.parse_tuple_type()
        if t.lexeme == "record" and t.kind == "keyword":
            return self.parse_record_type()
        if t.lexeme == "enum" and t.kind == "keyword":
            return self.parse_enum_type()
        if t.lexeme == "class" and t.kind == "keyword":
            return self.parse_class_type()
        return self.parse_type()

    def parse_type(self, allow_placeholder=False):
        t = self.peek()
        if t.lexeme == "#":
            if not allow_placeholder:
                self.error("type placeholders #T are only allowed in "
                           "external function signatures", t.span)
                raise ParseAbort()
            self.advance()
            name = self.expect_ident("placeholder name").lexeme
            return ast.Placeholder(name, span=t.span)
        if t.kind == "keyword" and t.lexeme in COLLECTION_KWS:
            return self.parse_collection_type()
        if t.kind == "keyword" and t.lexeme in ("any", "bool", "char",
                                                "string", "timespan"):
            self.advance()
            return ast.TypeName(t.lexeme, span=t.span)
        if t.kind == "keyword" and t.lexeme == "tuple":
            return self.parse_tuple_type()
        if t.kind == "identifier":
            self.advance()
            return ast.TypeName(t.lexeme, span=t.span)
        self.error(f"expected a type, found {self._describe(t)}")
        raise ParseAbort()

    def parse_collection_type(self):
        tok = self.advance()  # array/list/set/map
        ctor = tok.lexeme
        node = ast.CollectionTypeExpr(ctor, span=tok.span)
        if self.at("{"):
            self.advance()
            if ctor == "map":
                node.key = self.parse_type()
                self.expect(",")
                node.value = self.parse_type()
            else:
                node.elem = self.parse_type()
                if ctor == "array" and self.at(","):
                    self.advance()
                    size_tok = self.peek()
                    if size_tok.kind != "integer-literal":
                        self.error("expected an integer array size")
                        raise ParseAbort()
                    self.advance()
                    node.size = int(size_tok.lexeme)
            self.expect("}")
        return node

    def parse_tuple_type(self):
        span = self.expect("tuple").span
        self.expect("{")
        elems = [self.parse_type()]
        while self.at(","):
            self.advance()
            elems.append(self.parse_type())
        self.expect("}")
        return ast.TupleTypeExpr(elems, span=span)

    def parse_record_type(self):
        span = self.expect("record").span
        self.expect("{")
        fields = []
        while not self.at("}"):
            fname = self.expect_ident("field name").lexeme
            self.expect(":")
            fty = self.parse_type()
            self.expect(";")
            fields.append((fname, fty))
        self.expect("}")
        return ast.RecordTypeExpr(fields, span=span)

    def parse_enum_type(self):
        span = self.expect("enum").span
        self.expect("{")
        constants = []
        while True:
            cname = self.expect_ident("enum constant").lexeme
            code = None
            if self.at("="):
                self.advance()
                neg = False
                if self.at("-"):
                    neg = True
                    self.advance()
                ctok = self.peek()
                if ctok.kind != "integer-literal":
                    self.error("expected an integer enum code")
                    raise ParseAbort()
                self.advance()
                code = -int(ctok.lexeme) if neg else int(ctok.lexeme)
            constants.append((cname, code))
            if self.at(","):
                self.advance()
                continue
            break
        self.expect("}")
        return ast.EnumTypeExpr(constants, span=span)

    def parse_class_type(self):
        span = self.expect("class").span
        node = ast.ClassTypeExpr(span=span)
        if self.at("["):
            self.advance()
            kind_tok = self.advance()
            if kind_tok.lexeme not in ("object", "actor", "connection"):
                self.error("class kind must be object, actor or connection",
                           kind_tok.span)
            node.class_kind = kind_tok.lexeme
            self.expect("]")
        if self.at_kind("identifier") and self.peek().lexeme == "extends":
            self.advance()
            node.extends.append(self.expect_ident().lexeme)
            while self.at(","):
                self.advance()
                node.extends.append(self.expect_ident().lexeme)
        self.expect("{")
        while not self.at("}") and not self.at_kind("eof"):
            t = self.peek()
            try:
                if t.lexeme == "var":
                    node.members.append(self.parse_var_decl())
                elif t.lexeme == "const":
                    node.members.append(self.parse_const_decl())
                elif t.lexeme in ("function", "external"):
                    node.members.append(self.parse_function_decl())
                elif t.lexeme == "do":
                    node.members.append(self.parse_do_decl())
                else:
                    self.error("expected a class member (var/const/function/do)"
                               f", found {self._describe(t)}")
                    self.advance()
                    self.sync_statement()
            except ParseAbort:
                self.sync_statement()
        self.expect("}")
        return node

    def parse_do_decl(self):
        span = self.expect("do").span
        trigger, trigger_arg, extra = "receive", None, []
        if self.at("["):
            self.advance()
            first = self.peek()
            if first.lexeme == "on" and first.kind == "identifier":
                self.advance()
                self.expect("(")
                trigger = "on"
                trigger_arg = self.parse_expr()
                self.expect(")")
            elif first.lexeme == "every" and first.kind == "identifier":
                self.advance()
                self.expect("(")
                trigger = "every"
                trigger_arg = self.parse_expr()
                self.expect(")")
            else:
                extra.append(self._parse_one_property())
            while self.at(","):
                self.advance()
                extra.append(self._parse_one_property())
            self.expect("]")
        name = self.expect_ident("event name").lexeme
        params, has_parens = [], False
        if self.at("("):
            has_parens = True
            self.advance()
            if not self.at(")"):
                params = self.parse_formal_args()
            self.expect(")")
        body = self.parse_block()
        return ast.DoDecl(name, trigger, trigger_arg, extra, params,
                          has_parens, body, span=span)

    def _parse_one_property(self):
        tok = self.peek()
        if tok.kind not in ("identifier", "keyword"):
            self.error("expected a property name")
            raise ParseAbort()
        self.advance()
        value = None
        if self.at(":"):
            self.advance()
            value = self.parse_expr()
        return ast.Property(tok.lexeme, value, span=tok.span)

    # -- statements ----------------------------------------------------------

    def parse_block(self) -> ast.Block:
        span = self.expect("{").span
        block = ast.Block(span=span)
        while not self.at("}") and not self.at_kind("eof"):
            try:
                stmt = self.parse_statement()
                if stmt is not None:
                    block.statements.append(stmt)
            except ParseAbort:
                self.sync_statement()
        self.expect("}")
        return block

    def parse_statement(self):
        t = self.peek()
        if t.lexeme == ";":  # stray empty statement
            self.advance()
            return None
        if t.kind == "keyword":
            if t.lexeme == "var":
                return self.parse_var_decl()
            if t.lexeme == "const":
                return self.parse_const_decl()
            if t.lexeme == "return":
                self.advance()
                value = None if self.at(";") else self.parse_expr()
                self.expect(";")
                return ast.Return(value, span=t.span)
            if t.lexeme == "if":
                return self.parse_if()
            if t.lexeme == "cases":
                node = self.parse_cases()
                if self.at(";"):
                    self.advance()
                return node
            if t.lexeme == "while":
                self.advance()
                self.expect("(")
                cond = self.parse_expr()
                self.expect(")")
                body = self.parse_block()
                return ast.While(cond, body, span=t.span)
            if t.lexeme == "do":
                self.advance()
                body = self.parse_block()
                self.expect("while")
                self.expect("(")
                cond = self.parse_expr()
                self.expect(")")
                self.expect(";")
                return ast.DoWhile(body, cond, span=t.span)
            if t.lexeme == "foreach":
                return self.parse_foreach()
            if t.lexeme == "break":
                self.advance()
                self.expect(";")
                return ast.Break(span=t.span)
            if t.lexeme == "cancel":
                return self.parse_cancel()
            if t.lexeme in ("library", "use"):
                self.error(f"'{t.lexeme}' is reserved and not yet supported",
                           t.span)
                raise ParseAbort()
        if self._at_tell():
            return self.parse_tell()
        expr = self.parse_expr()
        self.expect(";")
        return ast.ExprStmt(expr, span=t.span)

    def _at_tell(self) -> bool:
        t = self.peek()
        if not (t.kind == "identifier"
                or (t.kind == "keyword" and t.lexeme == "self")):
            return False
        return self.at("!", off=1) and self.peek(2).kind == "identifier"

    def parse_tell(self):
        t = self.advance()
        receiver = (ast.SelfExpr(span=t.span) if t.lexeme == "self"
                    else ast.Name(t.lexeme, span=t.span))
        self.expect("!")
        event = self.expect_ident("event name").lexeme
        args = None
        if self.at("("):
            self.advance()
            args = []
            if not self.at(")"):
                args.append(self.parse_expr())
                while self.at(","):
                    self.advance()
                    args.append(self.parse_expr())
            self.expect(")")
        with_args = []
        if self.at("with", "keyword"):
            self.advance()
            self.expect("(")
            while True:
                key = self.expect_ident("with-key").lexeme
                self.expect(":")
                with_args.append((key, self.parse_expr()))
                if self.at(","):
                    self.advance()
                    continue
                break
            self.expect(")")
        self.expect(";")
        return ast.Tell(receiver, event, args, with_args, span=t.span)

    def parse_cancel(self):
        span = self.expect("cancel").span
        if self.at("*"):
            self.advance()
            self.expect(";")
            return ast.Cancel(None, span=span)
        names = [self.expect_ident("event name").lexeme]
        while self.at(","):
            self.advance()
            names.append(self.expect_ident("event name").lexeme)
        self.expect(";")
        return ast.Cancel(names, span=span)

    def parse_if(self):
        span = self.expect("if").span
        self.expect("(")
        cond = self.parse_expr()
        self.expect(")")
        then = self.parse_block()
        orelse = None
        if self.at("else", "keyword"):
            self.advance()
            if self.at("if", "keyword"):  # else-if chain
                nested = self.parse_if()
                orelse = ast.Block([nested], span=nested.span)
            else:
                orelse = self.parse_block()
        return ast.If(cond, then, orelse, span=span)

    def parse_cases(self):
        span = self.expect("cases").span
        self.expect("(")
        subject = self.parse_expr()
        self.expect(")")
        self.expect("{")
        branches, otherwise = [], None
        while not self.at("}") and not self.at_kind("eof"):
            if self.at("case", "keyword"):
                ct = self.advance()
                value = self.parse_expr()
                self.expect(":")
                body = self._parse_branch_statements()
                branches.append(ast.CaseBranch(value, body, span=ct.span))
            elif self.at("otherwise", "keyword"):
                self.advance()
                self.expect(":")
                otherwise = self._parse_branch_statements()
            else:
                self.error("expected 'case' or 'otherwise' in cases block")
                raise ParseAbort()
        self.expect("}")
        return ast.Cases(subject, branches, otherwise, span=span)

    def _parse_branch_statements(self):
        # A branch runs until the next case/otherwise/'}'. A bare ';' closes
        # an empty branch (the grammar's trailing ';').
        stmts = []
        while not (self.at("case", "keyword") or self.at("otherwise", "keyword")
                   or self.at("}") or self.at_kind("eof")):
            if self.at(";"):
                self.advance()
                continue
            stmt = self.parse_statement()
            if stmt is not None:
                stmts.append(stmt)
        return stmts

    def parse_foreach(self):
        span = self.expect("foreach").span
        self.expect("(")
        self.expect("var")
        vars_ = []
        while True:
            name = self.expect_ident("loop variable").lexeme
            vty = None
            if self.at(":"):
                self.advance()
                vty = self.parse_type()
            vars_.append((name, vty))
            if self.at(","):
                self.advance()
                continue
            break
        self.expect("in")
        src_tok = self.peek()
        if src_tok.kind != "identifier" or src_tok.lexeme not in (
                "values", "keys", "pairs", "entries"):
            self.error("expected values(...), keys(...) or pairs(...)")
            raise ParseAbort()
        self.advance()
        source_kind = "pairs" if src_tok.lexeme == "entries" else src_tok.lexeme
        self.expect("(")
        source = self.parse_expr()
        self.expect(")")
        self.expect(")")
        body = self.parse_block()
        return ast.Foreach(vars_, source_kind, source, body, span=span)

    # -- expressions -----------------------------------------------------------

    def parse_expr(self):
        return self.parse_assignment()

    def parse_assignment(self):
        left = self.parse_ternary()
        t = self.peek()
        if t.kind == "operator" and t.lexeme in ASSIGN_OPS:
            self.advance()
            value = self.parse_assignment()
            return ast.Assign(left, t.lexeme, value, span=t.span)
        return left

    def parse_ternary(self):
        cond = self.parse_binary(0)
        if self.at("?"):
            span = self.advance().span
            then = self.parse_expr()
            self.expect(":")
            orelse = self.parse_ternary()
            return ast.Ternary(cond, then, orelse, span=span)
        return cond

    def parse_binary(self, level):
        if level >= len(BINARY_LEVELS):
            return self.parse_unary()
        left = self.parse_binary(level + 1)
        ops = BINARY_LEVELS[level]
        while self.peek().kind == "operator" and self.peek().lexeme in ops:
            op = self.advance()
            right = self.parse_binary(level + 1)
            left = ast.Binary(op.lexeme, left, right, span=op.span)
        return left

    def parse_unary(self):
        t = self.peek()
        if t.kind == "operator" and t.lexeme in ("-", "!", "~"):
            self.advance()
            return ast.Unary(t.lexeme, self.parse_unary(), span=t.span)
        return self.parse_cast()

    def parse_cast(self):
        expr = self.parse_postfix()
        while self.at("as", "keyword"):
            span = self.advance().span
            ty = self.parse_type()
            expr = ast.Cast(expr, ty, span=span)
        return expr

    def parse_postfix(self):
        expr = self.parse_primary()
        while True:
            t = self.peek()
            if t.lexeme == ".":
                self.advance()
                name = self.expect_ident("member name").lexeme
                expr = ast.Member(expr, name, span=t.span)
            elif t.lexeme == "[":
                self.advance()
                index = self.parse_expr()
                self.expect("]")
                expr = ast.Index(expr, index, span=t.span)
            elif t.lexeme == "(":
                self.advance()
                args, named = self._parse_arg_list()
                self.expect(")")
                expr = ast.Call(expr, args, named, span=t.span)
            elif t.kind == "operator" and t.lexeme in ("++", "--"):
                self.advance()
                one = ast.IntLit(1, span=t.span)
                op = "+=" if t.lexeme == "++" else "-="
                expr = ast.Assign(expr, op, one, span=t.span)
            else:
                return expr

    def _parse_arg_list(self):
        """argList: exprList | idExprList (named instantiation arguments)."""
        args, named = [], []
        if self.at(")"):
            return args, named
        while True:
            if self.at_kind("identifier") and self.at(":", off=1):
                if args:
                    self.error("cannot mix positional and named arguments")
                    raise ParseAbort()
                name = self.advance().lexeme
                self.advance()  # ':'
                named.append((name, self.parse_expr()))
            else:
                if named:
                    self.error("positional argument after named arguments")
                    raise ParseAbort()
                args.append(self.parse_expr())
            if self.at(","):
                self.advance()
                continue
            return args, named

    def parse_primary(self):
        t = self.peek()
        if t.kind == "integer-literal":
            self.advance()
            return ast.IntLit(int(t.lexeme), span=t.span)
        if t.kind == "decimal-literal":
            self.advance()
            return ast.DecimalLit(t.lexeme, span=t.span)
        if t.kind == "timespan-literal":
            self.advance()
            return ast.TimespanLit(_split_timespan(t.lexeme), t.lexeme,
                                   span=t.span)
        if t.kind == "string-literal":
            self.advance()
            return self._string_literal(t)
        if t.kind == "char-literal":
            self.advance()
            return ast.CharLit(_decode_escapes(t.lexeme[1:-1]), span=t.span)
        if t.kind == "keyword":
            if t.lexeme == "true":
                self.advance()
                return ast.BoolLit(True, span=t.span)
            if t.lexeme == "false":
                self.advance()
                return ast.BoolLit(False, span=t.span)
            if t.lexeme == "null":
                self.advance()
                return ast.NullLit(span=t.span)
            if t.lexeme == "self":
                self.advance()
                return ast.SelfExpr(span=t.span)
            if t.lexeme in ("array", "list", "set"):
                self.advance()
                self.expect("(")
                elems = []
                if not self.at(")"):
                    elems.append(self.parse_expr())
                    while self.at(","):
                        self.advance()
                        elems.append(self.parse_expr())
                self.expect(")")
                return ast.CollectionLit(t.lexeme, elems, span=t.span)
            if t.lexeme == "map":
                self.advance()
                self.expect("(")
                entries = self._parse_map_entries(")")
                self.expect(")")
                return ast.MapLit(entries, span=t.span)
            if t.lexeme == "tuple":
                self.advance()
                self.expect("(")
                elems = [self.parse_expr()]
                while self.at(","):
                    self.advance()
                    elems.append(self.parse_expr())
                self.expect(")")
                return ast.TupleLit(elems, span=t.span)
            if t.lexeme == "cases":
                return self.parse_cases()
            if t.lexeme == "string" and self.at(".", off=1):
                # dotted external names such as string.format
                self.advance()
                return ast.Name("string", span=t.span)
        if t.kind == "identifier":
            self.advance()
            return ast.Name(t.lexeme, span=t.span)
        if t.lexeme == "(":
            self.advance()
            expr = self.parse_expr()
            self.expect(")")
            return expr
        if t.lexeme == "[":  # shorthand array literal
            self.advance()
            elems = []
            if not self.at("]"):
                elems.append(self.parse_expr())
                while self.at(","):
                    self.advance()
                    elems.append(self.parse_expr())
            self.expect("]")
            return ast.CollectionLit("array", elems, shorthand=True,
                                     span=t.span)
        if t.lexeme == "{":  # shorthand map literal
            self.advance()
            entries = self._parse_map_entries("}")
            self.expect("}")
            return ast.MapLit(entries, shorthand=True, span=t.span)
        self.error(f"expected an expression, found {self._describe(t)}")
        raise ParseAbort()

    def _parse_map_entries(self, closer):
        entries = []
        if self.at(closer):
            return entries
        while True:
            key = self.parse_expr()
            self.expect(":")
            entries.append((key, self.parse_expr()))
            if self.at(","):
                self.advance()
                continue
            return entries

    def _string_literal(self, tok: Token):
        raw = tok.lexeme[1:-1]
        fragments, buf, i = [], [], 0
        while i < len(raw):
            ch = raw[i]
            if ch == "\\" and i + 1 < len(raw):
                buf.append(raw[i:i + 2])
                i += 2
                continue
            if ch == "$" and i + 1 < len(raw) and raw[i + 1] == "{":
                depth, j = 1, i + 2
                while j < len(raw) and depth:
                    if raw[j] == "{":
                        depth += 1
                    elif raw[j] == "}":
                        depth -= 1
                    j += 1
                if depth:
                    self.error("unterminated ${...} interpolation", tok.span)
                    raise ParseAbort()
                inner = raw[i + 2:j - 1]
                if buf:
                    fragments.append(_decode_escapes("".join(buf)))
                    buf = []
                fragments.append(self._parse_interpolation(inner, tok.span))
                i = j
                continue
            buf.append(ch)
            i += 1
        if buf or not fragments:
            fragments.append(_decode_escapes("".join(buf)))
        return ast.StringLit(fragments, span=tok.span)

    def _parse_interpolation(self, text: str, span: Span):
        try:
            sub = _Parser(tokenize(text, span.file), span.file)
            expr = sub.parse_expr()
            if sub.errors or not sub.at_kind("eof"):
                raise ParseAbort()
            return expr
        except Exception:
            self.error(f"invalid interpolation expression ${{{text}}}", span)
            raise ParseAbort() from None


def _split_timespan(lexeme: str) -> list[tuple[str, str]]:
    """Split a timespan lexeme into ordered (magnitude text, unit) pairs."""
    comps, i = [], 0
    while i < len(lexeme):
        j = i
        while j < len(lexeme) and (lexeme[j].isdigit() or lexeme[j] == "."):
            j += 1
        mag = lexeme[i:j]
        unit = lexeme[j:j + 2] if lexeme[j:j + 2] in ("ns", "us", "ms") \
            else lexeme[j:j + 1]
        comps.append((mag, unit))
        i = j + len(unit)
    return comps


_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", '"': '"', "'": "'",
            "0": "\0", "$": "$"}


def _decode_escapes(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            out.append(_ESCAPES.get(text[i + 1], text[i + 1]))
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)

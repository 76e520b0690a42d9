"""Pretty-printer: renders an AST back to parseable M source.

Printing then re-parsing yields a structurally identical tree (spans aside);
the round-trip test runs it over the whole model corpus.
"""

from __future__ import annotations

from . import ast

_INDENT = "    "


def to_source(node) -> str:
    return _Printer().print(node)


class _Printer:
    def __init__(self):
        self.out = []
        self.level = 0

    def print(self, node):
        self.emit(node)
        return "".join(self.out)

    def line(self, text=""):
        self.out.append(_INDENT * self.level + text + "\n")

    # -- dispatch ---------------------------------------------------------

    def emit(self, node):
        getattr(self, "emit_" + type(node).__name__)(node)

    def emit_Program(self, prog: ast.Program):
        for a in prog.annotations:
            self.line(self.fmt_annotation(a))
        for inc in prog.includes:
            self.line(f'include "{inc.path}";')
        for decl in prog.decls:
            self.emit(decl)
        if prog.main is not None:
            self.out.append("main ")
            self.emit(prog.main.block)

    def fmt_annotation(self, a: ast.Annotation):
        text = "@" + a.name
        if a.props:
            text += "[" + ", ".join(self.fmt_property(p) for p in a.props) + "]"
        if a.body is not None:
            text += "{=" + a.body + "=}"
        return text

    def fmt_property(self, p: ast.Property):
        if p.value is None:
            return p.name
        return f"{p.name}:{self.expr(p.value)}"

    # -- declarations -------------------------------------------------------

    def emit_ConstDecl(self, d: ast.ConstDecl):
        self.line(f"const {d.name}:{self.type(d.type)} = {self.expr(d.value)};")

    def emit_VarDecl(self, d: ast.VarDecl):
        props = ""
        if d.props:
            props = "[" + ", ".join(self.fmt_property(p) for p in d.props) + "]"
        init = f" = {self.expr(d.value)}" if d.value is not None else ""
        self.line(f"var{props} {d.name}:{self.type(d.type)}{init};")

    def emit_FunctionDecl(self, d: ast.FunctionDecl):
        params = ", ".join(f"{n}:{self.type(t)}" for n, t in d.params)
        ret = f":{self.type(d.ret)}" if d.ret is not None else ""
        if d.external:
            self.line(f"external function {d.name}({params}){ret};")
            return
        self.out.append(_INDENT * self.level
                        + f"function {d.name}({params}){ret} ")
        self.emit(d.body)

    def emit_TypeDecl(self, d: ast.TypeDecl):
        if isinstance(d.target, (ast.RecordTypeExpr, ast.EnumTypeExpr,
                                 ast.ClassTypeExpr)):
            self.out.append(_INDENT * self.level + f"def {d.name} ")
            self.emit(d.target)
            self.out.append(";\n")
        else:
            self.line(f"def {d.name} {self.type(d.target)};")

    def emit_DoDecl(self, d: ast.DoDecl):
        props = ""
        parts = []
        if d.trigger == "on":
            parts.append(f"on({self.expr(d.trigger_arg)})")
        elif d.trigger == "every":
            parts.append(f"every({self.expr(d.trigger_arg)})")
        parts.extend(self.fmt_property(p) for p in d.extra_props)
        if parts:
            props = "[" + ", ".join(parts) + "]"
        sig = ""
        if d.params:
            sig = "(" + ", ".join(f"{n}:{self.type(t)}" for n, t in d.params) + ")"
        elif d.has_parens:
            sig = "()"
        self.out.append(_INDENT * self.level + f"do{props} {d.name}{sig} ")
        self.emit(d.body)

    # -- type expressions ------------------------------------------------

    def type(self, t) -> str:
        if isinstance(t, ast.TypeName):
            return t.name
        if isinstance(t, ast.Placeholder):
            return f"#{t.name}"
        if isinstance(t, ast.CollectionTypeExpr):
            if t.ctor == "map":
                if t.key is None:
                    return "map"
                return f"map{{{self.type(t.key)},{self.type(t.value)}}}"
            if t.elem is None:
                return t.ctor
            size = f",{t.size}" if t.size is not None else ""
            return f"{t.ctor}{{{self.type(t.elem)}{size}}}"
        if isinstance(t, ast.TupleTypeExpr):
            return "tuple{" + ",".join(self.type(e) for e in t.elems) + "}"
        raise TypeError(f"not a printable inline type: {t!r}")

    def emit_RecordTypeExpr(self, t: ast.RecordTypeExpr):
        fields = "".join(f"{n}:{self.type(ft)};" for n, ft in t.fields)
        self.out.append("record{" + fields + "}")

    def emit_EnumTypeExpr(self, t: ast.EnumTypeExpr):
        consts = ", ".join(n if c is None else f"{n}={c}"
                           for n, c in t.constants)
        self.out.append("enum{" + consts + "}")

    def emit_ClassTypeExpr(self, t: ast.ClassTypeExpr):
        head = "class"
        if t.class_kind:
            head += f"[{t.class_kind}]"
        if t.extends:
            head += " extends " + ", ".join(t.extends)
        self.out.append(head + " {\n")
        self.level += 1
        for m in t.members:
            self.emit(m)
        self.level -= 1
        self.out.append(_INDENT * self.level + "}")

    # -- statements --------------------------------------------------------

    def emit_Block(self, b: ast.Block):
        self.out.append("{\n")
        self.level += 1
        for s in b.statements:
            self.emit(s)
        self.level -= 1
        self.line("}")

    def emit_ExprStmt(self, s: ast.ExprStmt):
        self.line(self.expr(s.expr) + ";")

    def emit_Return(self, s: ast.Return):
        if s.value is None:
            self.line("return;")
        else:
            self.line(f"return {self.expr(s.value)};")

    def emit_If(self, s: ast.If):
        self.out.append(_INDENT * self.level + f"if ({self.expr(s.cond)}) ")
        self.emit(s.then)
        if s.orelse is not None:
            # rewrite "}\n" + "else" to "} else"
            self.out[-1] = self.out[-1].rstrip("\n")
            self.out.append(" else ")
            self.emit(s.orelse)

    def emit_Cases(self, s: ast.Cases):
        self.out.append(_INDENT * self.level
                        + f"cases ({self.expr(s.subject)}) {{\n")
        self.level += 1
        for br in s.branches:
            self.line(f"case {self.expr(br.value)}:")
            self.level += 1
            for st in br.body:
                self.emit(st)
            self.level -= 1
            self.line(";")
        if s.otherwise is not None:
            self.line("otherwise:")
            self.level += 1
            for st in s.otherwise:
                self.emit(st)
            self.level -= 1
            self.line(";")
        self.level -= 1
        self.line("}")

    def emit_While(self, s: ast.While):
        self.out.append(_INDENT * self.level + f"while ({self.expr(s.cond)}) ")
        self.emit(s.body)

    def emit_DoWhile(self, s: ast.DoWhile):
        self.out.append(_INDENT * self.level + "do ")
        self.emit(s.body)
        self.out[-1] = self.out[-1].rstrip("\n")
        self.out.append(f" while ({self.expr(s.cond)});\n")

    def emit_Foreach(self, s: ast.Foreach):
        vars_ = ", ".join(n if t is None else f"{n}:{self.type(t)}"
                          for n, t in s.vars)
        self.out.append(_INDENT * self.level
                        + f"foreach (var {vars_} in {s.source_kind}"
                        + f"({self.expr(s.source)})) ")
        self.emit(s.body)

    def emit_Break(self, s: ast.Break):
        self.line("break;")

    def emit_Tell(self, s: ast.Tell):
        text = self.expr(s.receiver) + "!" + s.event
        if s.args is not None:
            text += "(" + ", ".join(self.expr(a) for a in s.args) + ")"
        if s.with_args:
            text += " with(" + ", ".join(f"{k}:{self.expr(v)}"
                                         for k, v in s.with_args) + ")"
        self.line(text + ";")

    def emit_Cancel(self, s: ast.Cancel):
        target = "*" if s.names is None else ", ".join(s.names)
        self.line(f"cancel {target};")

    # -- expressions -----------------------------------------------------------

    def expr(self, e) -> str:
        name = "expr_" + type(e).__name__
        return getattr(self, name)(e)

    def expr_IntLit(self, e):
        return str(e.value)

    def expr_DecimalLit(self, e):
        return e.text

    def expr_BoolLit(self, e):
        return "true" if e.value else "false"

    def expr_CharLit(self, e):
        return "'" + _escape(e.value, "'") + "'"

    def expr_NullLit(self, e):
        return "null"

    def expr_StringLit(self, e):
        parts = []
        for f in e.fragments:
            if isinstance(f, str):
                parts.append(_escape(f, '"'))
            else:
                parts.append("${" + self.expr(f) + "}")
        return '"' + "".join(parts) + '"'

    def expr_TimespanLit(self, e):
        return "".join(mag + unit for mag, unit in e.components)

    def expr_CollectionLit(self, e):
        inner = ", ".join(self.expr(x) for x in e.elems)
        if e.shorthand:
            return "[" + inner + "]"
        return f"{e.ctor}({inner})"

    def expr_MapLit(self, e):
        inner = ", ".join(f"{self.expr(k)}:{self.expr(v)}"
                          for k, v in e.entries)
        if e.shorthand:
            return "{" + inner + "}"
        return f"map({inner})"

    def expr_TupleLit(self, e):
        return "tuple(" + ", ".join(self.expr(x) for x in e.elems) + ")"

    def expr_Name(self, e):
        return e.id

    def expr_SelfExpr(self, e):
        return "self"

    def expr_Member(self, e):
        return f"{self.expr(e.obj)}.{e.name}"

    def expr_Index(self, e):
        return f"{self.expr(e.obj)}[{self.expr(e.index)}]"

    def expr_Call(self, e):
        args = [self.expr(a) for a in e.args]
        args += [f"{n}:{self.expr(v)}" for n, v in e.named_args]
        return f"{self.expr(e.callee)}({', '.join(args)})"

    def expr_Assign(self, e):
        return f"{self.expr(e.target)} {e.op} {self.expr(e.value)}"

    def expr_Ternary(self, e):
        return (f"({self.expr(e.cond)} ? {self.expr(e.then)}"
                f" : {self.expr(e.orelse)})")

    def expr_Binary(self, e):
        return f"({self.expr(e.left)} {e.op} {self.expr(e.right)})"

    def expr_Unary(self, e):
        return f"{e.op}{_wrap(self.expr(e.operand))}"

    def expr_Cast(self, e):
        return f"({self.expr(e.expr)} as {self.type(e.type)})"

    def expr_Cases(self, e):
        # expression-position cases: reuse the statement layout inline
        sub = _Printer()
        sub.level = self.level
        sub.emit_Cases(e)
        return "".join(sub.out).strip().rstrip(";")


def _wrap(text: str) -> str:
    return text if text.startswith("(") else f"({text})"


def _escape(text: str, quote: str) -> str:
    out = []
    for ch in text:
        if ch == "\\":
            out.append("\\\\")
        elif ch == quote:
            out.append("\\" + quote)
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "$":
            out.append("\\$")
        else:
            out.append(ch)
    return "".join(out)

"""Semantic analysis: symbol tables, typing rules, event-response tables.

`analyze` turns a parsed (include-merged) Program into an Analysis: every
expression typed under the published rules, constants folded, SIM_TIME_UNIT
extracted, and each class compiled into its event-response table. Diagnostics
carry the violated rule's name so the fixed `severity file:line:col RULE
message` format is grep-able by rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Optional

from . import diagnostics as diag
from . import types as ty
from .syntax import ast

NOT_CONST = object()
_MISSING = object()

WITH_KEYS = {"after": "timespan", "deadline": "timespan", "sender": "actor"}

# externals whose typing is collection- or context-aware
_SPECIAL_EXTERNALS = {
    "prev", "now", "println", "print", "toString", "length", "keys",
    "values", "pairs", "entries", "add", "push_back", "removeAt", "reverse",
    "contains", "abs", "min", "max", "random", "terminate", "string.format",
}


@dataclass
class FieldInfo:
    name: str
    type: ty.Type
    is_state: bool = False
    default: Optional[ast.Expr] = None
    discretize: Optional[str] = None  # property value or "" when bare
    node: ast.VarDecl = None


@dataclass
class FunctionInfo:
    name: str
    params: list = dc_field(default_factory=list)  # [(name, Type)]
    ret: ty.Type = None
    body: Optional[ast.Block] = None
    node: ast.FunctionDecl = None


@dataclass
class Response:
    """One event response: ⟨name, trigger, firing condition, interval, body⟩."""
    name: str
    trigger: str  # external | periodic | conditional
    condition: Optional[ast.Expr] = None
    interval_units: Optional[Fraction] = None
    params: list = dc_field(default_factory=list)  # [(name, Type)]
    body: ast.Block = None
    node: ast.DoDecl = None


@dataclass
class ClassInfo:
    name: str
    class_kind: str = "object"
    type: ty.Type = None
    fields: dict = dc_field(default_factory=dict)  # name -> FieldInfo
    consts: dict = dc_field(default_factory=dict)  # name -> (Type, value)
    functions: dict = dc_field(default_factory=dict)  # name -> FunctionInfo
    responses: dict = dc_field(default_factory=dict)  # name -> Response
    node: ast.ClassTypeExpr = None

    def member_names(self):
        return (set(self.fields) | set(self.consts) | set(self.functions)
                | set(self.responses))


@dataclass
class ExternalSig:
    name: str
    params: list = dc_field(default_factory=list)  # [(name, Type|PlaceholderRef)]
    ret: object = None  # Type | PlaceholderRef | None
    node: ast.FunctionDecl = None


class PlaceholderRef:
    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return f"#{self.name}"


class Analysis:
    """The decorated AST: the Program plus all semantic side tables."""

    def __init__(self, program):
        self.program = program
        self.diags: list[diag.Diagnostic] = []
        self.table = ty.TypeTable()
        self.type_names: dict[str, ty.Type] = {}
        self.classes: dict[str, ClassInfo] = {}
        self.program_consts: dict[str, tuple] = {}  # name -> (Type, value)
        self.functions: dict[str, FunctionInfo] = {}
        self.externals: dict[tuple, list[ExternalSig]] = {}  # (name, arity)
        self.node_types: dict[int, ty.Type] = {}
        self.decl_types: dict[int, ty.Type] = {}  # VarDecl/Cast resolutions
        self.enum_refs: dict[int, tuple] = {}  # Member -> (Type, name, code)
        self.annotations: list[ast.Annotation] = []
        self.mu_components = [(Fraction(1), "ms")]  # SIM_TIME_UNIT default 1ms
        self.mu_ms = Fraction(1)
        self.main: Optional[ast.MainBlock] = None

    @property
    def ok(self):
        return not diag.has_errors(self.diags)

    def errors(self):
        return [d for d in self.diags if d.severity == "error"]

    def class_of_type(self, t: ty.Type) -> Optional[ClassInfo]:
        if t is not None and t.is_class:
            return t.class_info
        return None

    def fingerprint(self) -> str:
        """Stable digest of the decoration, for determinism checks."""
        parts = []
        for name in sorted(self.classes):
            info = self.classes[name]
            parts.append(f"class {name}[{info.class_kind}] tid={info.type.tid}")
            for fname, f in info.fields.items():
                parts.append(f"  field {fname}:{f.type} state={f.is_state}")
            for rname, r in info.responses.items():
                parts.append(f"  do {rname} {r.trigger} T={r.interval_units}")
        for name in sorted(self.program_consts):
            t, v = self.program_consts[name]
            parts.append(f"const {name}:{t}={v!r}")
        typed = sorted((str(s), str(t)) for s, t in self._typed_spans())
        parts.extend(f"{s} :: {t}" for s, t in typed)
        return "\n".join(parts)

    def _typed_spans(self):
        seen = []

        def walk(node):
            if isinstance(node, ast.Node):
                t = self.node_types.get(id(node))
                if t is not None and node.span is not None:
                    seen.append((node.span, t))
                for f in node.__dataclass_fields__:
                    if f == "span":
                        continue
                    walk(getattr(node, f))
            elif isinstance(node, (list, tuple)):
                for x in node:
                    walk(x)
        walk(self.program)
        return seen


def analyze(program: ast.Program) -> Analysis:
    analysis = Analysis(program)
    _Checker(analysis).run()
    return analysis


class Scope:
    def __init__(self, parent=None):
        self.parent = parent
        self.bindings: dict[str, "Binding"] = {}

    def lookup(self, name):
        scope = self
        while scope is not None:
            if name in scope.bindings:
                return scope.bindings[name]
            scope = scope.parent
        return None

    def lookup_local(self, name):
        return self.bindings.get(name)

    def define(self, name, binding):
        self.bindings[name] = binding


@dataclass
class Binding:
    name: str
    type: ty.Type
    is_const: bool = False
    value: object = NOT_CONST  # folded constant value
    is_state: bool = False
    node: object = None


class _Checker:
    def __init__(self, analysis: Analysis):
        self.a = analysis
        self.table = analysis.table
        self.globals = Scope()
        self.current_class: Optional[ClassInfo] = None
        self.current_fn_ret: Optional[ty.Type] = None
        self.loop_depth = 0
        self.in_reaction = False
        self._register_builtin_types()

    # -- shortcuts ----------------------------------------------------------

    def err(self, span, rule, message):
        self.a.diags.append(diag.error(span, rule, message))

    def warn(self, span, rule, message):
        self.a.diags.append(diag.warning(span, rule, message))

    def scalar(self, kind):
        return self.table.scalar(kind)

    def _register_builtin_types(self):
        for kind in ty.NUMERIC_KINDS + ("bool", "char", "string", "timespan",
                                        "any") + ty.REF_KINDS:
            self.a.type_names[kind] = self.scalar(kind)

    # -- program ----------------------------------------------------------------

    def run(self):
        prog = self.a.program
        self.a.annotations = list(prog.annotations)
        self.a.main = prog.main
        # pass A: register type definitions, constants and signatures in order
        deferred_bodies = []
        for decl in prog.decls:
            if isinstance(decl, ast.TypeDecl):
                self.declare_type(decl)
            elif isinstance(decl, ast.ConstDecl):
                self.declare_program_const(decl)
            elif isinstance(decl, ast.FunctionDecl):
                if decl.external:
                    self.declare_external(decl)
                else:
                    info = self.declare_function(decl)
                    if info is not None:
                        deferred_bodies.append(info)
        self._extract_sim_time_unit()
        # pass B: check bodies once every program-level name is known
        for info in deferred_bodies:
            self.check_function_body(info, class_info=None)
        for decl in prog.decls:
            if isinstance(decl, ast.TypeDecl) and decl.name in self.a.classes:
                self.check_class_body(self.a.classes[decl.name])
        if prog.main is not None:
            self.check_main(prog.main)

    def _extract_sim_time_unit(self):
        entry = self.a.program_consts.get("SIM_TIME_UNIT")
        if entry is None:
            return
        t, value = entry
        from .runtime import TimespanValue
        if t.kind != "timespan" or not isinstance(value, TimespanValue):
            self.err(None, "var-decl",
                     "SIM_TIME_UNIT must be a constant timespan")
            return
        if value.ms <= 0:
            self.err(None, "var-decl", "SIM_TIME_UNIT must be positive")
            return
        self.a.mu_components = value.components
        self.a.mu_ms = value.ms

    # -- type declarations ---------------------------------------------------------

    def declare_type(self, decl: ast.TypeDecl):
        if decl.name in self.a.type_names or decl.name in self.a.classes:
            self.err(decl.span, "context-diff",
                     f"duplicate type name {decl.name!r}")
            return
        target = decl.target
        if isinstance(target, ast.ClassTypeExpr):
            self.declare_class(decl.name, target)
            return
        if isinstance(target, ast.EnumTypeExpr):
            constants, next_code = [], 0
            for cname, code in target.constants:
                if code is not None:
                    next_code = code
                constants.append((cname, next_code))
                next_code += 1
            try:
                t = self.table.enum(decl.name, constants)
            except ty.TypeError_ as exc:
                self.err(target.span, "member-enum", str(exc))
                return
            t.name = decl.name
            self.a.type_names[decl.name] = t
            return
        if isinstance(target, ast.RecordTypeExpr):
            fields = [(n, self.resolve_type(ft)) for n, ft in target.fields]
            if len({n for n, _ in fields}) != len(fields):
                self.err(target.span, "context-diff",
                         f"record {decl.name}: duplicate field names")
            t = self.table.record(decl.name, fields)
            self.a.type_names[decl.name] = t
            return
        # alias: resolve and bind the same descriptor, no new type id
        resolved = self.resolve_type(target)
        self.a.type_names[decl.name] = resolved

    def declare_class(self, name, node: ast.ClassTypeExpr):
        kind = node.class_kind or "object"
        if node.extends:
            self.err(node.span, "context-diff",
                     "class inheritance is not yet supported")
        info = ClassInfo(name=name, class_kind=kind, node=node)
        info.type = self.table.class_(name, kind)
        info.type.class_info = info
        self.a.classes[name] = info
        self.a.type_names[name] = info.type
        # register members (types only); bodies checked in pass B
        for member in node.members:
            if isinstance(member, ast.VarDecl):
                self._declare_field(info, member)
            elif isinstance(member, ast.ConstDecl):
                self._declare_class_const(info, member)
            elif isinstance(member, ast.FunctionDecl):
                self._declare_class_function(info, member)
            elif isinstance(member, ast.DoDecl):
                self._declare_response(info, member)
        info.type.fields = tuple((f.name, f.type)
                                 for f in info.fields.values())

    def _check_member_clash(self, info, name, span):
        if name in info.member_names():
            self.err(span, "context-diff",
                     f"class {info.name}: duplicate member {name!r}")
            return True
        return False

    def _declare_field(self, info, member: ast.VarDecl):
        if self._check_member_clash(info, member.name, member.span):
            return
        t = self.resolve_type(member.type)
        discretize = None
        for prop in member.props:
            if prop.name == "discretize":
                if prop.value is None:
                    discretize = ""
                elif isinstance(prop.value, ast.StringLit):
                    discretize = prop.value.plain_text()
                else:
                    discretize = ""
        f = FieldInfo(member.name, t, member.is_state, member.value,
                      discretize, member)
        if t.kind == "any" and member.value is None:
            self.err(member.span, "unresolved-any",
                     f"field {member.name!r} cannot keep type any")
        self.a.decl_types[id(member)] = t
        info.fields[member.name] = f

    def _declare_class_const(self, info, member: ast.ConstDecl):
        if self._check_member_clash(info, member.name, member.span):
            return
        t = self.resolve_type(member.type)
        scope = Scope(self.globals)
        value = self.fold(member.value, scope)
        if value is NOT_CONST:
            self.err(member.span, "var-decl",
                     f"const {member.name}: initializer is not constant")
            value = None
        else:
            value = self._coerce_const(value, member.value, t, member.span)
        info.consts[member.name] = (t, value)
        self.a.decl_types[id(member)] = t

    def _declare_class_function(self, info, member: ast.FunctionDecl):
        if self._check_member_clash(info, member.name, member.span):
            return
        if member.external:
            self.err(member.span, "func-decl",
                     "external functions are declared at program level")
            return
        params = [(n, self.resolve_type(t)) for n, t in member.params]
        ret = self.resolve_type(member.ret) if member.ret else self.scalar("any")
        info.functions[member.name] = FunctionInfo(
            member.name, params, ret, member.body, member)

    def _declare_response(self, info, member: ast.DoDecl):
        if self._check_member_clash(info, member.name, member.span):
            # duplicate do names break the response table
            self.err(member.span, "do-recv",
                     f"duplicate event response {member.name!r}")
            return
        trigger = {"receive": "external", "on": "conditional",
                   "every": "periodic"}[member.trigger]
        params = []
        seen = set()
        for pname, ptype in member.params:
            if pname in seen:
                self.err(member.span, "do-recv",
                         f"do {member.name}: duplicate parameter {pname!r}")
            seen.add(pname)
            params.append((pname, self.resolve_type(ptype)))
        if trigger != "external" and params:
            self.err(member.span, "do-recv",
                     f"do {member.name}: {member.trigger}-triggered responses "
                     "take no parameters")
        if member.name == "initialize" and params:
            self.err(member.span, "do-recv",
                     "initialize takes no parameters")
        info.responses[member.name] = Response(
            member.name, trigger, None, None, params, member.body, member)

    # -- constants and functions -----------------------------------------------------

    def declare_program_const(self, decl: ast.ConstDecl):
        if decl.name in self.a.program_consts:
            self.err(decl.span, "var-decl",
                     f"duplicate constant {decl.name!r}")
            return
        t = self.resolve_type(decl.type)
        self.check_expr(decl.value, Scope(self.globals))
        value = self.fold(decl.value, Scope(self.globals))
        if value is NOT_CONST:
            self.err(decl.span, "var-decl",
                     f"const {decl.name}: initializer is not constant")
            value = None
        else:
            value = self._coerce_const(value, decl.value, t, decl.span)
        self.a.program_consts[decl.name] = (t, value)
        self.a.decl_types[id(decl)] = t
        self.globals.define(decl.name, Binding(decl.name, t, True, value,
                                               node=decl))

    def _coerce_const(self, value, expr, target: ty.Type, span):
        src = self.a.node_types.get(id(expr)) or self.type_of_value(value)
        if src is None:
            return value
        if not ty.coercible(src, target) and not ty.convertible(src, target):
            self.err(span, "var-decl",
                     f"constant of type {src} does not fit declared {target}")
            return value
        try:
            return ty.convert(value, src, target, self.a.mu_ms)
        except ty.ConversionError as exc:
            self.err(span, "conv-numeric", str(exc))
            return value

    def type_of_value(self, value) -> Optional[ty.Type]:
        from .runtime import EnumValue, TimespanValue
        if isinstance(value, bool):
            return self.scalar("bool")
        if isinstance(value, int):
            return self.scalar("int64")
        if isinstance(value, float):
            return self.scalar("double")
        if isinstance(value, str):
            return self.scalar("string")
        if isinstance(value, TimespanValue):
            return self.scalar("timespan")
        if isinstance(value, EnumValue):
            return value.type
        if value is None:
            return self.scalar("null")
        return None

    def declare_function(self, decl: ast.FunctionDecl):
        if decl.name in self.a.functions:
            self.err(decl.span, "func-decl",
                     f"duplicate function {decl.name!r}")
            return None
        params = [(n, self.resolve_type(t)) for n, t in decl.params]
        ret = self.resolve_type(decl.ret) if decl.ret else self.scalar("any")
        info = FunctionInfo(decl.name, params, ret, decl.body, decl)
        self.a.functions[decl.name] = info
        return info

    def declare_external(self, decl: ast.FunctionDecl):
        params = []
        for n, t in decl.params:
            if isinstance(t, ast.Placeholder):
                params.append((n, PlaceholderRef(t.name)))
            else:
                params.append((n, self.resolve_type(t)))
        ret = None
        if decl.ret is not None:
            if isinstance(decl.ret, ast.Placeholder):
                ret = PlaceholderRef(decl.ret.name)
            else:
                ret = self.resolve_type(decl.ret)
        key = (decl.name, len(params))
        self.a.externals.setdefault(key, []).append(
            ExternalSig(decl.name, params, ret, decl))

    # -- type resolution --------------------------------------------------------------

    def resolve_type(self, node) -> ty.Type:
        if node is None:
            return self.scalar("any")
        if isinstance(node, ast.TypeName):
            t = self.a.type_names.get(node.name)
            if t is None:
                rule = "var-decl-novalue"
                self.err(node.span, rule, f"unknown type {node.name!r}")
                return self.scalar("any")
            return t
        if isinstance(node, ast.CollectionTypeExpr):
            if node.ctor == "map":
                key = self.resolve_type(node.key) if node.key else None
                value = self.resolve_type(node.value) if node.value else None
                return self.table.collection("map", key=key, value=value)
            elem = self.resolve_type(node.elem) if node.elem else None
            if node.size is not None and node.size < 0:
                self.err(node.span, "coerce-coll", "array size must be >= 0")
            return self.table.collection(node.ctor, elem=elem, size=node.size)
        if isinstance(node, ast.TupleTypeExpr):
            return self.table.tuple_([self.resolve_type(e)
                                      for e in node.elems])
        if isinstance(node, ast.Placeholder):
            self.err(node.span, "call-ref",
                     "type placeholders are only valid in external signatures")
            return self.scalar("any")
        if isinstance(node, (ast.RecordTypeExpr, ast.EnumTypeExpr,
                             ast.ClassTypeExpr)):
            self.err(node.span, "context-diff",
                     "structured types must be declared with def")
            return self.scalar("any")
        raise TypeError(f"unexpected type node {node!r}")

    # -- class bodies ---------------------------------------------------------------------

    def check_class_body(self, info: ClassInfo):
        self.current_class = info
        try:
            # field defaults
            scope = self.class_scope()
            for f in info.fields.values():
                if f.default is not None:
                    t = self.check_expr(f.default, scope)
                    if f.type.kind == "any" and t.kind != "any":
                        f.type = t  # assign-any refinement via initializer
                        self.a.decl_types[id(f.node)] = t
                    elif not self._literal_coercible(f.default, t, f.type):
                        self.err(f.node.span, "var-decl",
                                 f"field {f.name}: initializer type {t} is "
                                 f"not coercible to {f.type}")
                if f.type.kind == "any":
                    self.err(f.node.span, "unresolved-any",
                             f"field {f.name!r} cannot keep type any")
            for fn in info.functions.values():
                self.check_function_body(fn, info)
            for resp in info.responses.values():
                self.check_response(info, resp)
        finally:
            self.current_class = None

    def class_scope(self) -> Scope:
        scope = Scope(self.globals)
        info = self.current_class
        if info is None:
            return scope
        for name, (t, value) in info.consts.items():
            scope.define(name, Binding(name, t, True, value))
        for f in info.fields.values():
            scope.define(f.name, Binding(f.name, f.type, False,
                                         is_state=f.is_state, node=f.node))
        return scope

    def check_function_body(self, fn: FunctionInfo, class_info):
        self.current_class = class_info
        scope = self.class_scope() if class_info else Scope(self.globals)
        for pname, ptype in fn.params:
            if ptype.kind == "any":
                self.err(fn.node.span, "unresolved-any",
                         f"parameter {pname!r} cannot keep type any")
            scope.define(pname, Binding(pname, ptype))
        prev_ret = self.current_fn_ret
        self.current_fn_ret = fn.ret
        block_type, provenance = self.check_block(fn.body, scope)
        self.current_fn_ret = prev_ret
        if fn.node.ret is not None and not ty.coercible(block_type, fn.ret):
            self.err(fn.node.span, "func-decl",
                     f"function {fn.name}: body type {block_type} (by rule "
                     f"{provenance}) is not coercible to declared {fn.ret}")
        if fn.node.ret is None:
            fn.ret = block_type if block_type.kind != "any" else self.scalar("any")
        if class_info is None:
            self.current_class = None

    def check_response(self, info: ClassInfo, resp: Response):
        node = resp.node
        scope = self.class_scope()
        if resp.trigger == "periodic":
            t = self.check_expr(node.trigger_arg, scope)
            if not ty.coercible(t, self.scalar("timespan")):
                self.err(node.span, "do-every",
                         f"do {resp.name}: every(...) needs a timespan, got {t}")
            else:
                value = self.fold(node.trigger_arg, scope)
                if value is NOT_CONST:
                    self.err(node.span, "do-every",
                             f"do {resp.name}: periodic interval must be a "
                             "constant timespan")
                else:
                    units = value.to_units(self.a.mu_ms)
                    if units <= 0:
                        self.err(node.span, "do-every",
                                 f"do {resp.name}: period must be positive")
                    else:
                        resp.interval_units = units
        elif resp.trigger == "conditional":
            t = self.check_expr(node.trigger_arg, scope)
            if not ty.coercible(t, self.scalar("bool")):
                self.err(node.span, "do-on",
                         f"do {resp.name}: on(...) needs bool, got {t}")
            resp.condition = node.trigger_arg
            if not self._mentions_state_var(node.trigger_arg, info):
                self.warn(node.span, "do-on",
                          f"do {resp.name}: condition references no state "
                          "variable and can never change between scans")
        body_scope = Scope(scope)
        for pname, ptype in resp.params:
            body_scope.define(pname, Binding(pname, ptype))
        body_scope.define("message", Binding(
            "message", self._message_type(), True))
        was = self.in_reaction
        self.in_reaction = True
        self.check_block(node.body, body_scope)
        self.in_reaction = was

    def _message_type(self):
        if not hasattr(self, "_msg_type"):
            self._msg_type = self.table.record("message", (
                ("sender", self.scalar("actor")),
                ("t_send", self.scalar("double")),
                ("t_assume", self.scalar("double")),
            ))
        return self._msg_type

    def _mentions_state_var(self, expr, info: ClassInfo) -> bool:
        found = False

        def walk(node):
            nonlocal found
            if isinstance(node, ast.Name):
                f = info.fields.get(node.id)
                if f is not None and f.is_state:
                    found = True
            elif isinstance(node, ast.Member) and isinstance(node.obj,
                                                             ast.SelfExpr):
                f = info.fields.get(node.name)
                if f is not None and f.is_state:
                    found = True
            if isinstance(node, ast.Node):
                for fld in node.__dataclass_fields__:
                    if fld != "span":
                        walk(getattr(node, fld))
            elif isinstance(node, (list, tuple)):
                for x in node:
                    walk(x)
        walk(expr)
        return found

    # -- main ------------------------------------------------------------------------------

    def check_main(self, main: ast.MainBlock):
        scope = Scope(self.globals)
        self.check_block(main.block, scope, main_phase=True)

    # -- statements ------------------------------------------------------------------------

    def check_block(self, block: ast.Block, scope: Scope, main_phase=False):
        """Type a statement sequence by the seq/return/break rules.

        Returns (type, provenance-rule)."""
        if main_phase:
            # two-phase main: actor identities exist before initializers run
            for stmt in block.statements:
                if self._is_actor_decl(stmt):
                    t = self.resolve_type(stmt.type)
                    scope.define(stmt.name, Binding(stmt.name, t, node=stmt))
        block_type, provenance = self.scalar("any"), "seq-any"
        after_return = False
        for stmt in block.statements:
            if after_return:
                self.warn(stmt.span, "return",
                          "statement is unreachable after return")
                after_return = False  # one warning per block is enough
            t, rule = self.check_statement(stmt, scope, main_phase)
            if rule == "return":
                return t, "return"
            if rule == "return-any":
                return self.scalar("any"), "return-any"
            if rule == "break":
                return block_type, "break-any"
            if t.kind != "any":
                block_type, provenance = t, "seq-nonany"
        return block_type, provenance

    def _is_actor_decl(self, stmt):
        return (isinstance(stmt, ast.VarDecl)
                and isinstance(stmt.value, ast.Call)
                and isinstance(stmt.value.callee, ast.Name)
                and stmt.value.callee.id in self.a.classes)

    def check_statement(self, stmt, scope: Scope, main_phase=False):
        """Returns (type, rule) where rule marks return/break propagation."""
        any_t = self.scalar("any")
        if isinstance(stmt, ast.VarDecl):
            self.check_local_var(stmt, scope, main_phase)
            return any_t, "var-decl"
        if isinstance(stmt, ast.ConstDecl):
            self.check_local_const(stmt, scope)
            return any_t, "var-decl"
        if isinstance(stmt, ast.ExprStmt):
            t = self.check_expr(stmt.expr, scope)
            return t, "expr"
        if isinstance(stmt, ast.Return):
            if self.current_fn_ret is None and not self.in_reaction:
                self.err(stmt.span, "return", "return outside a function")
                return any_t, "return-any"
            if stmt.value is None:
                if (self.current_fn_ret is not None
                        and self.current_fn_ret.kind != "any"):
                    self.err(stmt.span, "return-any",
                             "bare return in a function with a declared "
                             f"return type {self.current_fn_ret}")
                return any_t, "return-any"
            t = self.check_expr(stmt.value, scope)
            return t, "return"
        if isinstance(stmt, ast.Break):
            if self.loop_depth == 0:
                self.err(stmt.span, "break-any", "break outside a loop")
            return any_t, "break"
        if isinstance(stmt, ast.If):
            return self.check_if(stmt, scope), "if"
        if isinstance(stmt, ast.Cases):
            t = self.check_cases(stmt, scope, as_expr=False)
            return t, "cases"
        if isinstance(stmt, ast.While):
            cond_t = self.check_expr(stmt.cond, scope)
            folded = self.fold(stmt.cond, scope)
            if not ty.coercible(cond_t, self.scalar("bool")):
                rule = ("while-true" if folded is not NOT_CONST and folded
                        else "while-nottrue")
                self.err(stmt.cond.span or stmt.span, rule,
                         f"while condition must be bool, got {cond_t}")
            self.loop_depth += 1
            body_t, _ = self.check_block(stmt.body, Scope(scope))
            self.loop_depth -= 1
            if folded is not NOT_CONST and folded is True:
                return body_t, "while"
            return any_t, "while"
        if isinstance(stmt, ast.DoWhile):
            self.loop_depth += 1
            self.check_block(stmt.body, Scope(scope))
            self.loop_depth -= 1
            cond_t = self.check_expr(stmt.cond, scope)
            if not ty.coercible(cond_t, self.scalar("bool")):
                self.err(stmt.cond.span or stmt.span, "while-nottrue",
                         f"do-while condition must be bool, got {cond_t}")
            return any_t, "while"
        if isinstance(stmt, ast.Foreach):
            return self.check_foreach(stmt, scope), "foreach"
        if isinstance(stmt, ast.Tell):
            self.check_tell(stmt, scope)
            return self.scalar("bool"), "tell"
        if isinstance(stmt, ast.Cancel):
            self.check_cancel(stmt)
            return self.scalar("bool"), "cancel"
        raise TypeError(f"unexpected statement {stmt!r}")

    def check_local_var(self, stmt: ast.VarDecl, scope, main_phase=False):
        if scope.lookup_local(stmt.name) is not None and not main_phase:
            self.err(stmt.span, "var-decl",
                     f"duplicate variable {stmt.name!r} in this scope")
        shadowed = scope.lookup(stmt.name)
        if shadowed is not None and shadowed.is_state:
            self.warn(stmt.span, "var-decl",
                      f"local {stmt.name!r} shadows a state variable")
        t = self.resolve_type(stmt.type)
        if stmt.value is not None:
            vt = self.check_expr(stmt.value, scope)
            if t.kind == "any" and vt.kind != "any":
                t = vt  # rule assign-any via initializer
            elif self._contains_any(t) and vt.kind != "any":
                if self._literal_coercible(stmt.value, vt, t):
                    t = self._refine_any(t, vt)
                else:
                    self.err(stmt.span, "var-decl",
                             f"initializer type {vt} is not coercible to {t}")
            elif not self._literal_coercible(stmt.value, vt, t):
                self.err(stmt.span, "var-decl",
                         f"initializer type {vt} is not coercible to {t}")
        self.a.decl_types[id(stmt)] = t
        scope.define(stmt.name, Binding(stmt.name, t, node=stmt))

    def check_local_const(self, stmt: ast.ConstDecl, scope):
        t = self.resolve_type(stmt.type)
        self.check_expr(stmt.value, scope)
        value = self.fold(stmt.value, scope)
        if value is NOT_CONST:
            self.err(stmt.span, "var-decl",
                     f"const {stmt.name}: initializer is not constant")
            value = None
        else:
            value = self._coerce_const(value, stmt.value, t, stmt.span)
        self.a.decl_types[id(stmt)] = t
        scope.define(stmt.name, Binding(stmt.name, t, True, value, node=stmt))

    def _contains_any(self, t: ty.Type) -> bool:
        if t.kind == "any":
            return True
        if t.kind in ("array", "list", "set"):
            return t.elem is None or self._contains_any(t.elem)
        if t.kind == "map":
            return (t.key is None or t.value is None
                    or self._contains_any(t.key) or self._contains_any(t.value))
        return False

    def _refine_any(self, declared: ty.Type, actual: ty.Type) -> ty.Type:
        if declared.kind == "any":
            return actual
        if declared.kind == actual.kind and declared.is_collection:
            return actual
        return declared

    def check_if(self, stmt: ast.If, scope) -> ty.Type:
        cond_t = self.check_expr(stmt.cond, scope)
        folded = self.fold(stmt.cond, scope)
        if not ty.coercible(cond_t, self.scalar("bool")):
            if folded is NOT_CONST:
                rule = "if-undecided"
            elif folded:
                rule = "if-true"
            else:
                rule = "ifelse-false" if stmt.orelse else "if-false"
            self.err(stmt.cond.span or stmt.span, rule,
                     f"if condition must be bool, got {cond_t}")
        then_t, _ = self.check_block(stmt.then, Scope(scope))
        else_t = None
        if stmt.orelse is not None:
            else_t, _ = self.check_block(stmt.orelse, Scope(scope))
        if folded is True:
            return then_t
        if folded is False:
            return else_t if else_t is not None else self.scalar("any")
        return self.scalar("any")

    def check_cases(self, node: ast.Cases, scope, as_expr: bool) -> ty.Type:
        subject_t = self.check_expr(node.subject, scope)
        folded = self.fold(node.subject, scope)
        branch_types = []
        matched_type = None
        for br in node.branches:
            vt = self.check_expr(br.value, scope)
            if not ty.coercible(vt, subject_t):
                self.err(br.span, "cases-one",
                         f"case value type {vt} is not coercible to the "
                         f"selector type {subject_t}")
            bt, _ = self.check_block(ast.Block(br.body, span=br.span),
                                     Scope(scope))
            branch_types.append((br, bt))
            if folded is not NOT_CONST:
                bv = self.fold(br.value, scope)
                if bv is not NOT_CONST and self._const_eq(bv, folded) \
                        and matched_type is None:
                    matched_type = bt
        other_t = None
        if node.otherwise is not None:
            other_t, _ = self.check_block(
                ast.Block(node.otherwise, span=node.span), Scope(scope))
        if folded is not NOT_CONST:
            if matched_type is not None:
                return matched_type  # rule cases-one
            if other_t is not None:
                return other_t  # rule cases-other
            self.err(node.span, "cases-other",
                     "no case matches the constant selector and there is "
                     "no otherwise branch")
            return self.scalar("any")
        if not as_expr:
            return self.scalar("any")
        # expression position with an undecided selector: branches must unify
        result = None
        for br, bt in branch_types:
            if bt.kind == "any":
                continue
            if result is None:
                result = bt
            else:
                try:
                    result = ty.unify(self.table, result, bt)
                except ty.TypeError_:
                    self.err(br.span, "cases-one",
                             f"case branch type {bt} does not unify with "
                             f"{result}")
        if other_t is not None and other_t.kind != "any" and result is not None:
            try:
                result = ty.unify(self.table, result, other_t)
            except ty.TypeError_:
                self.err(node.span, "cases-other",
                         f"otherwise branch type {other_t} does not unify "
                         f"with {result}")
        return result if result is not None else self.scalar("any")

    @staticmethod
    def _const_eq(a, b):
        from .runtime import EnumValue, TimespanValue
        if isinstance(a, EnumValue) and isinstance(b, EnumValue):
            return a.type.tid == b.type.tid and a.code == b.code
        if isinstance(a, TimespanValue) and isinstance(b, TimespanValue):
            return a.ms == b.ms
        if isinstance(a, bool) != isinstance(b, bool):
            return False
        return a == b

    def check_foreach(self, stmt: ast.Foreach, scope) -> ty.Type:
        src_t = self.check_expr(stmt.source, scope)
        kind = stmt.source_kind
        var_types = []
        if kind == "keys":
            if src_t.kind not in ("array", "list", "set"):
                self.err(stmt.span, "foreach-keys",
                         f"keys(...) iterates arrays, lists and sets, "
                         f"got {src_t}")
                var_types = [self.scalar("any")]
            else:
                var_types = [self.scalar("int64")]
        elif kind == "values":
            if src_t.kind in ("array", "list", "set"):
                var_types = [src_t.elem or self.scalar("any")]
            elif src_t.kind == "map":
                var_types = [src_t.value or self.scalar("any")]
            else:
                self.err(stmt.span, "foreach-values",
                         f"values(...) needs a collection, got {src_t}")
                var_types = [self.scalar("any")]
        elif kind == "pairs":
            if src_t.kind != "map":
                self.err(stmt.span, "foreach-pairs",
                         f"pairs(...) needs a map, got {src_t}")
                var_types = [self.scalar("any"), self.scalar("any")]
            else:
                var_types = [src_t.key or self.scalar("any"),
                             src_t.value or self.scalar("any")]
        if len(stmt.vars) != len(var_types):
            self.err(stmt.span, f"foreach-{kind}",
                     f"foreach over {kind}() binds {len(var_types)} "
                     f"variable(s), not {len(stmt.vars)}")
            var_types = (var_types * 2)[:len(stmt.vars)]
        body_scope = Scope(scope)
        for (name, declared), vt in zip(stmt.vars, var_types):
            if declared is not None:
                dt = self.resolve_type(declared)
                if not ty.coercible(vt, dt):
                    self.err(stmt.span, f"foreach-{kind}",
                             f"loop variable {name}: declared {dt} does not "
                             f"accept element type {vt}")
                vt = dt
            body_scope.define(name, Binding(name, vt))
        self.loop_depth += 1
        self.check_block(stmt.body, body_scope)
        self.loop_depth -= 1
        return self.scalar("any")

    def check_tell(self, stmt: ast.Tell, scope):
        if self.current_class is None:
            self.err(stmt.span, "tell",
                     "tell is only valid inside an actor or connection class")
        recv_t = self.check_expr(stmt.receiver, scope)
        args = stmt.args or []
        arg_types = [self.check_expr(a, scope) for a in args]
        target_class = self.a.class_of_type(recv_t)
        if recv_t.kind not in ("actor", "connection", "any", "null") \
                and target_class is None:
            self.err(stmt.span, "tell",
                     f"tell receiver must be an actor reference, got {recv_t}")
        if target_class is not None:
            resp = target_class.responses.get(stmt.event)
            if resp is None:
                self.err(stmt.span, "tell",
                         f"class {target_class.name} declares no event "
                         f"response {stmt.event!r}")
            else:
                formals = resp.params
                if stmt.args is not None and len(args) != len(formals):
                    self.err(stmt.span, "tell",
                             f"event {stmt.event} takes {len(formals)} "
                             f"argument(s), got {len(args)}")
                elif stmt.args is None and formals:
                    self.err(stmt.span, "tell",
                             f"event {stmt.event} takes {len(formals)} "
                             "argument(s)")
                else:
                    for (fname, ftype), at, a in zip(formals, arg_types, args):
                        if not self._literal_coercible(a, at, ftype):
                            self.err(a.span or stmt.span, "tell",
                                     f"argument {fname}: {at} is not "
                                     f"coercible to {ftype}")
        seen = set()
        for key, value in stmt.with_args:
            if key in seen:
                self.err(stmt.span, "tell", f"duplicate with-key {key!r}")
            seen.add(key)
            vt = self.check_expr(value, scope)
            expected = WITH_KEYS.get(key)
            if expected == "timespan":
                if not ty.coercible(vt, self.scalar("timespan")):
                    self.err(value.span or stmt.span, "tell",
                             f"with({key}:...) needs a timespan, got {vt}")
            elif expected == "actor":
                if not (vt.is_ref or vt.kind in ("any", "null")):
                    self.err(value.span or stmt.span, "tell",
                             f"with(sender:...) needs an actor, got {vt}")
        self.a.node_types[id(stmt)] = self.scalar("bool")

    def check_cancel(self, stmt: ast.Cancel):
        rule = "cancel-all" if stmt.names is None else "cancel-names"
        if self.current_class is None:
            self.err(stmt.span, rule,
                     "cancel is only valid inside an actor or connection "
                     "class")
            return
        if stmt.names is not None:
            for name in stmt.names:
                if name not in self.current_class.responses:
                    self.err(stmt.span, "cancel-names",
                             f"cancel of unknown event {name!r} in class "
                             f"{self.current_class.name}")

    # -- expressions ---------------------------------------------------------------------------

    def check_expr(self, e, scope: Scope) -> ty.Type:
        prev = self._active_scope
        self._active_scope = scope
        try:
            t = self._check_expr(e, scope)
        finally:
            self._active_scope = prev
        self.a.node_types[id(e)] = t
        return t

    _active_scope = None

    def _check_expr(self, e, scope) -> ty.Type:
        if isinstance(e, ast.IntLit):
            return self.scalar("int64")
        if isinstance(e, ast.DecimalLit):
            return self.scalar("double")
        if isinstance(e, ast.BoolLit):
            return self.scalar("bool")
        if isinstance(e, ast.CharLit):
            return self.scalar("char")
        if isinstance(e, ast.NullLit):
            return self.scalar("null")
        if isinstance(e, ast.TimespanLit):
            return self.scalar("timespan")
        if isinstance(e, ast.StringLit):
            for frag in e.fragments:
                if not isinstance(frag, str):
                    self.check_expr(frag, scope)
            return self.scalar("string")
        if isinstance(e, ast.CollectionLit):
            return self.check_collection_lit(e, scope)
        if isinstance(e, ast.MapLit):
            return self.check_map_lit(e, scope)
        if isinstance(e, ast.TupleLit):
            elems = [self.check_expr(x, scope) for x in e.elems]
            return self.table.tuple_(elems)  # rule tupleval-inline
        if isinstance(e, ast.Name):
            return self.check_name(e, scope)
        if isinstance(e, ast.SelfExpr):
            if self.current_class is None:
                self.err(e.span, "member", "self outside a class")
                return self.scalar("any")
            return self.current_class.type
        if isinstance(e, ast.Member):
            return self.check_member(e, scope)
        if isinstance(e, ast.Index):
            return self.check_index(e, scope)
        if isinstance(e, ast.Call):
            return self.check_call(e, scope)
        if isinstance(e, ast.Assign):
            return self.check_assign(e, scope)
        if isinstance(e, ast.Ternary):
            return self.check_ternary(e, scope)
        if isinstance(e, ast.Binary):
            return self.check_binary(e, scope)
        if isinstance(e, ast.Unary):
            return self.check_unary(e, scope)
        if isinstance(e, ast.Cast):
            return self.check_cast(e, scope)
        if isinstance(e, ast.Cases):
            return self.check_cases(e, scope, as_expr=True)
        raise TypeError(f"unexpected expression {e!r}")

    def check_collection_lit(self, e: ast.CollectionLit, scope) -> ty.Type:
        elem_types = [self.check_expr(x, scope) for x in e.elems]
        if not elem_types:
            return self.table.collection(e.ctor)
        # rule coerce-coll: all elements must coerce to one element's type
        for candidate in elem_types:
            if all(ty.coercible(t, candidate) for t in elem_types):
                return self.table.collection(e.ctor, elem=candidate)
        try:
            unified = elem_types[0]
            for t in elem_types[1:]:
                unified = ty.unify(self.table, unified, t)
            return self.table.collection(e.ctor, elem=unified)
        except ty.TypeError_:
            self.err(e.span, "coerce-coll",
                     "collection elements have no unifiable type: "
                     + ", ".join(str(t) for t in elem_types))
            return self.table.collection(e.ctor)

    def check_map_lit(self, e: ast.MapLit, scope) -> ty.Type:
        if not e.entries:
            return self.table.collection("map")
        key_t = value_t = None
        for k, v in e.entries:
            kt = self.check_expr(k, scope)
            vt = self.check_expr(v, scope)
            try:
                key_t = kt if key_t is None else ty.unify(self.table, key_t, kt)
                value_t = vt if value_t is None else ty.unify(self.table,
                                                              value_t, vt)
            except ty.TypeError_ as exc:
                self.err(e.span, "coerce-coll", f"map literal: {exc}")
                return self.table.collection("map")
        return self.table.collection("map", key=key_t, value=value_t)

    def check_name(self, e: ast.Name, scope) -> ty.Type:
        binding = scope.lookup(e.id)
        if binding is not None:
            return binding.type
        if e.id in self.a.type_names:
            # type used as a value only makes sense for enum member access
            # and instantiation; both are handled by Member/Call. Flag other
            # uses late (at runtime they are meaningless).
            return self.a.type_names[e.id]
        if e.id in self.a.program_consts:
            return self.a.program_consts[e.id][0]
        if e.id == "message":
            self.err(e.span, "member",
                     "message is only available inside a do body")
            return self.scalar("any")
        self.err(e.span, "member", f"unresolved name {e.id!r}")
        return self.scalar("any")

    def check_member(self, e: ast.Member, scope) -> ty.Type:
        # enum member access: E.CONST
        if isinstance(e.obj, ast.Name):
            t = self.a.type_names.get(e.obj.id)
            if t is not None and t.kind == "enum" \
                    and scope.lookup(e.obj.id) is None:
                for cname, code in t.constants:
                    if cname == e.name:
                        self.a.enum_refs[id(e)] = (t, cname, code)
                        return t  # rule member-enum
                self.err(e.span, "member-enum",
                         f"enum {t.name} has no constant {e.name!r}")
                return t
            if e.obj.id == "string":
                # string.format external reference
                return self.scalar("any")
        obj_t = self.check_expr(e.obj, scope)
        if isinstance(e.obj, ast.SelfExpr) and self.current_class is not None:
            info = self.current_class
            f = info.fields.get(e.name)
            if f is not None:
                return f.type
            if e.name in info.consts:
                return info.consts[e.name][0]
            self.err(e.span, "member",
                     f"class {info.name} has no member {e.name!r}")
            return self.scalar("any")
        if obj_t.kind == "record":
            for fname, ftype in obj_t.fields:
                if fname == e.name:
                    return ftype
            if obj_t.name == "message":
                return self.scalar("any")  # extra with() keys carried in θ
            self.err(e.span, "member",
                     f"record {obj_t} has no field {e.name!r}")
            return self.scalar("any")
        if obj_t.is_class:
            info = obj_t.class_info
            f = info.fields.get(e.name)
            if f is not None:
                return f.type
            if e.name in info.consts:
                return info.consts[e.name][0]
            self.err(e.span, "member",
                     f"class {info.name} has no member {e.name!r}")
            return self.scalar("any")
        if obj_t.is_collection or obj_t.kind in ("any", "actor", "connection",
                                                 "object"):
            # collection method sugar (a.add(x)) resolves in check_call;
            # bare member access on these is dynamic
            return self.scalar("any")
        self.err(e.span, "member",
                 f"member access needs a record or class, got {obj_t}")
        return self.scalar("any")

    def check_index(self, e: ast.Index, scope) -> ty.Type:
        obj_t = self.check_expr(e.obj, scope)
        idx_t = self.check_expr(e.index, scope)
        if obj_t.kind in ("array", "list", "set"):
            if not idx_t.is_integer:
                self.err(e.span, "index-int",
                         f"index must be an integer, got {idx_t}")
            folded = self.fold(e.index, scope)
            if folded is not NOT_CONST and isinstance(folded, int) \
                    and obj_t.size is not None:
                if not 0 <= folded < obj_t.size:
                    self.err(e.span, "index-int",
                             f"index {folded} out of bounds for "
                             f"{obj_t.kind} of size {obj_t.size}")
            return obj_t.elem or self.scalar("any")
        if obj_t.kind == "tuple":
            folded = self.fold(e.index, scope)
            if folded is NOT_CONST or not isinstance(folded, int):
                self.err(e.span, "index-tuple",
                         "tuple index must be a constant integer")
                return self.scalar("any")
            if not 0 <= folded < len(obj_t.elems):
                self.err(e.span, "index-tuple",
                         f"tuple index {folded} out of range 0.."
                         f"{len(obj_t.elems) - 1}")
                return self.scalar("any")
            return obj_t.elems[folded]
        if obj_t.kind == "map":
            key_t = obj_t.key or self.scalar("any")
            if not ty.coercible(idx_t, key_t):
                self.err(e.span, "index-key",
                         f"map key type {idx_t} is not coercible to {key_t}")
            return obj_t.value or self.scalar("any")
        if obj_t.kind == "any":
            return self.scalar("any")
        self.err(e.span, "index-int",
                 f"indexing needs a collection, got {obj_t}")
        return self.scalar("any")

    # -- calls ------------------------------------------------------------------

    def check_call(self, e: ast.Call, scope) -> ty.Type:
        # collection method sugar: a.add(x) -> add(a, x)
        if isinstance(e.callee, ast.Member):
            base = e.callee.obj
            mname = e.callee.name
            if isinstance(base, ast.Name) and base.id == "string" \
                    and scope.lookup("string") is None:
                return self.check_external_call(e, "string.format",
                                                e.args, scope)
            base_t = self.check_expr(base, scope)
            if base_t.is_collection and mname in (
                    "add", "push_back", "removeAt", "reverse", "contains",
                    "length", "keys", "values", "pairs", "entries"):
                return self.check_external_call(e, mname, [base] + e.args,
                                                scope)
            if isinstance(base, ast.SelfExpr) and self.current_class \
                    and mname in self.current_class.functions:
                fn = self.current_class.functions[mname]
                return self.check_known_call(e, fn.params, fn.ret, e.args,
                                             scope, label=mname)
            self.err(e.span, "call-ref",
                     f"cannot call member {mname!r} on {base_t}")
            return self.scalar("any")
        if not isinstance(e.callee, ast.Name):
            self.err(e.span, "call-ref", "call target is not callable")
            return self.scalar("any")
        name = e.callee.id
        # class/record/tuple instantiation
        t = self.a.type_names.get(name)
        if t is not None and scope.lookup(name) is None:
            if t.is_class:
                return self.check_instantiation(e, t, rule="classval")
            if t.kind == "record":
                return self.check_instantiation(e, t, rule="recordval")
            if t.kind == "tuple":
                return self.check_tuple_instantiation(e, t, scope)
        # local/class/program function
        if self.current_class and name in self.current_class.functions:
            fn = self.current_class.functions[name]
            return self.check_known_call(e, fn.params, fn.ret, e.args, scope,
                                         label=name)
        if name in self.a.functions:
            fn = self.a.functions[name]
            return self.check_known_call(e, fn.params, fn.ret, e.args, scope,
                                         label=name)
        return self.check_external_call(e, name, e.args, scope)

    def check_instantiation(self, e: ast.Call, t: ty.Type, rule) -> ty.Type:
        scope_fields = dict(t.fields)
        info = t.class_info if t.is_class else None
        if e.args:
            self.err(e.span, rule,
                     f"{t.name} is instantiated with named arguments")
            return t
        seen = set()
        for fname, fexpr in e.named_args:
            ftype = scope_fields.get(fname)
            if ftype is None:
                self.err(e.span, rule,
                         f"{t.name} has no field {fname!r}")
                continue
            if info is not None and fname not in info.fields:
                self.err(e.span, rule,
                         f"{t.name}: {fname!r} is not a settable field")
                continue
            seen.add(fname)
            at = self.check_expr(fexpr, self.current_scope_for(e))
            if not self._literal_coercible(fexpr, at, ftype):
                self.err(fexpr.span or e.span, rule,
                         f"{t.name}.{fname}: {at} is not coercible to {ftype}")
        if t.kind == "record":
            missing = [n for n, _ in t.fields if n not in seen]
            if missing:
                self.err(e.span, rule,
                         f"{t.name}: missing field "
                         + ", ".join(repr(m) for m in missing))
        return t

    def current_scope_for(self, e):
        # instantiation argument expressions are checked in the scope that
        # the caller passed down; stored transiently by check_* entry points
        return self._active_scope

    def check_tuple_instantiation(self, e: ast.Call, t: ty.Type, scope):
        if e.named_args:
            self.err(e.span, "tupleval-def",
                     "tuple types are instantiated positionally")
            return t
        if len(e.args) != len(t.elems):
            self.err(e.span, "tupleval-def",
                     f"tuple type {t} has {len(t.elems)} elements, "
                     f"got {len(e.args)}")
            return t
        for arg, et in zip(e.args, t.elems):
            at = self.check_expr(arg, scope)
            if not self._literal_coercible(arg, at, et):
                self.err(arg.span or e.span, "tupleval-def",
                         f"tuple element {at} is not coercible to {et}")
        return t

    def check_known_call(self, e, params, ret, args, scope, label):
        if len(args) != len(params):
            self.err(e.span, "call-ref",
                     f"{label} takes {len(params)} argument(s), "
                     f"got {len(args)}")
        for arg, (pname, ptype) in zip(args, params):
            at = self.check_expr(arg, scope)
            if not self._literal_coercible(arg, at, ptype):
                self.err(arg.span or e.span, "call-ref",
                         f"{label}({pname}): {at} is not coercible to "
                         f"{ptype}")
        if e.named_args:
            self.err(e.span, "call-ref",
                     f"{label} takes positional arguments")
        return ret or self.scalar("any")

    def check_external_call(self, e: ast.Call, name, args, scope) -> ty.Type:
        if e.named_args:
            self.err(e.span, "call-ref",
                     f"{name} takes positional arguments")
            return self.scalar("any")
        if name in _SPECIAL_EXTERNALS:
            out = self.check_special_external(e, name, args, scope)
            if out is not None:
                return out
        key = (name, len(args))
        sigs = self.a.externals.get(key)
        if not sigs:
            arities = sorted(a for n, a in self.a.externals if n == name)
            if arities:
                self.err(e.span, "call-ref",
                         f"{name} takes {' or '.join(map(str, arities))} "
                         f"argument(s), got {len(args)}")
            else:
                self.err(e.span, "call-ref", f"unresolved function {name!r}")
            for a in args:
                self.check_expr(a, scope)
            return self.scalar("any")
        arg_types = [self.check_expr(a, scope) for a in args]
        last_error = None
        for sig in sigs:
            result = self._match_signature(sig, args, arg_types)
            if isinstance(result, ty.Type):
                return result
            last_error = result
        self.err(e.span, "call-ref", f"{name}: {last_error}")
        return self.scalar("any")

    def _match_signature(self, sig: ExternalSig, args, arg_types):
        bindings: dict[str, ty.Type] = {}
        for (pname, ptype), at, arg in zip(sig.params, arg_types, args):
            if isinstance(ptype, PlaceholderRef):
                bound = bindings.get(ptype.name)
                if bound is None:
                    bindings[ptype.name] = at
                elif ty.coercible(at, bound):
                    pass
                elif ty.coercible(bound, at):
                    bindings[ptype.name] = at
                else:
                    return (f"placeholder #{ptype.name} bound to "
                            f"incompatible types {bound} and {at}")
            else:
                if not self._literal_coercible(arg, at, ptype):
                    return f"argument {pname}: {at} is not coercible to {ptype}"
        if sig.ret is None:
            return self.scalar("any")
        if isinstance(sig.ret, PlaceholderRef):
            return bindings.get(sig.ret.name, self.scalar("any"))
        return sig.ret

    def check_special_external(self, e, name, args, scope):
        """Collection- and context-aware typing for the builtins.

        Returns a Type, or None to fall back to plain signature matching."""
        span = e.span
        if name == "prev":
            if len(args) != 1:
                self.err(span, "call-ref", "prev takes one state variable")
                return self.scalar("any")
            target = args[0]
            field = None
            if isinstance(target, ast.Name) and self.current_class:
                field = self.current_class.fields.get(target.id)
            elif isinstance(target, ast.Member) \
                    and isinstance(target.obj, ast.SelfExpr) \
                    and self.current_class:
                field = self.current_class.fields.get(target.name)
            if field is None or not field.is_state:
                self.err(span, "call-ref",
                         "prev expects a state variable of the enclosing "
                         "class")
                return self.scalar("any")
            self.check_expr(target, scope)
            return field.type
        if name in ("keys", "values", "pairs", "entries", "length",
                    "reverse"):
            if len(args) != 1:
                return None
            at = self.check_expr(args[0], scope)
            anyt = self.scalar("any")
            if name == "length":
                if not (at.is_collection or at.kind in ("string", "any")):
                    self.err(span, "call-ref",
                             f"length expects a collection, got {at}")
                return self.scalar("int64")
            if at.kind == "any":
                return anyt
            if not at.is_collection:
                self.err(span, "call-ref",
                         f"{name} expects a collection, got {at}")
                return anyt
            if name == "keys":
                inner = at.key if at.kind == "map" else self.scalar("int64")
                return self.table.collection("array", elem=inner or anyt)
            if name == "values":
                inner = at.value if at.kind == "map" else at.elem
                return self.table.collection("array", elem=inner or anyt)
            if name in ("pairs", "entries"):
                if at.kind != "map":
                    self.err(span, "call-ref",
                             f"{name} expects a map, got {at}")
                    return anyt
                pair = self.table.tuple_([at.key or anyt, at.value or anyt])
                return self.table.collection("array", elem=pair)
            if name == "reverse":
                if at.kind not in ("array", "list"):
                    self.err(span, "call-ref",
                             f"reverse expects an array or list, got {at}")
                return at
        if name in ("add", "push_back", "contains"):
            if len(args) != 2:
                return None
            coll_t = self.check_expr(args[0], scope)
            elem_t = self.check_expr(args[1], scope)
            if coll_t.kind == "any":
                return coll_t if name != "contains" else self.scalar("bool")
            if not coll_t.is_collection or coll_t.kind == "map":
                self.err(span, "call-ref",
                         f"{name} expects an array, list or set, got {coll_t}")
            else:
                target = coll_t.elem or self.scalar("any")
                if not self._literal_coercible(args[1], elem_t, target):
                    self.err(span, "call-ref",
                             f"{name}: element type {elem_t} is not "
                             f"coercible to {target}")
            return self.scalar("bool") if name == "contains" else coll_t
        if name == "removeAt":
            if len(args) != 2:
                return None
            coll_t = self.check_expr(args[0], scope)
            idx_t = self.check_expr(args[1], scope)
            if coll_t.is_collection and coll_t.kind == "map":
                self.err(span, "call-ref", "removeAt works on sequences")
            if not idx_t.is_integer and idx_t.kind != "any":
                self.err(span, "call-ref",
                         f"removeAt index must be an integer, got {idx_t}")
            return coll_t
        if name in ("abs", "min", "max"):
            arg_types = [self.check_expr(a, scope) for a in args]
            result = None
            for at in arg_types:
                if not (at.is_numeric or at.kind in ("timespan", "any")):
                    self.err(span, "call-ref",
                             f"{name} expects numeric or timespan arguments, "
                             f"got {at}")
                    return self.scalar("any")
                try:
                    result = at if result is None \
                        else ty.unify(self.table, result, at)
                except ty.TypeError_:
                    self.err(span, "call-ref",
                             f"{name}: argument types do not unify")
                    return self.scalar("any")
            return result or self.scalar("any")
        return None  # plain signature path (println, toString, pow, ...)

    # -- operators --------------------------------------------------------------

    def check_assign(self, e: ast.Assign, scope) -> ty.Type:
        target_t = self.check_lvalue(e.target, scope)
        if e.op != "=":
            # rule assign-ext: a op= b expands to a = a op b
            synthetic = ast.Binary(e.op[:-1], e.target, e.value,
                                   span=e.span)
            before = len(self.a.diags)
            result_t = self.check_binary(synthetic, scope)
            self.a.node_types[id(e.value)] = self.a.node_types.get(
                id(e.value), result_t)
            if len(self.a.diags) > before:
                # rewrite the blame onto the extended-assignment rule
                for d in self.a.diags[before:]:
                    if d.severity == "error":
                        d.rule = "assign-ext"
                        d.message = (f"in expansion of {e.op}: " + d.message)
                return target_t
            value_t = result_t
            value_expr = synthetic
        else:
            value_t = self.check_expr(e.value, scope)
            value_expr = e.value
        binding = self._lvalue_binding(e.target, scope)
        if binding is not None and binding.is_const:
            self.err(e.span, "assign",
                     f"cannot assign to constant {binding.name!r}")
            return target_t
        if target_t.kind == "any" and value_t.kind != "any":
            # rule assign-any: first assignment resolves the placeholder
            if binding is not None:
                binding.type = value_t
                if binding.node is not None:
                    self.a.decl_types[id(binding.node)] = value_t
            return value_t
        if self._contains_any(target_t) and value_t.kind != "any" \
                and self._literal_coercible(value_expr, value_t, target_t):
            refined = self._refine_any(target_t, value_t)
            if binding is not None:
                binding.type = refined
                if binding.node is not None:
                    self.a.decl_types[id(binding.node)] = refined
            return refined
        if target_t.kind == "any" and value_t.kind == "any":
            self.err(e.span, "assign-any",
                     "assignment cannot resolve type any")
            return target_t
        if not self._literal_coercible(value_expr, value_t, target_t):
            self.err(e.span, "assign",
                     f"value of type {value_t} is not coercible to {target_t}")
        return target_t

    def check_lvalue(self, target, scope) -> ty.Type:
        if isinstance(target, ast.Name):
            return self.check_expr(target, scope)
        if isinstance(target, ast.Member):
            if isinstance(target.obj, ast.SelfExpr):
                return self.check_expr(target, scope)
            self.err(target.span, "assign",
                     "assignment targets must be local (own state only)")
            return self.check_expr(target, scope)
        if isinstance(target, ast.Index):
            return self.check_expr(target, scope)
        self.err(target.span, "assign", "expression is not assignable")
        return self.check_expr(target, scope)

    def _lvalue_binding(self, target, scope):
        if isinstance(target, ast.Name):
            return scope.lookup(target.id)
        return None

    def check_ternary(self, e: ast.Ternary, scope) -> ty.Type:
        cond_t = self.check_expr(e.cond, scope)
        folded = self.fold(e.cond, scope)
        then_t = self.check_expr(e.then, scope)
        else_t = self.check_expr(e.orelse, scope)
        if not ty.coercible(cond_t, self.scalar("bool")):
            if folded is NOT_CONST:
                rule = "ifexpr-undecided"
            else:
                rule = "ifexpr-true" if folded else "ifexpr-false"
            self.err(e.span, rule,
                     f"conditional expression needs a bool, got {cond_t}")
            return self.scalar("any")
        if folded is True:
            return then_t  # rule ifexpr-true
        if folded is False:
            return else_t  # rule ifexpr-false
        try:
            return ty.unify(self.table, then_t, else_t)
        except ty.TypeError_:
            self.err(e.span, "ifexpr-undecided",
                     f"branch types {then_t} and {else_t} do not unify")
            return self.scalar("any")

    def check_binary(self, e: ast.Binary, scope) -> ty.Type:
        lt = self.check_expr(e.left, scope)
        rt = self.check_expr(e.right, scope)
        op = e.op
        bool_t = self.scalar("bool")
        if op in ("+", "-", "*"):
            if lt.kind == "timespan" and rt.kind == "timespan" and op != "*":
                return self.scalar("timespan")
            if lt.kind == "any" or rt.kind == "any":
                return self.scalar("any")
            if not lt.is_numeric:
                self.err(e.span, "binary-arith1",
                         f"operand of {op} must be numeric, got {lt}")
                return self.scalar("any")
            if not rt.is_numeric:
                self.err(e.span, "binary-arith2",
                         f"operand of {op} must be numeric, got {rt}")
                return self.scalar("any")
            if ty.coercible(lt, rt):
                return rt  # rule binary-arith1
            if ty.coercible(rt, lt):
                return lt  # rule binary-arith2
            try:
                return ty.unify(self.table, lt, rt)
            except ty.TypeError_:
                self.err(e.span, "binary-arith1",
                         f"no common numeric type for {lt} {op} {rt}")
                return self.scalar("any")
        if op == "/":
            ok = all(t.is_numeric or t.kind == "any" for t in (lt, rt))
            if not ok:
                self.err(e.span, "binary-div",
                         f"division needs numeric operands, got {lt} and {rt}")
            return self.scalar("double")  # (a / b): double, always
        if op == "%":
            if not ((lt.is_integer or lt.kind == "any")
                    and (rt.is_integer or rt.kind == "any")):
                self.err(e.span, "binary-mod",
                         f"modulo needs integer operands, got {lt} and {rt}")
                return self.scalar("int64")
            if lt.kind == "any" or rt.kind == "any":
                return self.scalar("int64")
            try:
                return ty.unify(self.table, lt, rt)
            except ty.TypeError_:
                self.err(e.span, "binary-mod",
                         f"no common integer type for {lt} % {rt}")
                return self.scalar("int64")
        if op in ("&&", "||"):
            for t, side in ((lt, e.left), (rt, e.right)):
                if not ty.coercible(t, bool_t):
                    self.err(side.span or e.span, "binary-logic",
                             f"operand of {op} must be bool, got {t}")
            return bool_t
        if op in ("&", "|", "^"):
            for t in (lt, rt):
                if not (t.is_integer or t.kind == "any"):
                    self.err(e.span, "bitwise-binary",
                             f"bitwise {op} needs integer operands, got {t}")
                    return self.scalar("int64")
            if lt.kind == "any" or rt.kind == "any":
                return self.scalar("int64")
            try:
                return ty.unify(self.table, lt, rt)
            except ty.TypeError_:
                self.err(e.span, "bitwise-binary",
                         f"no common integer type for {lt} {op} {rt}")
                return self.scalar("int64")
        if op in ("<<", ">>"):
            if not (lt.is_integer or lt.kind == "any"):
                self.err(e.span, "shift",
                         f"shift needs an integer left operand, got {lt}")
            if rt.kind not in ty.UINT_KINDS and rt.kind != "any":
                self.err(e.span, "shift",
                         f"shift amount must be unsigned (cast with as uint), "
                         f"got {rt}")
            return lt if lt.is_integer else self.scalar("int64")
        if op in ("==", "!="):
            return self.check_equality(e, lt, rt)
        if op in ("<", "<=", ">", ">="):
            return self.check_relational(e, lt, rt)
        raise TypeError(f"unexpected operator {op!r}")

    def check_equality(self, e, lt, rt) -> ty.Type:
        bool_t = self.scalar("bool")
        if lt.kind == "any" or rt.kind == "any":
            self.err(e.span, "cmp-eq",
                     "equality needs resolved (non-any) operand types")
            return bool_t
        if lt.tid == rt.tid:
            return bool_t
        # char coerces to string in equality contexts
        pair = {lt.kind, rt.kind}
        if pair == {"char", "string"}:
            return bool_t
        if "null" in pair and (lt.is_ref or rt.is_ref):
            return bool_t
        if lt.is_ref and rt.is_ref:
            return bool_t  # reference identity across class/actor views
        self.err(e.span, "cmp-eq",
                 f"equality needs identical types, got {lt} and {rt}")
        return bool_t

    def check_relational(self, e, lt, rt) -> ty.Type:
        bool_t = self.scalar("bool")
        kinds = {lt.kind, rt.kind}
        if "any" in kinds:
            return bool_t
        if lt.kind == "timespan" and rt.kind == "timespan":
            return bool_t  # rule cmp-timespan
        if "timespan" in kinds:
            self.err(e.span, "cmp-timespan",
                     f"cannot compare timespan with {lt if rt.kind == 'timespan' else rt}")
            return bool_t
        if lt.is_numeric and rt.is_numeric:
            try:
                ty.unify(self.table, lt, rt)
                return bool_t
            except ty.TypeError_:
                self.err(e.span, "cmp-rel",
                         f"no common numeric type for {lt} and {rt}")
                return bool_t
        self.err(e.span, "cmp-rel",
                 f"relational comparison needs numeric or timespan operands, "
                 f"got {lt} and {rt}")
        return bool_t

    def check_unary(self, e: ast.Unary, scope) -> ty.Type:
        t = self.check_expr(e.operand, scope)
        if e.op == "-":
            if not (t.is_numeric or t.kind in ("timespan", "any")):
                self.err(e.span, "unary-arith",
                         f"unary - needs a numeric operand, got {t}")
                return self.scalar("any")
            return t
        if e.op == "!":
            if not ty.coercible(t, self.scalar("bool")):
                self.err(e.span, "unary-logic",
                         f"! needs a bool operand, got {t}")
            return self.scalar("bool")
        if e.op == "~":
            if not (t.is_integer or t.kind == "any"):
                self.err(e.span, "bitwise-unary",
                         f"~ needs an integer operand, got {t}")
                return self.scalar("int64")
            return t if t.is_integer else self.scalar("int64")
        raise TypeError(f"unexpected unary {e.op!r}")

    def check_cast(self, e: ast.Cast, scope) -> ty.Type:
        src = self.check_expr(e.expr, scope)
        dst = self.resolve_type(e.type)
        self.a.decl_types[id(e)] = dst
        if src.kind == "any" or dst.kind == "any":
            return dst
        if src.kind == "timespan" and not dst.is_numeric:
            self.err(e.span, "timespan-to-num",
                     f"timespan converts to numeric types only, not {dst}")
            return dst
        if dst.kind == "timespan" and not (src.is_numeric
                                           or src.kind == "timespan"):
            self.err(e.span, "num-to-timespan",
                     f"only numeric values convert to timespan, not {src}")
            return dst
        if src.kind == "enum" and not (dst.is_integer or dst.kind == "enum"):
            self.err(e.span, "conv-enum2int",
                     f"enum converts to integer types only, not {dst}")
            return dst
        if dst.kind == "enum" and not (src.is_integer or src.kind == "enum"):
            self.err(e.span, "conv-int2enum",
                     f"only integers convert to enum, not {src}")
            return dst
        if not ty.convertible(src, dst):
            self.err(e.span, "explicit-conversion",
                     f"no conversion from {src} to {dst}")
        return dst

    def _literal_coercible(self, expr, actual: ty.Type,
                           target: ty.Type) -> bool:
        """Coercibility with context-typed collection literals (coerce-coll)."""
        if ty.coercible(actual, target):
            return True
        if isinstance(expr, ast.CollectionLit) and target.kind == expr.ctor:
            elem_target = target.elem or self.scalar("any")
            if target.size is not None and len(expr.elems) != target.size:
                return False
            return all(self._literal_coercible(
                x, self.a.node_types.get(id(x), self.scalar("any")),
                elem_target) for x in expr.elems)
        if isinstance(expr, ast.MapLit) and target.kind == "map":
            kt = target.key or self.scalar("any")
            vt = target.value or self.scalar("any")
            return all(
                self._literal_coercible(
                    k, self.a.node_types.get(id(k), self.scalar("any")), kt)
                and self._literal_coercible(
                    v, self.a.node_types.get(id(v), self.scalar("any")), vt)
                for k, v in expr.entries)
        return False

    # -- constant folding -------------------------------------------------------

    def fold(self, e, scope: Scope):
        """Evaluate constant expressions; NOT_CONST when not static."""
        from .runtime import EnumValue, TimespanValue
        if isinstance(e, ast.IntLit):
            return e.value
        if isinstance(e, ast.DecimalLit):
            return e.value()
        if isinstance(e, ast.BoolLit):
            return e.value
        if isinstance(e, ast.CharLit):
            return e.value
        if isinstance(e, ast.StringLit) and e.is_plain:
            return e.plain_text()
        if isinstance(e, ast.NullLit):
            return None
        if isinstance(e, ast.TimespanLit):
            return TimespanValue.from_components(
                ty.parse_timespan(e.components))
        if isinstance(e, ast.Name):
            binding = scope.lookup(e.id)
            if binding is not None and binding.is_const \
                    and binding.value is not NOT_CONST:
                return binding.value
            if binding is None and e.id in self.a.program_consts:
                t, v = self.a.program_consts[e.id]
                return v if v is not None else NOT_CONST
            if binding is None and self.current_class is not None \
                    and e.id in self.current_class.consts:
                t, v = self.current_class.consts[e.id]
                return v if v is not None else NOT_CONST
            return NOT_CONST
        if isinstance(e, ast.Member):
            ref = self.a.enum_refs.get(id(e))
            if ref is not None:
                t, name, code = ref
                return EnumValue(t, name, code)
            if isinstance(e.obj, ast.Name):
                t = self.a.type_names.get(e.obj.id)
                if t is not None and t.kind == "enum":
                    for cname, code in t.constants:
                        if cname == e.name:
                            return EnumValue(t, cname, code)
            return NOT_CONST
        if isinstance(e, ast.Unary):
            v = self.fold(e.operand, scope)
            if v is NOT_CONST:
                return NOT_CONST
            try:
                if e.op == "-":
                    if isinstance(v, TimespanValue):
                        return TimespanValue.from_ms(-v.ms)
                    return -v
                if e.op == "!":
                    return not v
                if e.op == "~":
                    return ~v
            except TypeError:
                return NOT_CONST
        if isinstance(e, ast.Binary):
            return self._fold_binary(e, scope)
        if isinstance(e, ast.Ternary):
            c = self.fold(e.cond, scope)
            if c is NOT_CONST:
                return NOT_CONST
            return self.fold(e.then if c else e.orelse, scope)
        if isinstance(e, ast.Cast):
            v = self.fold(e.expr, scope)
            if v is NOT_CONST:
                return NOT_CONST
            src = self.type_of_value(v)
            dst = self.a.decl_types.get(id(e))
            if src is None or dst is None:
                return NOT_CONST
            try:
                return ty.convert(v, src, dst, self.a.mu_ms)
            except ty.ConversionError:
                return NOT_CONST
        return NOT_CONST

    def _fold_binary(self, e: ast.Binary, scope):
        from .runtime import TimespanValue
        left = self.fold(e.left, scope)
        if left is NOT_CONST:
            return NOT_CONST
        # shortcut logic folds on a constant left side
        if e.op == "&&" and left is False:
            return False
        if e.op == "||" and left is True:
            return True
        right = self.fold(e.right, scope)
        if right is NOT_CONST:
            return NOT_CONST
        op = e.op
        lts = isinstance(left, TimespanValue)
        rts = isinstance(right, TimespanValue)
        if lts or rts:
            if lts and rts:
                if op == "+":
                    return TimespanValue.concat(left, right)
                if op == "-":
                    return TimespanValue.from_ms(left.ms - right.ms)
                if op in ("<", "<=", "==", "!=", ">=", ">"):
                    return ty.compare_timespan(left.components,
                                               right.components, op)
            return NOT_CONST
        try:
            if op == "+":
                return left + right
            if op == "-":
                return left - right
            if op == "*":
                return left * right
            if op == "/":
                if right == 0:
                    self.err(e.span, "const-fold",
                             "division by zero in a constant expression")
                    return NOT_CONST
                return float(left) / float(right)  # rule binary-div: double
            if op == "%":
                if right == 0:
                    self.err(e.span, "const-fold",
                             "modulo by zero in a constant expression")
                    return NOT_CONST
                return int(_trunc_mod(left, right))
            if op == "&&":
                return bool(left) and bool(right)
            if op == "||":
                return bool(left) or bool(right)
            if op == "&":
                return left & right
            if op == "|":
                return left | right
            if op == "^":
                return left ^ right
            if op == "<<":
                return left << right
            if op == ">>":
                return left >> right
            if op == "==":
                return self._const_eq(left, right)
            if op == "!=":
                return not self._const_eq(left, right)
            if op == "<":
                return left < right
            if op == "<=":
                return left <= right
            if op == ">":
                return left > right
            if op == ">=":
                return left >= right
        except TypeError:
            return NOT_CONST
        return NOT_CONST

def _trunc_mod(a, b):
    """C-style remainder: truncates toward zero."""
    q = int(a / b) if b else 0
    return a - q * b

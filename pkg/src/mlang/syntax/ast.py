"""AST node definitions for M, mirroring the grammar productions."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Union

from .tokens import Span


@dataclass
class Node:
    span: Optional[Span] = field(default=None, repr=False, compare=False, kw_only=True)

    @property
    def kind(self) -> str:
        return type(self).__name__


# --- program structure -------------------------------------------------

@dataclass
class Property(Node):
    name: str
    value: Optional["Expr"] = None


@dataclass
class Annotation(Node):
    name: str
    props: list[Property] = field(default_factory=list)
    body: Optional[str] = None  # raw text between {= =}


@dataclass
class Include(Node):
    path: str


@dataclass
class Program(Node):
    annotations: list[Annotation] = field(default_factory=list)
    includes: list[Include] = field(default_factory=list)
    decls: list["Decl"] = field(default_factory=list)  # const/function/type, source order
    main: Optional["MainBlock"] = None
    origin: str = "<input>"

    @property
    def const_decls(self):
        return [d for d in self.decls if isinstance(d, ConstDecl)]

    @property
    def function_decls(self):
        return [d for d in self.decls if isinstance(d, FunctionDecl)]

    @property
    def type_decls(self):
        return [d for d in self.decls if isinstance(d, TypeDecl)]


# --- types (syntactic) --------------------------------------------------

@dataclass
class TypeName(Node):
    name: str  # any/bool/char/string/timespan/numeric names/user names


@dataclass
class CollectionTypeExpr(Node):
    ctor: str  # array | list | set | map
    elem: Optional["TypeExpr"] = None  # array/list/set
    key: Optional["TypeExpr"] = None  # map
    value: Optional["TypeExpr"] = None  # map
    size: Optional[int] = None  # fixed-size array


@dataclass
class TupleTypeExpr(Node):
    elems: list["TypeExpr"] = field(default_factory=list)


@dataclass
class RecordTypeExpr(Node):
    fields: list[tuple[str, "TypeExpr"]] = field(default_factory=list)


@dataclass
class EnumTypeExpr(Node):
    constants: list[tuple[str, Optional[int]]] = field(default_factory=list)


@dataclass
class ClassTypeExpr(Node):
    class_kind: Optional[str] = None  # object | actor | connection
    extends: list[str] = field(default_factory=list)
    members: list["Decl"] = field(default_factory=list)  # VarDecl/ConstDecl/FunctionDecl/DoDecl


@dataclass
class Placeholder(Node):
    name: str  # '#T' placeholder in external signatures


TypeExpr = Union[TypeName, CollectionTypeExpr, TupleTypeExpr, RecordTypeExpr,
                 EnumTypeExpr, ClassTypeExpr, Placeholder]


# --- declarations -------------------------------------------------------

@dataclass
class ConstDecl(Node):
    name: str
    type: TypeExpr = None
    value: "Expr" = None


@dataclass
class VarDecl(Node):
    name: str
    type: TypeExpr = None
    value: Optional["Expr"] = None
    props: list[Property] = field(default_factory=list)

    @property
    def is_state(self) -> bool:
        return any(p.name == "state" for p in self.props)


@dataclass
class FunctionDecl(Node):
    name: str
    params: list[tuple[str, TypeExpr]] = field(default_factory=list)
    ret: Optional[TypeExpr] = None
    body: Optional["Block"] = None
    external: bool = False


@dataclass
class TypeDecl(Node):
    name: str
    target: TypeExpr = None


@dataclass
class DoDecl(Node):
    name: str
    trigger: str = "receive"  # receive | on | every
    trigger_arg: Optional["Expr"] = None  # condition (on) or interval (every)
    extra_props: list[Property] = field(default_factory=list)
    params: list[tuple[str, TypeExpr]] = field(default_factory=list)
    has_parens: bool = False
    body: "Block" = None


Decl = Union[ConstDecl, VarDecl, FunctionDecl, TypeDecl, DoDecl]


@dataclass
class MainBlock(Node):
    block: "Block" = None


# --- statements ---------------------------------------------------------

@dataclass
class Block(Node):
    statements: list["Stmt"] = field(default_factory=list)


@dataclass
class ExprStmt(Node):
    expr: "Expr" = None


@dataclass
class Return(Node):
    value: Optional["Expr"] = None


@dataclass
class If(Node):
    cond: "Expr" = None
    then: Block = None
    orelse: Optional[Block] = None


@dataclass
class CaseBranch(Node):
    value: "Expr" = None
    body: list["Stmt"] = field(default_factory=list)


@dataclass
class Cases(Node):
    """cases(e){case v: s*; ...} — usable in statement and expression position."""
    subject: "Expr" = None
    branches: list[CaseBranch] = field(default_factory=list)
    otherwise: Optional[list["Stmt"]] = None


@dataclass
class While(Node):
    cond: "Expr" = None
    body: Block = None


@dataclass
class DoWhile(Node):
    body: Block = None
    cond: "Expr" = None


@dataclass
class Foreach(Node):
    vars: list[tuple[str, Optional[TypeExpr]]] = field(default_factory=list)
    source_kind: str = "values"  # values | keys | pairs
    source: "Expr" = None
    body: Block = None


@dataclass
class Break(Node):
    pass


@dataclass
class Tell(Node):
    receiver: "Expr" = None  # Name or SelfExpr
    event: str = ""
    args: Optional[list["Expr"]] = None  # None: no parens at all
    with_args: list[tuple[str, "Expr"]] = field(default_factory=list)


@dataclass
class Cancel(Node):
    names: Optional[list[str]] = None  # None means '*'


Stmt = Union[VarDecl, ExprStmt, Return, If, Cases, While, DoWhile, Foreach,
             Break, Tell, Cancel]


# --- expressions ---------------------------------------------------------

@dataclass
class IntLit(Node):
    value: int = 0


@dataclass
class DecimalLit(Node):
    text: str = "0.0"  # source text; value() gives the float

    def value(self) -> float:
        return float(self.text)


@dataclass
class BoolLit(Node):
    value: bool = False


@dataclass
class CharLit(Node):
    value: str = ""


@dataclass
class StringLit(Node):
    """String literal; fragments alternate text and ${...} expressions."""
    fragments: list[Union[str, "Expr"]] = field(default_factory=list)

    @property
    def is_plain(self) -> bool:
        return all(isinstance(f, str) for f in self.fragments)

    def plain_text(self) -> str:
        return "".join(f for f in self.fragments if isinstance(f, str))


@dataclass
class NullLit(Node):
    pass


@dataclass
class TimespanLit(Node):
    components: list[tuple[str, str]] = field(default_factory=list)  # (decimal text, unit)
    lexeme: str = ""


@dataclass
class CollectionLit(Node):
    ctor: str = "array"  # array | list | set
    elems: list["Expr"] = field(default_factory=list)
    shorthand: bool = False  # [1,2,3]


@dataclass
class MapLit(Node):
    entries: list[tuple["Expr", "Expr"]] = field(default_factory=list)
    shorthand: bool = False  # {"k":v}


@dataclass
class TupleLit(Node):
    elems: list["Expr"] = field(default_factory=list)


@dataclass
class Name(Node):
    id: str = ""


@dataclass
class SelfExpr(Node):
    pass


@dataclass
class Member(Node):
    obj: "Expr" = None
    name: str = ""


@dataclass
class Index(Node):
    obj: "Expr" = None
    index: "Expr" = None


@dataclass
class Call(Node):
    callee: "Expr" = None
    args: list["Expr"] = field(default_factory=list)
    named_args: list[tuple[str, "Expr"]] = field(default_factory=list)


@dataclass
class Assign(Node):
    target: "Expr" = None
    op: str = "="  # = += -= *= /= %=
    value: "Expr" = None


@dataclass
class Ternary(Node):
    cond: "Expr" = None
    then: "Expr" = None
    orelse: "Expr" = None


@dataclass
class Binary(Node):
    op: str = "+"
    left: "Expr" = None
    right: "Expr" = None


@dataclass
class Unary(Node):
    op: str = "-"
    operand: "Expr" = None


@dataclass
class Cast(Node):
    expr: "Expr" = None
    type: TypeExpr = None


Expr = Union[IntLit, DecimalLit, BoolLit, CharLit, StringLit, NullLit,
             TimespanLit, CollectionLit, MapLit, TupleLit, Name, SelfExpr,
             Member, Index, Call, Assign, Ternary, Binary, Unary, Cast, Cases]


# --- utilities ------------------------------------------------------------

def structural_eq(a, b) -> bool:
    """Span-insensitive structural equality of AST trees."""
    if type(a) is not type(b):
        return False
    if dataclasses.is_dataclass(a):
        for f in dataclasses.fields(a):
            if f.name in ("span", "origin"):
                continue
            if not structural_eq(getattr(a, f.name), getattr(b, f.name)):
                return False
        return True
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(
            structural_eq(x, y) for x, y in zip(a, b))
    return a == b


def to_dict(node):
    """JSON-ready dump of an AST: node kind, span, children."""
    if dataclasses.is_dataclass(node):
        out = {"kind": node.kind}
        if getattr(node, "span", None) is not None:
            s = node.span
            out["span"] = [s.file, s.line, s.column, s.length]
        for f in dataclasses.fields(node):
            if f.name == "span":
                continue
            out[f.name] = to_dict(getattr(node, f.name))
        return out
    if isinstance(node, (list, tuple)):
        return [to_dict(x) for x in node]
    return node

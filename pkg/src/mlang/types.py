"""Type descriptors, coercion/conversion/unification, timespan arithmetic.

Scalar types are singletons; collection and tuple types are interned by
structure; enums, records and classes are nominal (a fresh id per
definition). Aliases never mint a new type id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

INT_KINDS = ("int8", "int16", "int32", "int64")
UINT_KINDS = ("uint8", "uint16", "uint32", "uint64")
FLOAT_KINDS = ("float", "double")
NUMERIC_KINDS = INT_KINDS + UINT_KINDS + FLOAT_KINDS
SCALAR_KINDS = NUMERIC_KINDS + ("bool", "char", "string", "timespan", "any",
                                "null", "unit")
REF_KINDS = ("object", "actor", "connection")

INT_RANGES = {
    "int8": (-2 ** 7, 2 ** 7 - 1),
    "int16": (-2 ** 15, 2 ** 15 - 1),
    "int32": (-2 ** 31, 2 ** 31 - 1),
    "int64": (-2 ** 63, 2 ** 63 - 1),
    "uint8": (0, 2 ** 8 - 1),
    "uint16": (0, 2 ** 16 - 1),
    "uint32": (0, 2 ** 32 - 1),
    "uint64": (0, 2 ** 64 - 1),
}


class TypeError_(Exception):
    """Conversion or unification failure."""


@dataclass(eq=False)
class Type:
    kind: str
    tid: int = -1
    name: Optional[str] = None  # declared name for nominal types
    elem: Optional["Type"] = None  # array/list/set element
    size: Optional[int] = None  # fixed array size
    key: Optional["Type"] = None  # map key
    value: Optional["Type"] = None  # map value
    elems: tuple = ()  # tuple element types
    fields: tuple = ()  # record/class: ((name, Type), ...)
    constants: tuple = ()  # enum: ((name, code), ...)
    class_kind: Optional[str] = None  # object | actor | connection
    class_info: object = None  # analyzer-side ClassInfo for class types

    def __repr__(self):
        return f"<type {self}>"

    def __str__(self):
        if self.name is not None:
            return self.name
        if self.kind in ("array", "list", "set"):
            if self.elem is None:
                return self.kind
            size = f",{self.size}" if self.size is not None else ""
            return f"{self.kind}{{{self.elem}{size}}}"
        if self.kind == "map":
            return f"map{{{self.key},{self.value}}}"
        if self.kind == "tuple":
            return "tuple{" + ",".join(str(e) for e in self.elems) + "}"
        if self.kind == "record":
            inner = ";".join(f"{n}:{t}" for n, t in self.fields)
            return "record{" + inner + "}"
        return self.kind

    # convenience predicates ------------------------------------------------

    @property
    def is_numeric(self):
        return self.kind in NUMERIC_KINDS

    @property
    def is_integer(self):
        return self.kind in INT_KINDS + UINT_KINDS

    @property
    def is_collection(self):
        return self.kind in ("array", "list", "set", "map")

    @property
    def is_class(self):
        return self.kind == "class"

    @property
    def is_ref(self):
        return self.kind in REF_KINDS or self.kind == "class"


class TypeTable:
    """Registry handing out type ids; structural types are interned."""

    def __init__(self):
        self._next = 1
        self._interned: dict[tuple, Type] = {}
        self.scalars: dict[str, Type] = {}
        for kind in SCALAR_KINDS + REF_KINDS:
            self.scalars[kind] = self._new(Type(kind))

    def _new(self, t: Type) -> Type:
        t.tid = self._next
        self._next += 1
        return t

    def scalar(self, kind: str) -> Type:
        return self.scalars[kind]

    @property
    def any(self):
        return self.scalars["any"]

    def collection(self, ctor, elem=None, size=None, key=None, value=None):
        if ctor == "map":
            key = key or self.any
            value = value or self.any
            sig = ("map", key.tid, value.tid)
            if sig not in self._interned:
                self._interned[sig] = self._new(
                    Type("map", key=key, value=value))
            return self._interned[sig]
        elem = elem or self.any
        sig = (ctor, elem.tid, size)
        if sig not in self._interned:
            self._interned[sig] = self._new(Type(ctor, elem=elem, size=size))
        return self._interned[sig]

    def tuple_(self, elems) -> Type:
        elems = tuple(elems)
        sig = ("tuple",) + tuple(e.tid for e in elems)
        if sig not in self._interned:
            self._interned[sig] = self._new(Type("tuple", elems=elems))
        return self._interned[sig]

    def record(self, name, fields) -> Type:
        return self._new(Type("record", name=name, fields=tuple(fields)))

    def enum(self, name, constants) -> Type:
        codes = [c for _, c in constants]
        if len(set(codes)) != len(codes):
            raise TypeError_(f"enum {name}: duplicate constant codes")
        return self._new(Type("enum", name=name, constants=tuple(constants)))

    def class_(self, name, class_kind, fields=()) -> Type:
        return self._new(Type("class", name=name, class_kind=class_kind,
                              fields=tuple(fields)))


# --- coercion ↪ --------------------------------------------------------------

_WIDENING_EDGES = (
    ("int8", "int16"), ("int16", "int32"), ("int32", "int64"),
    ("uint8", "uint16"), ("uint16", "uint32"), ("uint32", "uint64"),
    ("int32", "float"), ("int64", "double"), ("float", "double"),
    ("char", "string"),
)


def _closure():
    out = {}
    for kind in SCALAR_KINDS:
        out[kind] = {kind}
    changed = True
    while changed:
        changed = False
        for a, b in _WIDENING_EDGES:
            for src, targets in out.items():
                if a in targets and b not in targets:
                    targets.add(b)
                    changed = True
    return out


_SCALAR_CLOSURE = _closure()


def widening_targets(kind: str) -> frozenset:
    return frozenset(_SCALAR_CLOSURE.get(kind, {kind}))


def coercible(src: Type, dst: Type) -> bool:
    """Implicit coercion src ↪ dst (reflexive, transitively closed)."""
    if src.tid == dst.tid:
        return True
    if src.kind == "any" or dst.kind == "any":
        return True
    if src.kind == "null":
        return dst.is_ref
    if src.kind in _SCALAR_CLOSURE and dst.kind in _SCALAR_CLOSURE:
        if src.kind != dst.kind:
            return dst.kind in _SCALAR_CLOSURE[src.kind]
        return src.tid == dst.tid
    if src.is_class and dst.kind in REF_KINDS:
        return src.class_kind == dst.kind
    # collection literals with unresolved (any) element slots
    if src.is_collection and dst.is_collection and src.kind == dst.kind:
        if src.kind == "map":
            return (_elem_coercible(src.key, dst.key)
                    and _elem_coercible(src.value, dst.value))
        if (src.size is not None and dst.size is not None
                and src.size != dst.size):
            return False
        if src.size is None and dst.size is not None:
            return False
        if src.size is not None and dst.size is None:
            return _elem_coercible(src.elem, dst.elem)
        return _elem_coercible(src.elem, dst.elem)
    # tuple and record are interchangeable when element-wise coercible
    if src.kind == "tuple" and dst.kind == "record":
        return _positional_coercible(src.elems,
                                     tuple(t for _, t in dst.fields))
    if src.kind == "record" and dst.kind == "tuple":
        return _positional_coercible(tuple(t for _, t in src.fields),
                                     dst.elems)
    if src.kind == "tuple" and dst.kind == "tuple":
        return _positional_coercible(src.elems, dst.elems)
    return False


def _elem_coercible(src: Type, dst: Type) -> bool:
    # element slots unify only through 'any' wildcards, otherwise invariant
    if src.kind == "any" or dst.kind == "any":
        return True
    if src.is_collection or dst.is_collection:
        return (src.kind == dst.kind and src.is_collection
                and coercible(src, dst) and coercible(dst, src))
    return src.tid == dst.tid or coercible(src, dst)


def _positional_coercible(src_elems, dst_elems) -> bool:
    if len(src_elems) != len(dst_elems):
        return False
    return all(coercible(s, d) for s, d in zip(src_elems, dst_elems))


def unify(table: TypeTable, a: Type, b: Type) -> Type:
    """Least common supertype along the coercion chains. Raises TypeError_."""
    if a.kind == "any":
        return b
    if b.kind == "any":
        return a
    if a.tid == b.tid:
        return a
    if a.kind in _SCALAR_CLOSURE and b.kind in _SCALAR_CLOSURE:
        common = _SCALAR_CLOSURE[a.kind] & _SCALAR_CLOSURE[b.kind]
        for kind in common:
            # the least supertype is the one that still reaches all others
            if common <= _SCALAR_CLOSURE[kind]:
                return table.scalar(kind)
        raise TypeError_(f"no common supertype of {a} and {b}")
    if coercible(a, b):
        return b
    if coercible(b, a):
        return a
    if a.is_class and b.is_class and a.class_kind == b.class_kind:
        return table.scalar(a.class_kind or "object")
    raise TypeError_(f"no common supertype of {a} and {b}")


# --- conversion ⇒ -------------------------------------------------------------

class ConversionError(TypeError_):
    pass


def convertible(src: Type, dst: Type) -> bool:
    """S ⤳ T: implicitly or explicitly convertible."""
    if coercible(src, dst):
        return True
    if src.is_numeric and dst.is_numeric:
        return True
    if src.kind == "enum" and dst.is_integer:
        return True
    if src.is_integer and dst.kind == "enum":
        return True
    if src.kind == "timespan" and dst.is_numeric:
        return True
    if src.is_numeric and dst.kind == "timespan":
        return True
    return False


def convert(value, src: Type, dst: Type, mu_ms: Fraction = None):
    """Run-time conversion of `value` from src to dst.

    Widening preserves values; numeric narrowing truncates toward zero and
    reports out-of-range values as ConversionError instead of wrapping.
    `mu_ms` is the active SIM_TIME_UNIT in milliseconds, needed for timespan
    conversions.
    """
    if src.tid == dst.tid or dst.kind == "any":
        return value
    if src.kind == "enum" and dst.is_integer:
        code = value.code
        return _check_int_range(code, dst)
    if src.is_integer and dst.kind == "enum":
        from .runtime import EnumValue
        for cname, ccode in dst.constants:
            if ccode == value:
                return EnumValue(dst, cname, ccode)
        raise ConversionError(
            f"no constant of enum {dst} has code {value}")
    if src.kind == "timespan" and dst.is_numeric:
        units = value.to_units(mu_ms)
        if dst.kind in FLOAT_KINDS:
            return float(units)
        return _check_int_range(int(units), dst)
    if src.is_numeric and dst.kind == "timespan":
        from .runtime import TimespanValue
        frac = Fraction(value) if not isinstance(value, float) \
            else Fraction(str(value))
        return TimespanValue.from_ms(frac * mu_ms)
    if src.is_numeric and dst.is_numeric:
        if dst.kind == "double":
            return float(value)
        if dst.kind == "float":
            return float(value)
        ivalue = int(value)  # truncates toward zero
        return _check_int_range(ivalue, dst)
    if src.kind == "char" and dst.kind == "string":
        return value
    if coercible(src, dst):
        return value
    raise ConversionError(f"cannot convert {src} to {dst}")


def _check_int_range(value: int, dst: Type):
    lo, hi = INT_RANGES[dst.kind]
    if not lo <= value <= hi:
        raise ConversionError(
            f"value {value} out of range for {dst.kind}")
    return value


# --- timespan arithmetic ------------------------------------------------------

MS_PER_UNIT = {
    "ns": Fraction(1, 1_000_000),
    "us": Fraction(1, 1_000),
    "ms": Fraction(1),
    "s": Fraction(1_000),
    "m": Fraction(60_000),
    "h": Fraction(3_600_000),
    "d": Fraction(86_400_000),
}


def parse_timespan(components) -> list[tuple[Fraction, str]]:
    """Exact decimal magnitudes from (text, unit) pairs."""
    out = []
    for text, unit in components:
        if unit not in MS_PER_UNIT:
            raise TypeError_(f"unknown time unit {unit!r}")
        out.append((Fraction(text), unit))
    return out


def timespan_ms(components) -> Fraction:
    """Milliseconds are the common base for all timespan conversions."""
    total = Fraction(0)
    for mag, unit in components:
        mag = mag if isinstance(mag, Fraction) else Fraction(mag)
        total += mag * MS_PER_UNIT[unit]
    return total


def timespan_to_units(components, unit_components) -> Fraction:
    """⟦d⟧ in SIM_TIME_UNIT units: exact, via the millisecond base."""
    mu = timespan_ms(unit_components)
    if mu <= 0:
        raise TypeError_("SIM_TIME_UNIT must be a positive timespan")
    return timespan_ms(components) / mu


_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
}


def compare_timespan(d1, d2, op: str) -> bool:
    """d1 ⋈ d2 compares canonical magnitudes (unit choice cancels)."""
    return _CMP[op](timespan_ms(d1), timespan_ms(d2))


def fraction_to_decimal(value: Fraction) -> str:
    """Exact decimal rendering of a fraction whose denominator is 2^a·5^b."""
    num, den = value.numerator, value.denominator
    if den == 1:
        return str(num)
    twos = fives = 0
    d = den
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        # non-terminating decimal: fall back to a 30-digit approximation
        return f"{float(value):.30g}"
    shift = max(twos, fives)
    scaled = num * 10 ** shift // den
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled)).rjust(shift + 1, "0")
    whole, frac = digits[:-shift], digits[-shift:]
    frac = frac.rstrip("0")
    return f"{sign}{whole}.{frac}" if frac else f"{sign}{whole}"

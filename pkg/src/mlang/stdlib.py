"""Standard prelude (mcore.m) and host implementations of external functions.

The prelude declares the int/uint/real aliases and every external function
signature the corpus models rely on. Models receive it implicitly unless the
implicit-prelude flag is off; they may also `include "mcore.m"` explicitly
(inclusion is idempotent).
"""

from __future__ import annotations

from fractions import Fraction

PRELUDE_SOURCE = """\
//mcore.m - standard prelude for M models
def int int64;
def uint uint64;
def real double;

external function prev(s:#T):#T;
external function now():real;
external function println(s:#T);
external function print(s:#T);
external function toString(a:#T):string;
external function pow(x:real,y:real):real;
external function abs(x:#T):#T;
external function min(a:#T,b:#T):#T;
external function max(a:#T,b:#T):#T;
external function length(a:#T):int;
external function keys(a:#C):#R;
external function values(a:#C):#R;
external function pairs(a:#C):#R;
external function entries(a:#C):#R;
external function add(a:#C,e:#E):#C;
external function push_back(a:#C,e:#E):#C;
external function removeAt(a:#C,i:int):#C;
external function reverse(a:#C):#C;
external function contains(a:#C,e:#E):bool;
external function random():real;
external function terminate();
external function string.format(f:string):string;
external function string.format(f:string,a1:#A):string;
external function string.format(f:string,a1:#A,a2:#B):string;
external function string.format(f:string,a1:#A,a2:#B,a3:#C):string;
"""


class ExternalCallError(Exception):
    pass


def load_prelude():
    """Parse the embedded prelude into a Program."""
    from .syntax.parser import parse_source
    program, errors = parse_source(PRELUDE_SOURCE, "mcore.m")
    assert not errors, f"prelude must be clean: {errors}"
    return program


def write_prelude(path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(PRELUDE_SOURCE)


# --- value formatting ------------------------------------------------------

def m_to_string(value) -> str:
    """Render an M runtime value the way the language prints it."""
    from .runtime import ActorInstance, EnumValue, TimespanValue, Unit
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        text = repr(value)
        return text[:-2] if text.endswith(".0") else text
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return value
    if isinstance(value, TimespanValue):
        return value.display()
    if isinstance(value, EnumValue):
        return value.name
    if isinstance(value, ActorInstance):
        return value.display_name
    if isinstance(value, tuple):
        return "(" + ",".join(m_to_string(v) for v in value) + ")"
    if isinstance(value, list):
        return "(" + ",".join(m_to_string(v) for v in value) + ")"
    if isinstance(value, dict):
        inner = ",".join(f"{m_to_string(k)}:{m_to_string(v)}"
                         for k, v in value.items())
        return "{" + inner + "}"
    if isinstance(value, Unit):
        return ""
    return str(value)


def _format(fmt: str, *args) -> str:
    """printf-style %s/%d/%f formatting."""
    out, ai, i = [], 0, 0
    while i < len(fmt):
        ch = fmt[i]
        if ch == "%" and i + 1 < len(fmt):
            spec = fmt[i + 1]
            if spec == "%":
                out.append("%")
                i += 2
                continue
            if spec in "sdf":
                if ai >= len(args):
                    raise ExternalCallError(
                        f"string.format: missing argument for %{spec}")
                arg = args[ai]
                ai += 1
                if spec == "s":
                    out.append(m_to_string(arg))
                elif spec == "d":
                    out.append(str(int(arg)))
                else:
                    out.append(f"{float(arg):f}")
                i += 2
                continue
        out.append(ch)
        i += 1
    return "".join(out)


# --- implementations -------------------------------------------------------
# Each implementation takes a call context (engine hooks) plus the argument
# values. Pure functions ignore the context.

def _impl_println(ctx, s):
    ctx.console(m_to_string(s) + "\n")
    from .runtime import UNIT
    return UNIT


def _impl_print(ctx, s):
    ctx.console(m_to_string(s))
    from .runtime import UNIT
    return UNIT


def _impl_now(ctx):
    return float(ctx.now_units())


def _impl_pow(ctx, x, y):
    return float(x) ** float(y)


def _impl_abs(ctx, x):
    from .runtime import TimespanValue
    if isinstance(x, TimespanValue):
        return x if x.ms >= 0 else TimespanValue.from_ms(-x.ms)
    return abs(x)


def _impl_min(ctx, a, b):
    return min(a, b)


def _impl_max(ctx, a, b):
    return max(a, b)


def _impl_length(ctx, a):
    if isinstance(a, (list, tuple, dict, str)):
        return len(a)
    raise ExternalCallError(f"length: not a collection: {m_to_string(a)}")


def _impl_keys(ctx, a):
    if isinstance(a, dict):
        return list(a.keys())
    if isinstance(a, list):
        return list(range(len(a)))
    raise ExternalCallError("keys: expects a collection")


def _impl_values(ctx, a):
    if isinstance(a, dict):
        return list(a.values())
    if isinstance(a, list):
        return list(a)
    raise ExternalCallError("values: expects a collection")


def _impl_pairs(ctx, a):
    if isinstance(a, dict):
        return [(k, v) for k, v in a.items()]
    raise ExternalCallError("pairs: expects a map")


def _impl_add(ctx, a, e):
    if isinstance(a, list):
        a.append(e)
        return a
    raise ExternalCallError("add: expects an array, list or set")


def _impl_push_back(ctx, a, e):
    if isinstance(a, list):
        a.append(e)
        return a
    raise ExternalCallError("push_back: expects an array or list")


def _impl_remove_at(ctx, a, i):
    if isinstance(a, list):
        if not 0 <= i < len(a):
            raise ExternalCallError(f"removeAt: index {i} out of range")
        del a[i]
        return a
    raise ExternalCallError("removeAt: expects an array or list")


def _impl_reverse(ctx, a):
    if isinstance(a, list):
        return list(reversed(a))
    raise ExternalCallError("reverse: expects an array or list")


def _impl_contains(ctx, a, e):
    if isinstance(a, (list, dict)):
        return e in a
    raise ExternalCallError("contains: expects a collection")


def _impl_to_string(ctx, a):
    return m_to_string(a)


def _impl_random(ctx):
    return ctx.rng.random()


def _impl_terminate(ctx):
    ctx.terminate()
    from .runtime import UNIT
    return UNIT


def _impl_format(ctx, fmt, *args):
    return _format(fmt, *args)


# prev is a special form evaluated against the reacting actor's state series;
# the engine intercepts it before the registry is consulted.
IMPLEMENTATIONS = {
    "println": _impl_println,
    "print": _impl_print,
    "now": _impl_now,
    "pow": _impl_pow,
    "abs": _impl_abs,
    "min": _impl_min,
    "max": _impl_max,
    "length": _impl_length,
    "keys": _impl_keys,
    "values": _impl_values,
    "pairs": _impl_pairs,
    "entries": _impl_pairs,
    "add": _impl_add,
    "push_back": _impl_push_back,
    "removeAt": _impl_remove_at,
    "reverse": _impl_reverse,
    "contains": _impl_contains,
    "toString": _impl_to_string,
    "random": _impl_random,
    "terminate": _impl_terminate,
    "string.format": _impl_format,
}


def list_externals() -> list[str]:
    """Sorted external signatures, for --list-externals."""
    lines = [ln.strip() for ln in PRELUDE_SOURCE.splitlines()
             if ln.strip().startswith("external function")]
    return sorted(lines)

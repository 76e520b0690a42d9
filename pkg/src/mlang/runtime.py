"""Discrete-event execution engine for analyzed M models.

The system evolves as ⟨clock, actors, queue⟩: each iteration extracts the bag
of minimal-timestamp messages, tie-breaks to at most one message per actor
(initialize > external > conditional > periodic, randomly among equals),
advances the logical clock (always by at least ε), and runs the selected
reactions run-to-completion. State variables are recorded as time series so
prev() and edge-triggered conditions work; identical (model, seed, limits)
runs produce byte-identical traces.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Optional

from . import stdlib
from . import types as ty
from .semantics import Analysis, ClassInfo, FunctionInfo, Response
from .syntax import ast

TRACE_VERSION = "1"

KIND_PRIORITY = {"initialize": 0, "external": 1, "conditional": 2,
                 "periodic": 3}


class MRuntimeError(Exception):
    def __init__(self, message, span=None, actor=None, time=None):
        super().__init__(message)
        self.message = message
        self.span = span
        self.actor = actor
        self.time = time

    def __str__(self):
        where = f" at {self.span}" if self.span else ""
        who = f" in {self.actor}" if self.actor else ""
        when = "" if self.time is None else f" (t={self.time})"
        return f"{self.message}{where}{who}{when}"


class Unit:
    """Value of expressions that produce nothing (println, terminate)."""

    def __repr__(self):
        return "<unit>"


UNIT = Unit()
_MISSING = object()


@dataclass(frozen=True, eq=False)
class EnumValue:
    type: ty.Type
    name: str
    code: int

    def __eq__(self, other):
        if not isinstance(other, EnumValue):
            return NotImplemented
        return self.type.tid == other.type.tid and self.code == other.code

    def __hash__(self):
        return hash((self.type.tid, self.code))


class TimespanValue:
    """Exact timespan: millisecond magnitude plus components for printing."""

    __slots__ = ("components", "ms")

    def __init__(self, components, ms):
        self.components = components
        self.ms = ms

    @classmethod
    def from_components(cls, components):
        return cls(list(components), ty.timespan_ms(components))

    @classmethod
    def from_ms(cls, ms: Fraction):
        return cls([(ms, "ms")], ms)

    @classmethod
    def concat(cls, a: "TimespanValue", b: "TimespanValue"):
        return cls(list(a.components) + list(b.components), a.ms + b.ms)

    def to_units(self, mu_ms: Fraction) -> Fraction:
        return self.ms / mu_ms

    def display(self) -> str:
        return "".join(f"{_plain_num(m)}{u}" for m, u in self.components)

    def __eq__(self, other):
        return isinstance(other, TimespanValue) and self.ms == other.ms

    def __hash__(self):
        return hash(self.ms)

    def __repr__(self):
        return f"TimespanValue({self.display()})"


def _plain_num(value: Fraction) -> str:
    return ty.fraction_to_decimal(Fraction(value))


@dataclass
class Message:
    sender: Optional["ActorInstance"]
    receiver: "ActorInstance"
    ev: str
    t_assume: Fraction
    theta: dict
    t_send: Fraction
    kind: str  # initialize | external | conditional | periodic
    seq: int
    origin: str = "user"  # user | scan | reschedule | init
    cancelled: bool = False

    @property
    def t_actual(self):
        return self.t_assume  # pending future semantic rules


class GlobalQueue:
    """Message server ordered by (t_assume, arrival sequence)."""

    def __init__(self):
        self._heap = []
        self._live = 0

    def __len__(self):
        return self._live

    def push(self, msg: Message):
        heapq.heappush(self._heap, (msg.t_assume, msg.seq, msg))
        self._live += 1

    def min_time(self):
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def pop_time_bag(self, t) -> list[Message]:
        bag = []
        while self._heap and self._heap[0][0] == t:
            _, _, msg = heapq.heappop(self._heap)
            if not msg.cancelled:
                bag.append(msg)
                self._live -= 1
        return bag

    def push_back(self, msgs):
        for m in msgs:
            self.push(m)

    def cancel_for(self, receiver, names=None) -> int:
        removed = 0
        for _, _, msg in self._heap:
            if msg.cancelled or msg.receiver is not receiver:
                continue
            if names is None or msg.ev in names:
                msg.cancelled = True
                removed += 1
        self._live -= removed
        return removed

    def has_pending(self, receiver, ev, origin=None) -> bool:
        for _, _, msg in self._heap:
            if msg.cancelled or msg.receiver is not receiver:
                continue
            if msg.ev == ev and (origin is None or msg.origin == origin):
                return True
        return False

    def snapshot(self):
        return [m for _, _, m in sorted(self._heap) if not m.cancelled]


class SimClock:
    """Strictly increasing timestamp sequence, starting at -1."""

    def __init__(self):
        self.stamps = [Fraction(-1)]

    def now(self) -> Fraction:
        return self.stamps[-1]

    def advance(self, t_next: Fraction, eps: Fraction) -> Fraction:
        new = t_next if t_next > self.now() else self.now() + eps
        self.stamps.append(new)
        return new

    def peek_next(self, t_next: Fraction, eps: Fraction) -> Fraction:
        return t_next if t_next > self.now() else self.now() + eps


def tie_break(bag: list[Message], rng: random.Random):
    """At most one message per receiver: initialize > external > conditional
    > periodic, uniform random among equal kinds.

    Receivers are processed in ascending actor-id order and candidates kept
    in arrival order, so the rng draw sequence is canonical. Returns
    (selected sorted by receiver id, unselected).
    """
    by_receiver: dict[int, list[Message]] = {}
    for msg in bag:
        by_receiver.setdefault(msg.receiver.aid, []).append(msg)
    selected, rest = [], []
    for aid in sorted(by_receiver):
        msgs = sorted(by_receiver[aid], key=lambda m: m.seq)
        best = min(KIND_PRIORITY[m.kind] for m in msgs)
        candidates = [m for m in msgs if KIND_PRIORITY[m.kind] == best]
        pick = candidates[0] if len(candidates) == 1 \
            else candidates[rng.randrange(len(candidates))]
        selected.append(pick)
        rest.extend(m for m in msgs if m is not pick)
    return selected, rest


class StateStore:
    """Per-actor storage: time series for state vars, slots for the rest."""

    def __init__(self, truncate=False):
        self.series: dict[str, list] = {}
        self.slots: dict[str, object] = {}
        self.truncate = truncate

    def init_state(self, name, t, value):
        self.series[name] = [(t, value)]

    def write_state(self, name, t, value):
        entries = self.series.setdefault(name, [])
        if entries and entries[-1][0] == t:
            entries[-1] = (t, value)  # same-instant overwrite, last wins
        else:
            entries.append((t, value))
        if self.truncate and len(entries) > 2:
            del entries[:-2]

    def read_state(self, name):
        entries = self.series.get(name)
        if not entries:
            raise MRuntimeError(f"state variable {name!r} is unbound")
        return entries[-1][1]

    def prev(self, name, t):
        entries = self.series.get(name)
        if not entries:
            raise MRuntimeError(f"state variable {name!r} is unbound")
        for et, value in reversed(entries):
            if et < t:
                return value
        raise MRuntimeError(
            f"prev({name}): no value recorded before t={t}")


class ActorInstance:
    def __init__(self, aid, class_info: ClassInfo, truncate=False):
        self.aid = aid
        self.class_info = class_info
        self.display_name = f"{class_info.name}#{aid}"
        self.store = StateStore(truncate)

    def __repr__(self):
        return self.display_name


@dataclass
class RunConfig:
    seed: int = 0
    epsilon: Fraction = Fraction(1, 10 ** 9)
    max_time_units: Optional[Fraction] = None
    max_events: int = 1_000_000
    truncate_history: bool = False
    check_types: bool = False
    console: object = None  # callable(text) or None to collect


@dataclass
class RunResult:
    trace: list
    stop_reason: str  # queue-empty | max-time | max-events | terminate-called | runtime-error
    events_dispatched: int
    final_time: Fraction
    console: str = ""
    error: Optional[MRuntimeError] = None

    def trace_lines(self):
        return [json.dumps(e, separators=(",", ":"), ensure_ascii=False)
                for e in self.trace]


class _CallContext:
    """Hooks handed to external-function implementations."""

    def __init__(self, engine, actor):
        self.engine = engine
        self.actor = actor
        self.rng = engine.rng

    def console(self, text):
        self.engine.emit_console(text)

    def now_units(self):
        return self.engine.clock.now()

    def terminate(self):
        self.engine.request_terminate()


class _ReturnSignal(Exception):
    def __init__(self, value):
        self.value = value


class _BreakSignal(Exception):
    pass


class Frame:
    __slots__ = ("parent", "vars")

    def __init__(self, parent=None):
        self.parent = parent
        self.vars: dict[str, list] = {}  # name -> [Type, value]

    def define(self, name, type_, value):
        self.vars[name] = [type_, value]

    def find(self, name):
        frame = self
        while frame is not None:
            slot = frame.vars.get(name)
            if slot is not None:
                return slot
            frame = frame.parent
        return None


class MessageView:
    """The implicit read-only `message` record inside a do body."""

    def __init__(self, msg: Message, mu_ms):
        self._msg = msg
        self._mu_ms = mu_ms

    def get(self, name):
        if name == "sender":
            return self._msg.sender
        if name == "t_send":
            return float(self._msg.t_send)
        if name == "t_assume":
            return float(self._msg.t_assume)
        if name in self._msg.theta:
            return self._msg.theta[name]
        raise MRuntimeError(f"message has no field {name!r}")


class Engine:
    def __init__(self, analysis: Analysis, config: RunConfig = None):
        if not analysis.ok:
            raise ValueError("cannot execute a model with semantic errors")
        self.a = analysis
        self.config = config or RunConfig()
        self.rng = random.Random(self.config.seed)
        self.clock = SimClock()
        self.queue = GlobalQueue()
        self.actors: list[ActorInstance] = []
        self.trace: list[dict] = []
        self._console_parts: list[str] = []
        self._seq = 0
        self._terminated = False
        self.events_dispatched = 0
        self._reaction_writes = None  # var -> old value, during a reaction
        self._error: Optional[MRuntimeError] = None
        self._main_frame = Frame()
        self._setup_done = False

    # -- bookkeeping -------------------------------------------------------

    def next_seq(self):
        self._seq += 1
        return self._seq

    def emit_console(self, text):
        self._console_parts.append(text)
        if self.config.console is not None:
            self.config.console(text)

    def request_terminate(self):
        self._terminated = True

    def now(self) -> Fraction:
        return self.clock.now()

    def _t(self, value: Fraction) -> str:
        return ty.fraction_to_decimal(value)

    def emit(self, event: dict):
        self.trace.append(event)

    # -- setup -------------------------------------------------------------------

    def initialize_system(self):
        """Run main (two-phase instantiation), then seed the queue."""
        self.emit({
            "trace": "m-trace", "version": TRACE_VERSION,
            "model": getattr(self.a.program, "source_hash", ""),
            "seed": self.config.seed,
            "epsilon": self._t(self.config.epsilon),
            "sim_time_unit": "".join(
                f"{_plain_num(m)}{u}" for m, u in self.a.mu_components),
            "sim_time_unit_ms": self._t(self.a.mu_ms),
        })
        main = self.a.main
        if main is not None:
            self._run_main(main)
        for actor in self.actors:
            self.queue.push(Message(actor, actor, "initialize", Fraction(0),
                                    {}, self.clock.now(), "initialize",
                                    self.next_seq(), origin="init"))
        for actor in self.actors:
            for resp in actor.class_info.responses.values():
                if resp.trigger == "periodic" and resp.interval_units:
                    self.queue.push(Message(
                        actor, actor, resp.name,
                        Fraction(0) + resp.interval_units, {},
                        self.clock.now(), "periodic", self.next_seq(),
                        origin="reschedule"))
        self._setup_done = True

    def _run_main(self, main: ast.MainBlock):
        frame = self._main_frame
        ev = Evaluator(self, None)
        pending = []
        for stmt in main.block.statements:
            if self._is_actor_decl(stmt):
                info = self.a.classes[stmt.value.callee.id]
                instance = self.allocate_actor(info)
                declared = self.a.decl_types.get(id(stmt), None)
                frame.define(stmt.name, declared, instance)
                pending.append((stmt, instance))
        for stmt in main.block.statements:
            match = next((p for p in pending if p[0] is stmt), None)
            if match is not None:
                _, instance = match
                named = [(n, ev.eval(v, frame)) for n, v in
                         stmt.value.named_args]
                self.init_actor(instance, named)
            else:
                ev.exec_statement(stmt, frame)

    def _is_actor_decl(self, stmt):
        return (isinstance(stmt, ast.VarDecl)
                and isinstance(stmt.value, ast.Call)
                and isinstance(stmt.value.callee, ast.Name)
                and stmt.value.callee.id in self.a.classes)

    def allocate_actor(self, info: ClassInfo) -> ActorInstance:
        instance = ActorInstance(len(self.actors) + 1, info,
                                 self.config.truncate_history)
        self.actors.append(instance)
        return instance

    def init_actor(self, instance: ActorInstance, named_args,
                   at_runtime=False):
        """Record constructor field values (state series start at t=-1)."""
        info = instance.class_info
        ev = Evaluator(self, None)
        const_frame = Frame()
        for cname, (ctype, cvalue) in info.consts.items():
            const_frame.define(cname, ctype, cvalue)
        birth = self.clock.now() if at_runtime else Fraction(-1)
        values = {}
        for f in info.fields.values():
            if f.default is not None:
                values[f.name] = self._convert(
                    ev.eval(f.default, Frame(const_frame)), f.type,
                    f.node.span)
            elif f.type.is_collection:
                values[f.name] = _empty_collection(f.type)
            else:
                values[f.name] = _MISSING
        for name, value in named_args:
            f = info.fields.get(name)
            if f is None:
                raise MRuntimeError(
                    f"{info.name} has no field {name!r}", actor=instance)
            values[name] = self._convert(value, f.type, None)
        for f in info.fields.values():
            value = values[f.name]
            if f.is_state:
                instance.store.init_state(f.name, birth, value)
            elif value is not _MISSING:
                instance.store.slots[f.name] = value
        if at_runtime:
            self.queue.push(Message(instance, instance, "initialize",
                                    self.clock.now(), {}, self.clock.now(),
                                    "initialize", self.next_seq(),
                                    origin="init"))
            for resp in info.responses.values():
                if resp.trigger == "periodic" and resp.interval_units:
                    self.queue.push(Message(
                        instance, instance, resp.name,
                        self.clock.now() + resp.interval_units, {},
                        self.clock.now(), "periodic", self.next_seq(),
                        origin="reschedule"))
        return instance

    def _convert(self, value, target: ty.Type, span):
        if target is None or target.kind == "any" or value is _MISSING:
            return value
        src = _value_type(self.a, value)
        if src is None:
            return value
        try:
            return ty.convert(value, src, target, self.a.mu_ms)
        except ty.ConversionError as exc:
            raise MRuntimeError(str(exc), span=span) from None

    # -- the loop ------------------------------------------------------------------

    def run(self) -> RunResult:
        stop = "queue-empty"
        try:
            while True:
                if self._terminated:
                    stop = "terminate-called"
                    break
                if len(self.queue) == 0:
                    stop = "queue-empty"
                    break
                t_next = self.queue.min_time()
                candidate_now = self.clock.peek_next(t_next,
                                                     self.config.epsilon)
                if self.config.max_time_units is not None \
                        and candidate_now > self.config.max_time_units:
                    stop = "max-time"
                    break
                if self.events_dispatched >= self.config.max_events:
                    stop = "max-events"
                    break
                self.step_inner(t_next)
        except MRuntimeError as exc:
            self._error = exc
            stop = "runtime-error"
        return RunResult(self.trace, stop, self.events_dispatched,
                         self.clock.now(), "".join(self._console_parts),
                         self._error)

    def step_inner(self, t_next):
        bag = self.queue.pop_time_bag(t_next)
        selected, rest = tie_break(bag, self.rng)
        self.queue.push_back(rest)
        self.clock.advance(t_next, self.config.epsilon)
        for msg in selected:
            self.execute_response(msg.receiver, msg)

    def step(self):
        """One loop iteration; returns False when the system is terminal."""
        if self._terminated or len(self.queue) == 0:
            return False
        self.step_inner(self.queue.min_time())
        return True

    # -- reactions --------------------------------------------------------------------

    def execute_response(self, actor: ActorInstance, msg: Message):
        self.events_dispatched += 1
        info = actor.class_info
        resp = info.responses.get(msg.ev)
        now = self.clock.now()
        if resp is None and msg.ev != "initialize":
            raise MRuntimeError(
                f"unknown event {msg.ev!r} for class {info.name}",
                actor=actor, time=self._t(now))
        writes: dict[str, object] = {}
        self._reaction_writes = (actor, writes)
        try:
            if resp is not None:
                frame = Frame()
                formals = resp.params
                if msg.origin != "init" and msg.theta is not None:
                    for (pname, ptype) in formals:
                        if pname not in msg.theta:
                            raise MRuntimeError(
                                f"event {msg.ev}: missing argument {pname!r}",
                                actor=actor, time=self._t(now))
                        frame.define(pname, ptype, self._convert(
                            msg.theta[pname], ptype, None))
                frame.define("message", None, MessageView(msg, self.a.mu_ms))
                evaluator = Evaluator(self, actor)
                try:
                    evaluator.exec_block(resp.body, Frame(frame))
                except _ReturnSignal:
                    pass
        finally:
            self._reaction_writes = None
        deltas = []
        for var in writes:
            old = writes[var]
            f = info.fields.get(var)
            if f is not None and f.is_state:
                new = actor.store.read_state(var)
            else:
                new = actor.store.slots.get(var)
            deltas.append({"var": var,
                           "old": to_jsonable(old),
                           "new": to_jsonable(new)})
        self.emit({
            "t": self._t(now), "actor": actor.display_name, "ev": msg.ev,
            "kind": msg.kind, "action": "dispatch",
            "payload": {k: to_jsonable(v) for k, v in msg.theta.items()},
            "deltas": deltas,
        })
        # post-reaction conditional scan
        self.scan_conditionals(actor)
        # periodic rescheduling
        if msg.kind == "periodic" and resp is not None \
                and resp.interval_units:
            self.send_message(actor, actor, resp.name, {}, Fraction(0) +
                              resp.interval_units, origin="reschedule")

    def scan_conditionals(self, actor: ActorInstance):
        now = self.clock.now()
        evaluator = Evaluator(self, actor)
        for resp in actor.class_info.responses.values():
            if resp.trigger != "conditional":
                continue
            if self.queue.has_pending(actor, resp.name, origin="scan"):
                continue  # an undispatched scan message already waits
            value = evaluator.eval(resp.condition, Frame())
            if value is True:
                self.send_message(actor, actor, resp.name, {},
                                  self.config.epsilon, origin="scan")

    def send_message(self, sender, receiver, ev, theta, delta_units,
                     origin="user", sender_override=None):
        now = self.clock.now()
        target = receiver.class_info.responses.get(ev)
        if origin == "scan":
            kind = "conditional"
        elif origin == "reschedule":
            kind = "periodic"
        elif target is not None and target.trigger == "periodic":
            kind = "periodic"
        elif target is not None and target.trigger == "conditional":
            kind = "conditional"
        else:
            kind = "external"
        msg = Message(sender_override or sender, receiver, ev, now +
                      delta_units, theta, now, kind, self.next_seq(), origin)
        self.queue.push(msg)
        shown_sender = sender if origin in ("scan", "reschedule") \
            else (sender_override or sender)
        self.emit({
            "t": self._t(now),
            "actor": (shown_sender or receiver).display_name,
            "ev": ev, "kind": kind, "action": "send",
            "payload": {
                "to": receiver.display_name,
                "t_assume": self._t(msg.t_assume),
                "args": {k: to_jsonable(v) for k, v in theta.items()},
            },
        })
        return msg

    def record_write(self, actor, name, old_value):
        if self._reaction_writes is None:
            return
        owner, writes = self._reaction_writes
        if owner is actor and name not in writes:
            writes[name] = old_value


def _empty_collection(t: ty.Type):
    if t.kind == "map":
        return {}
    return []


def _value_type(analysis: Analysis, value):
    if isinstance(value, bool):
        return analysis.table.scalar("bool")
    if isinstance(value, int):
        return analysis.table.scalar("int64")
    if isinstance(value, float):
        return analysis.table.scalar("double")
    if isinstance(value, str):
        return analysis.table.scalar("string")
    if isinstance(value, TimespanValue):
        return analysis.table.scalar("timespan")
    if isinstance(value, EnumValue):
        return value.type
    if isinstance(value, ActorInstance):
        return value.class_info.type
    if value is None:
        return analysis.table.scalar("null")
    return None


def to_jsonable(value):
    if isinstance(value, (bool, int, float, str)) or value is None:
        return value
    if isinstance(value, TimespanValue):
        return value.display()
    if isinstance(value, EnumValue):
        return value.name
    if isinstance(value, ActorInstance):
        return value.display_name
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {stdlib.m_to_string(k): to_jsonable(v)
                for k, v in value.items()}
    if isinstance(value, Unit):
        return None
    if value is _MISSING:
        return None
    return stdlib.m_to_string(value)


class Evaluator:
    """Tree-walking evaluator for statements and expressions."""

    def __init__(self, engine: Engine, actor: Optional[ActorInstance]):
        self.engine = engine
        self.a = engine.a
        self.actor = actor
        self.ctx = _CallContext(engine, actor)

    # -- statements -----------------------------------------------------------

    def exec_block(self, block: ast.Block, frame: Frame):
        for stmt in block.statements:
            self.exec_statement(stmt, frame)

    def exec_statement(self, stmt, frame: Frame):
        if isinstance(stmt, ast.VarDecl):
            declared = self.a.decl_types.get(id(stmt))
            if stmt.value is not None:
                value = self._convert(self.eval(stmt.value, frame), declared,
                                      stmt.span)
            elif declared is not None and declared.is_collection:
                value = _empty_collection(declared)
            else:
                value = _MISSING
            frame.define(stmt.name, declared, value)
            return
        if isinstance(stmt, ast.ConstDecl):
            declared = self.a.decl_types.get(id(stmt))
            value = self._convert(self.eval(stmt.value, frame), declared,
                                  stmt.span)
            frame.define(stmt.name, declared, value)
            return
        if isinstance(stmt, ast.ExprStmt):
            self.eval(stmt.expr, frame)
            return
        if isinstance(stmt, ast.Return):
            value = UNIT if stmt.value is None else self.eval(stmt.value,
                                                              frame)
            raise _ReturnSignal(value)
        if isinstance(stmt, ast.Break):
            raise _BreakSignal()
        if isinstance(stmt, ast.If):
            cond = self._truthy(self.eval(stmt.cond, frame), stmt.span)
            if cond:
                self.exec_block(stmt.then, Frame(frame))
            elif stmt.orelse is not None:
                self.exec_block(stmt.orelse, Frame(frame))
            return
        if isinstance(stmt, ast.Cases):
            self.eval_cases(stmt, frame, as_expr=False)
            return
        if isinstance(stmt, ast.While):
            while self._truthy(self.eval(stmt.cond, frame), stmt.span):
                try:
                    self.exec_block(stmt.body, Frame(frame))
                except _BreakSignal:
                    break
            return
        if isinstance(stmt, ast.DoWhile):
            while True:
                try:
                    self.exec_block(stmt.body, Frame(frame))
                except _BreakSignal:
                    break
                if not self._truthy(self.eval(stmt.cond, frame), stmt.span):
                    break
            return
        if isinstance(stmt, ast.Foreach):
            self.exec_foreach(stmt, frame)
            return
        if isinstance(stmt, ast.Tell):
            self.eval_tell(stmt, frame)
            return
        if isinstance(stmt, ast.Cancel):
            self.eval_cancel(stmt)
            return
        raise MRuntimeError(f"cannot execute {type(stmt).__name__}",
                            span=stmt.span, actor=self.actor)

    def exec_foreach(self, stmt: ast.Foreach, frame: Frame):
        source = self.eval(stmt.source, frame)
        kind = stmt.source_kind
        if kind == "keys":
            items = [(i,) for i in stdlib._impl_keys(self.ctx, source)]
        elif kind == "values":
            items = [(v,) for v in stdlib._impl_values(self.ctx, source)]
        else:
            items = stdlib._impl_pairs(self.ctx, source)
        names = [n for n, _ in stmt.vars]
        for item in items:
            inner = Frame(frame)
            for name, value in zip(names, item):
                inner.define(name, None, value)
            try:
                self.exec_block(stmt.body, inner)
            except _BreakSignal:
                break

    def eval_tell(self, stmt: ast.Tell, frame: Frame):
        engine = self.engine
        receiver = self.eval(stmt.receiver, frame)
        if receiver is None:
            raise MRuntimeError(f"tell {stmt.event}: receiver is null",
                                span=stmt.span, actor=self.actor,
                                time=engine._t(engine.now()))
        if not isinstance(receiver, ActorInstance):
            raise MRuntimeError(
                f"tell {stmt.event}: receiver is not an actor",
                span=stmt.span, actor=self.actor)
        args = [self.eval(a, frame) for a in (stmt.args or [])]
        theta = {}
        target = receiver.class_info.responses.get(stmt.event)
        if target is not None:
            if len(args) > len(target.params):
                raise MRuntimeError(
                    f"event {stmt.event} takes {len(target.params)} "
                    f"argument(s), got {len(args)}",
                    span=stmt.span, actor=self.actor)
            for (pname, ptype), value in zip(target.params, args):
                theta[pname] = self._convert(value, ptype, stmt.span)
        else:
            for i, value in enumerate(args):
                theta[f"arg{i}"] = value
        delta = Fraction(0)
        sender_override = None
        for key, vexpr in stmt.with_args:
            value = self.eval(vexpr, frame)
            if key == "after":
                if not isinstance(value, TimespanValue):
                    raise MRuntimeError("with(after:...) needs a timespan",
                                        span=stmt.span, actor=self.actor)
                delta = value.to_units(self.a.mu_ms)
                if delta < 0:
                    raise MRuntimeError(
                        "with(after:...) must not be negative",
                        span=stmt.span, actor=self.actor,
                        time=engine._t(engine.now()))
            elif key == "sender":
                if not isinstance(value, ActorInstance):
                    raise MRuntimeError("with(sender:...) needs an actor",
                                        span=stmt.span, actor=self.actor)
                sender_override = value
            else:
                theta[key] = to_plain(value)
        engine.send_message(self.actor, receiver, stmt.event, theta, delta,
                            origin="user", sender_override=sender_override)
        return True

    def eval_cancel(self, stmt: ast.Cancel):
        engine = self.engine
        removed = engine.queue.cancel_for(self.actor, stmt.names)
        engine.emit({
            "t": engine._t(engine.now()),
            "actor": self.actor.display_name,
            "action": "cancel",
            "payload": {"names": stmt.names or "*", "removed": removed},
        })
        return removed > 0

    # -- expressions ------------------------------------------------------------

    def eval(self, e, frame: Frame):
        if isinstance(e, ast.IntLit):
            return e.value
        if isinstance(e, ast.DecimalLit):
            return e.value()
        if isinstance(e, ast.BoolLit):
            return e.value
        if isinstance(e, ast.CharLit):
            return e.value
        if isinstance(e, ast.NullLit):
            return None
        if isinstance(e, ast.TimespanLit):
            return TimespanValue.from_components(
                ty.parse_timespan(e.components))
        if isinstance(e, ast.StringLit):
            parts = []
            for frag in e.fragments:
                if isinstance(frag, str):
                    parts.append(frag)
                else:
                    parts.append(stdlib.m_to_string(self.eval(frag, frame)))
            return "".join(parts)
        if isinstance(e, ast.CollectionLit):
            values = [self.eval(x, frame) for x in e.elems]
            if e.ctor == "set":
                seen, out = set(), []
                for v in values:
                    key = _hashable(v)
                    if key not in seen:
                        seen.add(key)
                        out.append(v)
                return out
            return values
        if isinstance(e, ast.MapLit):
            return {self.eval(k, frame): self.eval(v, frame)
                    for k, v in e.entries}
        if isinstance(e, ast.TupleLit):
            return tuple(self.eval(x, frame) for x in e.elems)
        if isinstance(e, ast.Name):
            return self.eval_name(e, frame)
        if isinstance(e, ast.SelfExpr):
            return self.actor
        if isinstance(e, ast.Member):
            return self.eval_member(e, frame)
        if isinstance(e, ast.Index):
            return self.eval_index(e, frame)
        if isinstance(e, ast.Call):
            return self.eval_call(e, frame)
        if isinstance(e, ast.Assign):
            return self.eval_assign(e, frame)
        if isinstance(e, ast.Ternary):
            cond = self._truthy(self.eval(e.cond, frame), e.span)
            return self.eval(e.then if cond else e.orelse, frame)
        if isinstance(e, ast.Binary):
            return self.eval_binary(e, frame)
        if isinstance(e, ast.Unary):
            return self.eval_unary(e, frame)
        if isinstance(e, ast.Cast):
            value = self.eval(e.expr, frame)
            target = self.a.decl_types.get(id(e))
            return self._convert(value, target, e.span)
        if isinstance(e, ast.Cases):
            return self.eval_cases(e, frame, as_expr=True)
        raise MRuntimeError(f"cannot evaluate {type(e).__name__}",
                            span=e.span, actor=self.actor)

    def eval_name(self, e: ast.Name, frame: Frame):
        slot = frame.find(e.id)
        if slot is not None:
            if slot[1] is _MISSING:
                raise MRuntimeError(f"variable {e.id!r} is unbound",
                                    span=e.span, actor=self.actor)
            return slot[1]
        if e.id == "message":
            raise MRuntimeError("message is only available in a do body",
                                span=e.span, actor=self.actor)
        if self.actor is not None:
            info = self.actor.class_info
            f = info.fields.get(e.id)
            if f is not None:
                return self._read_field(e.id, f, e.span)
            if e.id in info.consts:
                return info.consts[e.id][1]
        main_slot = self.engine._main_frame.find(e.id)
        if main_slot is not None and self.actor is None:
            return main_slot[1]
        if e.id in self.a.program_consts:
            return self.a.program_consts[e.id][1]
        raise MRuntimeError(f"unresolved name {e.id!r}", span=e.span,
                            actor=self.actor)

    def _read_field(self, name, f, span):
        store = self.actor.store
        if f.is_state:
            value = store.read_state(name)
        else:
            value = store.slots.get(name, _MISSING)
        if value is _MISSING or (f.is_state and value is None
                                 and f.default is None
                                 and name not in store.slots):
            if value is _MISSING:
                raise MRuntimeError(f"field {name!r} is unbound",
                                    span=span, actor=self.actor)
        return value

    def eval_member(self, e: ast.Member, frame: Frame):
        ref = self.a.enum_refs.get(id(e))
        if ref is not None:
            t, name, code = ref
            return EnumValue(t, name, code)
        if isinstance(e.obj, ast.SelfExpr):
            info = self.actor.class_info
            f = info.fields.get(e.name)
            if f is not None:
                return self._read_field(e.name, f, e.span)
            if e.name in info.consts:
                return info.consts[e.name][1]
            raise MRuntimeError(f"no member {e.name!r}", span=e.span,
                                actor=self.actor)
        obj = self.eval(e.obj, frame)
        if isinstance(obj, MessageView):
            return obj.get(e.name)
        if isinstance(obj, dict) and not isinstance(obj, MessageView):
            if e.name in obj:
                return obj[e.name]
        if isinstance(obj, RecordValue):
            if e.name in obj.fields:
                return obj.fields[e.name]
            raise MRuntimeError(f"record has no field {e.name!r}",
                                span=e.span, actor=self.actor)
        if isinstance(obj, ActorInstance):
            if obj is self.actor:
                f = obj.class_info.fields.get(e.name)
                if f is not None:
                    return self._read_field(e.name, f, e.span)
            raise MRuntimeError(
                "actors cannot access another actor's fields",
                span=e.span, actor=self.actor)
        raise MRuntimeError(f"no member {e.name!r} on {type(obj).__name__}",
                            span=e.span, actor=self.actor)

    def eval_index(self, e: ast.Index, frame: Frame):
        obj = self.eval(e.obj, frame)
        idx = self.eval(e.index, frame)
        if isinstance(obj, (list, tuple)):
            if not isinstance(idx, int) or isinstance(idx, bool):
                raise MRuntimeError("index must be an integer", span=e.span,
                                    actor=self.actor)
            if not 0 <= idx < len(obj):
                raise MRuntimeError(f"index {idx} out of range", span=e.span,
                                    actor=self.actor)
            return obj[idx]
        if isinstance(obj, dict):
            key = idx
            if key not in obj:
                raise MRuntimeError(f"missing map key {stdlib.m_to_string(key)}",
                                    span=e.span, actor=self.actor)
            return obj[key]
        raise MRuntimeError("value is not indexable", span=e.span,
                            actor=self.actor)

    def eval_assign(self, e: ast.Assign, frame: Frame):
        if e.op == "=":
            value = self.eval(e.value, frame)
        else:
            synthetic = ast.Binary(e.op[:-1], e.target, e.value, span=e.span)
            value = self.eval_binary(synthetic, frame)
        return self.assign_to(e.target, value, frame, e.span)

    def assign_to(self, target, value, frame: Frame, span):
        if isinstance(target, ast.Name):
            slot = frame.find(target.id)
            if slot is not None:
                slot[1] = self._convert(value, slot[0], span)
                return slot[1]
            if self.actor is not None:
                f = self.actor.class_info.fields.get(target.id)
                if f is not None:
                    return self._write_field(target.id, f, value, span)
            if self.actor is None:
                main_slot = self.engine._main_frame.find(target.id)
                if main_slot is not None:
                    main_slot[1] = self._convert(value, main_slot[0], span)
                    return main_slot[1]
            raise MRuntimeError(f"cannot assign to {target.id!r}", span=span,
                                actor=self.actor)
        if isinstance(target, ast.Member) and isinstance(target.obj,
                                                         ast.SelfExpr):
            f = self.actor.class_info.fields.get(target.name)
            if f is None:
                raise MRuntimeError(f"no field {target.name!r}", span=span,
                                    actor=self.actor)
            return self._write_field(target.name, f, value, span)
        if isinstance(target, ast.Index):
            obj = self.eval(target.obj, frame)
            idx = self.eval(target.index, frame)
            if isinstance(obj, list):
                if not isinstance(idx, int) or isinstance(idx, bool):
                    raise MRuntimeError("index must be an integer", span=span,
                                        actor=self.actor)
                if not 0 <= idx < len(obj):
                    raise MRuntimeError(f"index {idx} out of range",
                                        span=span, actor=self.actor)
                obj[idx] = value
                return value
            if isinstance(obj, dict):
                obj[idx] = value
                return value
            raise MRuntimeError("value is not index-assignable", span=span,
                                actor=self.actor)
        raise MRuntimeError("expression is not assignable", span=span,
                            actor=self.actor)

    def _write_field(self, name, f, value, span):
        value = self._convert(value, f.type, span)
        if self.engine.config.check_types and not _value_fits(value, f.type):
            raise MRuntimeError(
                f"type sweep: {stdlib.m_to_string(value)} does not fit "
                f"{f.type} in field {name!r}", span=span, actor=self.actor)
        store = self.actor.store
        if f.is_state:
            old = store.series.get(name)
            old_value = old[-1][1] if old else None
            self.engine.record_write(self.actor, name, old_value)
            store.write_state(name, self.engine.now(), value)
        else:
            self.engine.record_write(self.actor, name,
                                     store.slots.get(name))
            store.slots[name] = value
        return value

    def eval_cases(self, e: ast.Cases, frame: Frame, as_expr: bool):
        subject = self.eval(e.subject, frame)
        for br in e.branches:
            if _values_equal(self.eval(br.value, frame), subject):
                return self._run_branch(br.body, frame, as_expr)
        if e.otherwise is not None:
            return self._run_branch(e.otherwise, frame, as_expr)
        if as_expr:
            raise MRuntimeError(
                f"cases: no branch matches {stdlib.m_to_string(subject)} and "
                "there is no otherwise", span=e.span, actor=self.actor)
        return UNIT

    def _run_branch(self, stmts, frame: Frame, as_expr: bool):
        inner = Frame(frame)
        result = UNIT
        for stmt in stmts:
            if isinstance(stmt, ast.ExprStmt):
                result = self.eval(stmt.expr, inner)
            else:
                self.exec_statement(stmt, inner)
                result = UNIT
        return result if as_expr else UNIT

    def eval_call(self, e: ast.Call, frame: Frame):
        # method sugar and dotted externals
        if isinstance(e.callee, ast.Member):
            base, mname = e.callee.obj, e.callee.name
            if isinstance(base, ast.Name) and base.id == "string" \
                    and frame.find("string") is None:
                args = [self.eval(a, frame) for a in e.args]
                return self._call_external("string.format", args, e.span)
            if isinstance(base, ast.SelfExpr) and self.actor is not None \
                    and mname in self.actor.class_info.functions:
                fn = self.actor.class_info.functions[mname]
                args = [self.eval(a, frame) for a in e.args]
                return self.call_function(fn, args, e.span)
            obj = self.eval(base, frame)
            args = [obj] + [self.eval(a, frame) for a in e.args]
            return self._call_external(mname, args, e.span)
        if not isinstance(e.callee, ast.Name):
            raise MRuntimeError("value is not callable", span=e.span,
                                actor=self.actor)
        name = e.callee.id
        # instantiation
        t = self.a.type_names.get(name)
        if t is not None and frame.find(name) is None:
            if t.is_class:
                info = self.a.classes[name]
                instance = self.engine.allocate_actor(info)
                named = [(n, self.eval(v, frame)) for n, v in e.named_args]
                self.engine.init_actor(instance, named,
                                       at_runtime=self.engine._seq > 0 and
                                       self.engine.events_dispatched > 0)
                return instance
            if t.kind == "record":
                fields = {n: self.eval(v, frame) for n, v in e.named_args}
                return RecordValue(t, fields)
            if t.kind == "tuple":
                return tuple(self.eval(a, frame) for a in e.args)
        # prev is a special form over the actor's state series
        if name == "prev" and len(e.args) == 1 and frame.find("prev") is None:
            return self._eval_prev(e.args[0], e.span)
        if self.actor is not None \
                and name in self.actor.class_info.functions:
            fn = self.actor.class_info.functions[name]
            args = [self.eval(a, frame) for a in e.args]
            return self.call_function(fn, args, e.span)
        if name in self.a.functions:
            fn = self.a.functions[name]
            args = [self.eval(a, frame) for a in e.args]
            return self.call_function(fn, args, e.span)
        args = [self.eval(a, frame) for a in e.args]
        return self._call_external(name, args, e.span)

    def _eval_prev(self, target, span):
        name = None
        if isinstance(target, ast.Name):
            name = target.id
        elif isinstance(target, ast.Member) and isinstance(target.obj,
                                                           ast.SelfExpr):
            name = target.name
        if name is None or self.actor is None:
            raise MRuntimeError("prev expects a state variable", span=span,
                                actor=self.actor)
        return self.actor.store.prev(name, self.engine.now())

    def call_function(self, fn: FunctionInfo, args, span):
        if len(args) != len(fn.params):
            raise MRuntimeError(
                f"{fn.name} takes {len(fn.params)} argument(s)",
                span=span, actor=self.actor)
        frame = Frame()
        for (pname, ptype), value in zip(fn.params, args):
            frame.define(pname, ptype, self._convert(value, ptype, span))
        try:
            self.exec_block(fn.body, Frame(frame))
        except _ReturnSignal as sig:
            return self._convert(sig.value, fn.ret, span) \
                if not isinstance(sig.value, Unit) else sig.value
        return UNIT

    def _call_external(self, name, args, span):
        impl = stdlib.IMPLEMENTATIONS.get(name)
        if impl is None:
            raise MRuntimeError(f"unknown external function {name!r}",
                                span=span, actor=self.actor,
                                time=self.engine._t(self.engine.now()))
        try:
            return impl(self.ctx, *args)
        except stdlib.ExternalCallError as exc:
            raise MRuntimeError(str(exc), span=span,
                                actor=self.actor) from None
        except TypeError as exc:
            raise MRuntimeError(f"{name}: {exc}", span=span,
                                actor=self.actor) from None

    # -- operators -----------------------------------------------------------------

    def eval_binary(self, e: ast.Binary, frame: Frame):
        op = e.op
        if op == "&&":
            return (self._truthy(self.eval(e.left, frame), e.span)
                    and self._truthy(self.eval(e.right, frame), e.span))
        if op == "||":
            return (self._truthy(self.eval(e.left, frame), e.span)
                    or self._truthy(self.eval(e.right, frame), e.span))
        left = self.eval(e.left, frame)
        right = self.eval(e.right, frame)
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
            raise MRuntimeError(
                f"operator {op} not defined between timespan and "
                "non-timespan", span=e.span, actor=self.actor)
        try:
            if op == "+":
                return left + right
            if op == "-":
                return left - right
            if op == "*":
                return left * right
            if op == "/":
                if right == 0:
                    raise MRuntimeError("division by zero", span=e.span,
                                        actor=self.actor,
                                        time=self.engine._t(self.engine.now()))
                return left / right
            if op == "%":
                if right == 0:
                    raise MRuntimeError("modulo by zero", span=e.span,
                                        actor=self.actor)
                q = int(left / right)
                return left - q * right
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
                return _values_equal(left, right)
            if op == "!=":
                return not _values_equal(left, right)
            if op == "<":
                return left < right
            if op == "<=":
                return left <= right
            if op == ">":
                return left > right
            if op == ">=":
                return left >= right
        except TypeError as exc:
            raise MRuntimeError(f"operator {op}: {exc}", span=e.span,
                                actor=self.actor) from None
        raise MRuntimeError(f"unknown operator {op}", span=e.span)

    def eval_unary(self, e: ast.Unary, frame: Frame):
        value = self.eval(e.operand, frame)
        if e.op == "-":
            if isinstance(value, TimespanValue):
                return TimespanValue.from_ms(-value.ms)
            return -value
        if e.op == "!":
            return not self._truthy(value, e.span)
        if e.op == "~":
            return ~value
        raise MRuntimeError(f"unknown unary {e.op}", span=e.span)

    def _truthy(self, value, span):
        if isinstance(value, bool):
            return value
        raise MRuntimeError(
            f"condition is not a bool: {stdlib.m_to_string(value)}",
            span=span, actor=self.actor)

    def _convert(self, value, target, span):
        if target is None or isinstance(value, Unit):
            return value
        return self.engine._convert(value, target, span)


@dataclass
class RecordValue:
    type: ty.Type
    fields: dict


def _values_equal(a, b):
    if isinstance(a, EnumValue) or isinstance(b, EnumValue):
        return isinstance(a, EnumValue) and isinstance(b, EnumValue) \
            and a == b
    if isinstance(a, TimespanValue) and isinstance(b, TimespanValue):
        return a.ms == b.ms
    if isinstance(a, ActorInstance) or isinstance(b, ActorInstance):
        return a is b
    if isinstance(a, bool) != isinstance(b, bool):
        return False
    return a == b


def _hashable(value):
    if isinstance(value, (list, dict)):
        return stdlib.m_to_string(value)
    return value


def _value_fits(value, t: ty.Type) -> bool:
    if value is None or value is _MISSING or t.kind == "any":
        return True
    kind = t.kind
    if kind == "bool":
        return isinstance(value, bool)
    if kind in ty.INT_KINDS + ty.UINT_KINDS:
        if not isinstance(value, int) or isinstance(value, bool):
            return False
        lo, hi = ty.INT_RANGES[kind]
        return lo <= value <= hi
    if kind in ("float", "double"):
        return isinstance(value, float)
    if kind in ("char", "string"):
        return isinstance(value, str)
    if kind == "timespan":
        return isinstance(value, TimespanValue)
    if kind == "enum":
        return isinstance(value, EnumValue) and value.type.tid == t.tid
    if kind in ("array", "list", "set"):
        return isinstance(value, list)
    if kind == "map":
        return isinstance(value, dict)
    if kind == "tuple":
        return isinstance(value, tuple)
    if kind in ("actor", "connection", "object"):
        return isinstance(value, ActorInstance)
    if kind == "class":
        return isinstance(value, ActorInstance) \
            and value.class_info.type.tid == t.tid
    if kind == "record":
        return isinstance(value, RecordValue)
    return True


def to_plain(value):
    return value


def run_model(analysis: Analysis, config: RunConfig = None) -> RunResult:
    """Initialize and run to a terminal condition."""
    engine = Engine(analysis, config)
    try:
        engine.initialize_system()
    except MRuntimeError as exc:
        return RunResult(engine.trace, "runtime-error",
                         engine.events_dispatched, engine.clock.now(),
                         "".join(engine._console_parts), exc)
    return engine.run()

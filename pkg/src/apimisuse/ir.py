"""API-usage intermediate representation.

A method body is flattened into a stream of events: calls, plus bracketed
guard scopes (``if``/``while`` conditions) and try scopes. Everything the
statistical models look at for one call site is derived from that stream by
:func:`context_of`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Union
from urllib.parse import quote, unquote

RECEIVER = "recv"


def arg_slot(i: int) -> str:
    return f"arg{i}"


def encode_text(s: str) -> str:
    return quote(s, safe="")


def decode_text(s: str) -> str:
    return unquote(s, errors="strict")


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class IrError(Exception):
    """Base class for structural problems with a usage sequence."""


class UnbalancedScope(IrError):
    def __init__(self, position: int):
        super().__init__(f"unbalanced scope at event {position}")
        self.position = position


class ArityMismatch(IrError):
    def __init__(self, position: int):
        super().__init__(f"call arity does not match argument count at event {position}")
        self.position = position


class MalformedScope(IrError):
    """A scope the frontend could never produce (guard without a kind, try
    without catch types, state guard not preceded by its condition call)."""

    def __init__(self, position: int, reason: str):
        super().__init__(f"malformed scope at event {position}: {reason}")
        self.position = position


class NotACall(IrError):
    def __init__(self, index: int):
        super().__init__(f"event {index} is not a call")
        self.index = index


class IrSyntaxError(IrError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class ApiMethodId:
    receiver_type: str
    method_name: str
    arity: int

    def __post_init__(self):
        if not self.receiver_type or not self.method_name:
            raise ValueError("receiver_type and method_name must be non-empty")
        if self.arity < 0:
            raise ValueError("arity must be non-negative")

    @property
    def is_constructor(self) -> bool:
        return self.method_name == "<init>"

    def __str__(self) -> str:
        return f"{self.receiver_type}.{self.method_name}/{self.arity}"

    @classmethod
    def parse(cls, text: str) -> "ApiMethodId":
        head, _, arity = text.rpartition("/")
        recv, _, name = head.partition(".")
        if not head or not arity.isdigit():
            raise ValueError(f"bad method id {text!r}")
        return cls(recv, name, int(arity))


@dataclass(frozen=True, order=True)
class ArgAbstraction:
    """Abstract value of one call argument.

    ``kind`` is one of ``null``, ``int``, ``str``, ``bool``, ``var``, ``call``.
    ``value`` holds the int bucket, exact string text, ``true``/``false``, or
    the declared type of a variable. ``name`` is only set for ``var`` and is
    not part of what the models see (see :attr:`key`).
    """

    kind: str
    value: str = ""
    name: str = ""

    @classmethod
    def null(cls):
        return cls("null")

    @classmethod
    def int_(cls, n: int):
        return cls("int", "neg" if n < 0 else "zero" if n == 0 else "pos")

    @classmethod
    def string(cls, s: str):
        return cls("str", s)

    @classmethod
    def boolean(cls, b: bool):
        return cls("bool", "true" if b else "false")

    @classmethod
    def var(cls, type_name: str, name: str):
        return cls("var", type_name, name)

    @classmethod
    def call_result(cls):
        return cls("call")

    @property
    def key(self) -> str:
        """Model-facing encoding; drops the variable name."""
        if self.kind in ("null", "call"):
            return self.kind
        if self.kind == "str":
            return "str:" + encode_text(self.value)
        return f"{self.kind}:{self.value}"

    def encode(self) -> str:
        if self.kind == "var":
            return f"var:{self.value}:{self.name}"
        return self.key

    @classmethod
    def decode(cls, text: str) -> "ArgAbstraction":
        kind, _, rest = text.partition(":")
        if kind in ("null", "call") and not rest:
            return cls(kind)
        if kind == "int" and rest in ("neg", "zero", "pos"):
            return cls(kind, rest)
        if kind == "bool" and rest in ("true", "false"):
            return cls(kind, rest)
        if kind == "str":
            return cls(kind, decode_text(rest))
        if kind == "var":
            type_name, _, name = rest.partition(":")
            if type_name and name:
                return cls(kind, type_name, name)
        raise ValueError(f"bad argument abstraction {text!r}")


@dataclass(frozen=True, order=True)
class GuardKind:
    kind: str  # none | null | const | state
    state_call: Optional[ApiMethodId] = None

    def encode(self) -> str:
        if self.kind == "state":
            return f"state:{self.state_call}"
        return self.kind

    @classmethod
    def decode(cls, text: str) -> "GuardKind":
        if text in ("none", "null", "const"):
            return cls(text)
        if text.startswith("state:"):
            return cls("state", ApiMethodId.parse(text[6:]))
        raise ValueError(f"bad guard kind {text!r}")

    @classmethod
    def state(cls, method: ApiMethodId) -> "GuardKind":
        return cls("state", method)


NO_GUARD = GuardKind("none")
NULL_CHECK = GuardKind("null")
CONST_CHECK = GuardKind("const")


class PostCheckKind(enum.Enum):
    COMPARED_TO_CONSTANT = "const"
    NULL_CHECKED = "null"
    IGNORED = "ignored"


class FactorKind(enum.Enum):
    TEMPORAL_ORDER = "TemporalOrder"
    PRECONDITION = "Precondition"
    POSTCONDITION = "Postcondition"
    ARGUMENT_VALUE = "ArgumentValue"
    EXCEPTION = "Exception"

    @property
    def order(self) -> int:
        return _FACTOR_ORDER[self]


_FACTOR_ORDER = {f: i for i, f in enumerate(FactorKind)}


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Call:
    id: ApiMethodId
    receiver_var: Optional[str] = None
    args: tuple[ArgAbstraction, ...] = ()
    result_var: Optional[str] = None


@dataclass(frozen=True)
class GuardOpen:
    kind: GuardKind
    subject: str


@dataclass(frozen=True)
class GuardClose:
    pass


@dataclass(frozen=True)
class TryOpen:
    caught: tuple[str, ...]


@dataclass(frozen=True)
class TryClose:
    pass


UsageEvent = Union[Call, GuardOpen, GuardClose, TryOpen, TryClose]


@dataclass(frozen=True)
class UsageSequence:
    source_id: str
    events: tuple[UsageEvent, ...] = ()

    def call_indices(self) -> list[int]:
        return [i for i, e in enumerate(self.events) if isinstance(e, Call)]

    def replace_events(self, events: Iterable[UsageEvent]) -> "UsageSequence":
        return UsageSequence(self.source_id, tuple(events))


@dataclass(frozen=True)
class CallContext:
    call_index: int
    predecessor: Optional[ApiMethodId]
    guards: tuple[tuple[str, GuardKind], ...]
    post_check: PostCheckKind
    args: tuple[ArgAbstraction, ...]
    handled_exceptions: tuple[str, ...]
    has_receiver: bool = field(default=False)

    def guard(self, slot: str) -> GuardKind:
        return dict(self.guards).get(slot, NO_GUARD)

    @property
    def exception_pattern(self) -> str:
        return exception_pattern_key(self.handled_exceptions)


def exception_pattern_key(types: Iterable[str]) -> str:
    types = sorted(set(types))
    return ",".join(types) if types else "-"


def slots_of(call: Call) -> list[str]:
    slots = [RECEIVER] if call.receiver_var is not None else []
    return slots + [arg_slot(i) for i in range(len(call.args))]


def slot_variable(call: Call, slot: str) -> Optional[str]:
    """Name of the variable occupying ``slot``, if any."""
    if slot == RECEIVER:
        return call.receiver_var
    arg = call.args[int(slot[3:])]
    return arg.name if arg.kind == "var" else None


# ---------------------------------------------------------------------------
# Validation and context extraction
# ---------------------------------------------------------------------------


def validate(seq: UsageSequence) -> None:
    """Raise an :class:`IrError` if ``seq`` is not structurally valid."""
    stack: list[type] = []
    events = seq.events
    for pos, ev in enumerate(events):
        if isinstance(ev, Call):
            if ev.id.arity != len(ev.args):
                raise ArityMismatch(pos)
        elif isinstance(ev, GuardOpen):
            if ev.kind.kind == "none":
                raise MalformedScope(pos, "guard without a condition kind")
            if ev.kind.kind == "state":
                prev = events[pos - 1] if pos > 0 else None
                if not (
                    isinstance(prev, Call)
                    and prev.id == ev.kind.state_call
                    and prev.receiver_var == ev.subject
                    and prev.result_var is None
                ):
                    raise MalformedScope(pos, "state guard not preceded by its condition call")
            stack.append(GuardOpen)
        elif isinstance(ev, TryOpen):
            if not ev.caught:
                raise MalformedScope(pos, "try without caught types")
            stack.append(TryOpen)
        else:
            opener = GuardOpen if isinstance(ev, GuardClose) else TryOpen
            if not stack or stack.pop() is not opener:
                raise UnbalancedScope(pos)
    if stack:
        raise UnbalancedScope(len(events))


_POST_CHECK_WINDOW = 2


def _post_check(events, i: int, result_var: Optional[str]) -> PostCheckKind:
    if result_var is None:
        return PostCheckKind.IGNORED
    for ev in events[i + 1 : i + 1 + _POST_CHECK_WINDOW]:
        if isinstance(ev, GuardOpen) and ev.subject == result_var:
            if ev.kind.kind == "null":
                return PostCheckKind.NULL_CHECKED
            if ev.kind.kind == "const":
                return PostCheckKind.COMPARED_TO_CONSTANT
    return PostCheckKind.IGNORED


def _iter_contexts(seq: UsageSequence) -> Iterator[tuple[ApiMethodId, CallContext]]:
    events = seq.events
    guards: list[GuardOpen] = []
    tries: list[TryOpen] = []
    predecessor: Optional[ApiMethodId] = None
    for i, ev in enumerate(events):
        if isinstance(ev, GuardOpen):
            guards.append(ev)
        elif isinstance(ev, GuardClose):
            guards.pop()
        elif isinstance(ev, TryOpen):
            tries.append(ev)
        elif isinstance(ev, TryClose):
            tries.pop()
        else:
            slot_guards = []
            for slot in slots_of(ev):
                var = slot_variable(ev, slot)
                kind = NO_GUARD
                # innermost enclosing guard on the variable wins
                for g in reversed(guards):
                    if var is not None and g.subject == var:
                        kind = g.kind
                        break
                slot_guards.append((slot, kind))
            handled = sorted({t for scope in tries for t in scope.caught})
            ctx = CallContext(
                call_index=i,
                predecessor=predecessor,
                guards=tuple(slot_guards),
                post_check=_post_check(events, i, ev.result_var),
                args=ev.args,
                handled_exceptions=tuple(handled),
                has_receiver=ev.receiver_var is not None,
            )
            yield ev.id, ctx
            predecessor = ev.id


def contexts(seq: UsageSequence) -> list[tuple[ApiMethodId, CallContext]]:
    validate(seq)
    return list(_iter_contexts(seq))


def context_of(seq: UsageSequence, call_index: int) -> CallContext:
    if not 0 <= call_index < len(seq.events) or not isinstance(seq.events[call_index], Call):
        raise NotACall(call_index)
    for _, ctx in contexts(seq):
        if ctx.call_index == call_index:
            return ctx
    raise NotACall(call_index)  # pragma: no cover


# ---------------------------------------------------------------------------
# Interchange format
# ---------------------------------------------------------------------------

IR_MAGIC = "SAMIR"
IR_VERSION = "1"


def _opt(v: Optional[str]) -> str:
    return "-" if v is None else v


def write_ir(seq: UsageSequence) -> str:
    lines = [f"{IR_MAGIC} {IR_VERSION} {encode_text(seq.source_id)}"]
    for ev in seq.events:
        if isinstance(ev, Call):
            args = ",".join(a.encode() for a in ev.args)
            lines.append(
                f"CALL {ev.id.receiver_type} {ev.id.method_name} {ev.id.arity} "
                f"recv={_opt(ev.receiver_var)} result={_opt(ev.result_var)} args={args}"
            )
        elif isinstance(ev, GuardOpen):
            lines.append(f"GUARD+ {ev.kind.encode()} {ev.subject}")
        elif isinstance(ev, GuardClose):
            lines.append("GUARD-")
        elif isinstance(ev, TryOpen):
            lines.append("TRY+ " + ",".join(ev.caught))
        else:
            lines.append("TRY-")
    return "\n".join(lines) + "\n"


def _field(token: str, name: str, lineno: int) -> Optional[str]:
    prefix = name + "="
    if not token.startswith(prefix):
        raise IrSyntaxError(lineno, f"expected {prefix}...")
    value = token[len(prefix) :]
    if not value:
        raise IrSyntaxError(lineno, f"empty {name} field")
    return None if value == "-" else value


def _parse_event(line: str, lineno: int) -> UsageEvent:
    parts = line.split(" ")
    op = parts[0]
    if op == "CALL":
        if len(parts) != 7:
            raise IrSyntaxError(lineno, "CALL takes 6 fields")
        _, recv_type, method, arity, recv, result, args = parts
        if not arity.isdigit():
            raise IrSyntaxError(lineno, f"bad arity {arity!r}")
        if not args.startswith("args="):
            raise IrSyntaxError(lineno, "expected args=...")
        raw = args[5:]
        try:
            mid = ApiMethodId(recv_type, method, int(arity))
            abstractions = tuple(ArgAbstraction.decode(a) for a in raw.split(",")) if raw else ()
        except ValueError as exc:
            raise IrSyntaxError(lineno, str(exc)) from None
        return Call(mid, _field(recv, "recv", lineno), abstractions, _field(result, "result", lineno))
    if op == "GUARD+" and len(parts) == 3:
        try:
            return GuardOpen(GuardKind.decode(parts[1]), parts[2])
        except ValueError as exc:
            raise IrSyntaxError(lineno, str(exc)) from None
    if op == "GUARD-" and len(parts) == 1:
        return GuardClose()
    if op == "TRY+" and len(parts) == 2 and parts[1]:
        return TryOpen(tuple(parts[1].split(",")))
    if op == "TRY-" and len(parts) == 1:
        return TryClose()
    raise IrSyntaxError(lineno, f"unrecognized event line {line!r}")


def read_ir(text: str) -> UsageSequence:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise IrSyntaxError(1, "missing header")
    header = lines[0].split(" ")
    if len(header) != 3 or header[0] != IR_MAGIC:
        raise IrSyntaxError(1, "expected 'SAMIR 1 <source_id>' header")
    if header[1] != IR_VERSION:
        raise IrSyntaxError(1, f"unsupported IR version {header[1]}")
    try:
        source_id = decode_text(header[2])
    except UnicodeDecodeError:
        raise IrSyntaxError(1, "bad source id encoding") from None
    events = tuple(_parse_event(line, n) for n, line in enumerate(lines[1:], start=2))
    return UsageSequence(source_id, events)


# ---------------------------------------------------------------------------
# Structural helpers shared by the repair and benchmark code
# ---------------------------------------------------------------------------


def establishes_state_guard(events, i: int) -> bool:
    """True if the call at ``i`` is the condition of the state guard after it."""
    c = events[i]
    nxt = events[i + 1] if i + 1 < len(events) else None
    return (
        isinstance(c, Call)
        and isinstance(nxt, GuardOpen)
        and nxt.kind.kind == "state"
        and nxt.kind.state_call == c.id
        and nxt.subject == c.receiver_var
        and c.result_var is None
    )


def matching_close(events, open_index: int) -> int:
    """Index of the GuardClose matching the GuardOpen at ``open_index``."""
    depth = 0
    for j in range(open_index, len(events)):
        if isinstance(events[j], GuardOpen):
            depth += 1
        elif isinstance(events[j], GuardClose):
            depth -= 1
            if depth == 0:
                return j
    raise UnbalancedScope(open_index)

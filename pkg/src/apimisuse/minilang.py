"""Parser, lowering and pretty-printer for a small Java-like language.

The language exists to write API usages the way Java code would look::

    void read() {
      File file = new File("data.txt");
      if (file != null) {
        FileInputStream fis = new FileInputStream(file);
      }
      try {
        int n = fis.read(buf);
      } catch (IOException e) {
      }
    }

Methods may declare parameters (``void m(File f)``) so that variables can be
typed without a constructor call.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from .ir import (
    CONST_CHECK,
    NULL_CHECK,
    ApiMethodId,
    ArgAbstraction,
    Call,
    GuardClose,
    GuardKind,
    GuardOpen,
    TryClose,
    TryOpen,
    UsageEvent,
    UsageSequence,
    validate,
)

KEYWORDS = frozenset(
    {"void", "new", "if", "else", "while", "try", "catch", "return", "null", "true", "false"}
)
MAX_NESTING = 200


@dataclass(frozen=True)
class Diagnostic:
    line: int
    column: int
    message: str

    def __str__(self):
        return f"{self.line}:{self.column}: {self.message}"


class ParseError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


class UnknownVariable(Exception):
    def __init__(self, name: str, line: int, column: int):
        super().__init__(f"{line}:{column}: unknown variable {name!r}")
        self.name = name
        self.line = line
        self.column = column


# ---------------------------------------------------------------------------
# Syntax tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    kind: str  # null | int | str | bool
    value: object
    line: int = 0
    column: int = 0


@dataclass(frozen=True)
class Name:
    ident: str
    line: int = 0
    column: int = 0


@dataclass(frozen=True)
class New:
    type_name: str
    args: tuple
    line: int = 0
    column: int = 0


@dataclass(frozen=True)
class MethodCall:
    receiver: Name
    method: str
    args: tuple
    line: int = 0
    column: int = 0


Expr = Union[Literal, Name, New, MethodCall]


@dataclass(frozen=True)
class Compare:
    subject: Name
    op: str
    rhs: Literal


Cond = Union[Compare, MethodCall]


@dataclass(frozen=True)
class VarDecl:
    type_name: str
    name: str
    value: Expr


@dataclass(frozen=True)
class ExprStmt:
    expr: Expr


@dataclass(frozen=True)
class If:
    cond: Cond
    then: tuple
    orelse: Optional[tuple] = None


@dataclass(frozen=True)
class While:
    cond: Cond
    body: tuple


@dataclass(frozen=True)
class Catch:
    type_name: str
    name: str
    body: tuple


@dataclass(frozen=True)
class Try:
    body: tuple
    catches: tuple


@dataclass(frozen=True)
class Return:
    value: Optional[Expr] = None


Stmt = Union[VarDecl, ExprStmt, If, While, Try, Return]


@dataclass(frozen=True)
class Method:
    name: str
    params: tuple[tuple[str, str], ...]
    body: tuple


@dataclass(frozen=True)
class SourceUnit:
    path: str
    methods: tuple[Method, ...] = field(default_factory=tuple)


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # ident | int | str | op | eof
    text: str
    line: int
    column: int
    value: object = None


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<int>-?[0-9]+)
  | (?P<str>"(?:[^"\\\n]|\\.)*")
  | (?P<op>==|!=|[{}();,.=])
    """,
    re.VERBOSE | re.DOTALL,
)

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}


def _unescape(body: str) -> Optional[str]:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            nxt = body[i + 1]
            if nxt not in _ESCAPES:
                return None
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _escape(s: str) -> str:
    return (
        s.replace("\\", "\\\\")
        .replace('"', '\\"')
        .replace("\n", "\\n")
        .replace("\t", "\\t")
        .replace("\r", "\\r")
    )


class _Positions:
    def __init__(self, text: str):
        self.starts = [0] + [m.end() for m in re.finditer("\n", text)]

    def at(self, offset: int) -> tuple[int, int]:
        lo, hi = 0, len(self.starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.starts[mid] <= offset:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1, offset - self.starts[lo] + 1


def tokenize(text: str) -> list[Token]:
    pos = _Positions(text)
    tokens = []
    offset = 0
    while offset < len(text):
        m = _TOKEN_RE.match(text, offset)
        line, col = pos.at(offset)
        if m is None:
            if text.startswith("/*", offset):
                raise ParseError([Diagnostic(line, col, "unterminated comment")])
            if text[offset] == '"':
                raise ParseError([Diagnostic(line, col, "unterminated string literal")])
            raise ParseError([Diagnostic(line, col, f"unexpected character {text[offset]!r}")])
        kind = m.lastgroup
        lexeme = m.group()
        if kind == "str":
            value = _unescape(lexeme[1:-1])
            if value is None:
                raise ParseError([Diagnostic(line, col, "invalid escape in string literal")])
            tokens.append(Token("str", lexeme, line, col, value))
        elif kind == "int":
            tokens.append(Token("int", lexeme, line, col, int(lexeme)))
        elif kind in ("ident", "op"):
            tokens.append(Token(kind, lexeme, line, col))
        offset = m.end()
    if text:
        line, col = pos.at(len(text) - 1)
    else:
        line, col = 1, 1
    tokens.append(Token("eof", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0
        self.depth = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ParseError([Diagnostic(tok.line, tok.column, f"{message}, found {found}")])

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "ident") and self.tok.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}")
        tok = self.tok
        self.i += 1
        return tok

    def ident(self, what: str) -> Token:
        tok = self.tok
        if tok.kind != "ident" or tok.text in KEYWORDS:
            self.error(f"expected {what}")
        self.i += 1
        return tok

    def unit(self, path: str) -> SourceUnit:
        methods = []
        while self.tok.kind != "eof":
            methods.append(self.method())
        return SourceUnit(path, tuple(methods))

    def method(self) -> Method:
        self.expect("void")
        name = self.ident("method name").text
        self.expect("(")
        params = []
        if not self.at(")"):
            while True:
                type_name = self.ident("parameter type").text
                params.append((type_name, self.ident("parameter name").text))
                if not self.at(","):
                    break
                self.i += 1
        self.expect(")")
        return Method(name, tuple(params), self.block())

    def block(self) -> tuple:
        open_tok = self.expect("{")
        self.depth += 1
        if self.depth > MAX_NESTING:
            self.error("blocks nested too deeply", open_tok)
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                self.error("expected '}'")
            stmts.append(self.stmt())
        self.i += 1
        self.depth -= 1
        return tuple(stmts)

    def stmt(self) -> Stmt:
        tok = self.tok
        if tok.kind == "ident":
            if tok.text == "if":
                self.i += 1
                cond = self.paren_cond()
                then = self.block()
                orelse = None
                if self.at("else"):
                    self.i += 1
                    orelse = self.block()
                return If(cond, then, orelse)
            if tok.text == "while":
                self.i += 1
                cond = self.paren_cond()
                return While(cond, self.block())
            if tok.text == "try":
                self.i += 1
                body = self.block()
                catches = []
                while self.at("catch"):
                    self.i += 1
                    self.expect("(")
                    type_name = self.ident("exception type").text
                    name = self.ident("exception variable").text
                    self.expect(")")
                    catches.append(Catch(type_name, name, self.block()))
                if not catches:
                    self.error("expected 'catch'")
                return Try(body, tuple(catches))
            if tok.text == "return":
                self.i += 1
                value = None if self.at(";") else self.expr()
                self.expect(";")
                return Return(value)
            if tok.text == "new":
                expr = self.expr()
                self.expect(";")
                return ExprStmt(expr)
            if tok.text not in KEYWORDS:
                nxt = self.tokens[self.i + 1]
                if nxt.kind == "ident" and nxt.text not in KEYWORDS:
                    type_name = self.ident("type").text
                    name = self.ident("variable name").text
                    self.expect("=")
                    value = self.expr()
                    self.expect(";")
                    return VarDecl(type_name, name, value)
                expr = self.expr()
                if not isinstance(expr, (MethodCall, New)):
                    self.error("expected a call statement", tok)
                self.expect(";")
                return ExprStmt(expr)
        self.error("expected a statement")

    def paren_cond(self) -> Cond:
        self.expect("(")
        start = self.tok
        lhs = self.expr()
        if isinstance(lhs, MethodCall):
            cond: Cond = lhs
        elif isinstance(lhs, Name) and (self.at("==") or self.at("!=")):
            op = self.tok.text
            self.i += 1
            rhs = self.expr()
            if not isinstance(rhs, Literal):
                self.error("expected a literal on the right of the comparison")
            cond = Compare(lhs, op, rhs)
        else:
            self.error("expected a comparison or a call condition", start)
        self.expect(")")
        return cond

    def args(self) -> tuple:
        self.expect("(")
        out = []
        if not self.at(")"):
            while True:
                out.append(self.expr())
                if not self.at(","):
                    break
                self.i += 1
        self.expect(")")
        return tuple(out)

    def expr(self) -> Expr:
        tok = self.tok
        if tok.kind == "int":
            self.i += 1
            return Literal("int", tok.value, tok.line, tok.column)
        if tok.kind == "str":
            self.i += 1
            return Literal("str", tok.value, tok.line, tok.column)
        if tok.kind == "ident":
            if tok.text == "null":
                self.i += 1
                return Literal("null", None, tok.line, tok.column)
            if tok.text in ("true", "false"):
                self.i += 1
                return Literal("bool", tok.text == "true", tok.line, tok.column)
            if tok.text == "new":
                self.i += 1
                self.depth += 1
                if self.depth > MAX_NESTING:
                    self.error("expression nested too deeply", tok)
                type_name = self.ident("type").text
                node = New(type_name, self.args(), tok.line, tok.column)
                self.depth -= 1
                return node
            name = Name(self.ident("expression").text, tok.line, tok.column)
            if self.at("."):
                self.i += 1
                method = self.ident("method name").text
                self.depth += 1
                if self.depth > MAX_NESTING:
                    self.error("expression nested too deeply", tok)
                node = MethodCall(name, method, self.args(), tok.line, tok.column)
                self.depth -= 1
                return node
            return name
        self.error("expected an expression")


def parse(text: Union[str, bytes], path: str = "") -> SourceUnit:
    """Parse mini-language source; raise :class:`ParseError` on bad input."""
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    return _Parser(tokenize(text)).unit(path)


# ---------------------------------------------------------------------------
# Lowering
# ---------------------------------------------------------------------------


def source_id_for(path: str, method: str) -> str:
    return f"{path}:{method}" if path else method


class _Lowerer:
    def __init__(self, params):
        self.env: dict[str, str] = dict((name, t) for t, name in params)
        self.events: list[UsageEvent] = []

    def type_of(self, name: Name) -> str:
        if name.ident not in self.env:
            raise UnknownVariable(name.ident, name.line, name.column)
        return self.env[name.ident]

    def arg(self, expr: Expr) -> ArgAbstraction:
        if isinstance(expr, Literal):
            if expr.kind == "null":
                return ArgAbstraction.null()
            if expr.kind == "int":
                return ArgAbstraction.int_(expr.value)
            if expr.kind == "bool":
                return ArgAbstraction.boolean(expr.value)
            return ArgAbstraction.string(expr.value)
        if isinstance(expr, Name):
            return ArgAbstraction.var(self.type_of(expr), expr.ident)
        self.call(expr, None)
        return ArgAbstraction.call_result()

    def call(self, expr: Union[New, MethodCall], result: Optional[str]) -> Call:
        args = tuple(self.arg(a) for a in expr.args)
        if isinstance(expr, New):
            ev = Call(ApiMethodId(expr.type_name, "<init>", len(args)), None, args, result)
        else:
            recv_type = self.type_of(expr.receiver)
            ev = Call(ApiMethodId(recv_type, expr.method, len(args)), expr.receiver.ident, args, result)
        self.events.append(ev)
        return ev

    def expr(self, expr: Expr, result: Optional[str] = None):
        if isinstance(expr, (New, MethodCall)):
            self.call(expr, result)
        elif isinstance(expr, Name):
            self.type_of(expr)

    def guard_open(self, cond: Cond):
        if isinstance(cond, MethodCall):
            ev = self.call(cond, None)
            self.events.append(GuardOpen(GuardKind.state(ev.id), cond.receiver.ident))
        else:
            self.type_of(cond.subject)
            kind = NULL_CHECK if cond.rhs.kind == "null" else CONST_CHECK
            self.events.append(GuardOpen(kind, cond.subject.ident))

    def block(self, stmts):
        for s in stmts:
            self.stmt(s)

    def stmt(self, s: Stmt):
        if isinstance(s, VarDecl):
            self.expr(s.value, s.name)
            self.env[s.name] = s.type_name
        elif isinstance(s, ExprStmt):
            self.expr(s.expr)
        elif isinstance(s, If):
            self.guard_open(s.cond)
            self.block(s.then)
            self.events.append(GuardClose())
            if s.orelse:
                self.block(s.orelse)
        elif isinstance(s, While):
            self.guard_open(s.cond)
            self.block(s.body)
            self.events.append(GuardClose())
        elif isinstance(s, Try):
            self.events.append(TryOpen(tuple(c.type_name for c in s.catches)))
            self.block(s.body)
            self.events.append(TryClose())
            for c in s.catches:
                self.env[c.name] = c.type_name
                self.block(c.body)
        elif isinstance(s, Return) and s.value is not None:
            self.expr(s.value)


def lower_method(method: Method, path: str = "") -> UsageSequence:
    lw = _Lowerer(method.params)
    lw.block(method.body)
    seq = UsageSequence(source_id_for(path, method.name), tuple(lw.events))
    validate(seq)
    return seq


def lower(unit: SourceUnit) -> list[UsageSequence]:
    """One usage sequence per method, in source order."""
    return [lower_method(m, unit.path) for m in unit.methods]


def load_source(text: Union[str, bytes], path: str = "") -> list[UsageSequence]:
    return lower(parse(text, path))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_INT_FOR_BUCKET = {"neg": "-1", "zero": "0", "pos": "1"}


def _method_name(source_id: str) -> str:
    name = source_id.rpartition(":")[2]
    return name if _IDENT_RE.match(name) and name not in KEYWORDS else "m"


def _variable_types(seq: UsageSequence) -> dict[str, str]:
    types: dict[str, str] = {}
    for ev in seq.events:
        if isinstance(ev, Call):
            if ev.receiver_var is not None:
                types.setdefault(ev.receiver_var, ev.id.receiver_type)
            if ev.result_var is not None and ev.id.is_constructor:
                types.setdefault(ev.result_var, ev.id.receiver_type)
            for a in ev.args:
                if a.kind == "var":
                    types.setdefault(a.name, a.value)
    return types


def _used_vars(ev: UsageEvent) -> list[str]:
    if isinstance(ev, Call):
        used = [ev.receiver_var] if ev.receiver_var is not None else []
        return used + [a.name for a in ev.args if a.kind == "var"]
    if isinstance(ev, GuardOpen):
        return [ev.subject]
    return []


def _render_arg(a: ArgAbstraction) -> str:
    if a.kind == "null":
        return "null"
    if a.kind == "int":
        return _INT_FOR_BUCKET[a.value]
    if a.kind == "bool":
        return a.value
    if a.kind == "str":
        return f'"{_escape(a.value)}"'
    if a.kind == "var":
        return a.name
    raise ValueError("call-result arguments have no source rendering")


def _render_call(ev: Call) -> str:
    args = ", ".join(_render_arg(a) for a in ev.args)
    if ev.id.is_constructor:
        if ev.receiver_var is not None:
            raise ValueError("constructor call with a receiver has no source rendering")
        return f"new {ev.id.receiver_type}({args})"
    if ev.receiver_var is None:
        raise ValueError("method call without a receiver has no source rendering")
    return f"{ev.receiver_var}.{ev.id.method_name}({args})"


def render(seq: UsageSequence) -> str:
    """Emit mini-language source whose lowering is ``seq`` again."""
    validate(seq)
    types = _variable_types(seq)
    assigned: set[str] = set()
    params: list[str] = []
    for ev in seq.events:
        for v in _used_vars(ev):
            if v not in assigned and v not in params:
                params.append(v)
        if isinstance(ev, Call) and ev.result_var is not None:
            assigned.add(ev.result_var)

    lines = []
    indent = 1
    try_stack: list[tuple[str, ...]] = []
    events = seq.events
    i = 0
    while i < len(events):
        ev = events[i]
        pad = "  " * indent
        if isinstance(ev, Call):
            nxt = events[i + 1] if i + 1 < len(events) else None
            if isinstance(nxt, GuardOpen) and nxt.kind.kind == "state" and nxt.kind.state_call == ev.id \
                    and nxt.subject == ev.receiver_var and ev.result_var is None:
                lines.append(f"{pad}if ({_render_call(ev)}) {{")
                indent += 1
                i += 2
                continue
            stmt = _render_call(ev)
            if ev.result_var is not None:
                stmt = f"{types.get(ev.result_var, 'Object')} {ev.result_var} = {stmt}"
            lines.append(f"{pad}{stmt};")
        elif isinstance(ev, GuardOpen):
            rhs = "null" if ev.kind.kind == "null" else "0"
            lines.append(f"{pad}if ({ev.subject} != {rhs}) {{")
            indent += 1
        elif isinstance(ev, TryOpen):
            lines.append(f"{pad}try {{")
            try_stack.append(ev.caught)
            indent += 1
        else:
            indent -= 1
            pad = "  " * indent
            if isinstance(ev, GuardClose):
                lines.append(f"{pad}}}")
            else:
                caught = try_stack.pop()
                clauses = " ".join(
                    f"catch ({t} _e{len(try_stack)}_{n}) {{ }}" for n, t in enumerate(caught)
                )
                lines.append(f"{pad}}} {clauses}")
        i += 1

    signature = ", ".join(f"{types.get(v, 'Object')} {v}" for v in params)
    name = _method_name(seq.source_id)
    if not lines:
        return f"void {name}({signature}) {{ }}\n"
    return f"void {name}({signature}) {{\n" + "\n".join(lines) + "\n}\n"

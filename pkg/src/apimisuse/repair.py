"""Bounded-depth search for edit scripts that remove every finding.

The search follows the classic recursive scheme: detect, stop if clean,
otherwise (while under the edit budget) generate candidate actions from the
findings, apply each, and recurse. It is run level by level with a visited
set keyed on the canonical IR text, which reaches exactly the same states as
the plain recursion but never expands a state twice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Union

from .detector import DEFAULT_THETA, Finding, Thresholds, findings_from_reports, report
from .ir import (
    ApiMethodId,
    ArgAbstraction,
    Call,
    GuardClose,
    GuardKind,
    GuardOpen,
    IrError,
    PostCheckKind,
    TryClose,
    TryOpen,
    FactorKind,
    UsageSequence,
    arg_slot,
    context_of,
    establishes_state_guard,
    matching_close,
    slot_variable,
    validate,
    write_ir,
)
from .models import START, ModelBundle

DEFAULT_MAX_LENGTH = 3
DEFAULT_K = 3


class InvalidTarget(ValueError):
    pass


class EmptyFindings(ValueError):
    pass


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


def _call_text(c: Call) -> str:
    args = ",".join(a.encode() for a in c.args)
    recv = c.receiver_var or "-"
    result = c.result_var or "-"
    return f"{c.id} recv={recv} result={result} args={args}"


@dataclass(frozen=True)
class InsertCallBefore:
    target: int
    call: Call

    def describe(self) -> str:
        return f"InsertCallBefore @ call {self.target} {_call_text(self.call)}"


@dataclass(frozen=True)
class InsertGuard:
    target: int
    slot: str
    guard: GuardKind

    def describe(self) -> str:
        return f"InsertGuard @ call {self.target} {self.slot} {self.guard.encode()}"


@dataclass(frozen=True)
class InsertPostCheck:
    target: int
    kind: PostCheckKind

    def describe(self) -> str:
        return f"InsertPostCheck @ call {self.target} {self.kind.value}"


@dataclass(frozen=True)
class ReplaceArg:
    target: int
    slot: str
    arg: ArgAbstraction

    def describe(self) -> str:
        return f"ReplaceArg @ call {self.target} {self.slot} {self.arg.encode()}"


@dataclass(frozen=True)
class WrapTryCatch:
    target: int
    exceptions: tuple[str, ...]

    def describe(self) -> str:
        return f"WrapTryCatch @ call {self.target} {','.join(self.exceptions)}"


@dataclass(frozen=True)
class DeleteCall:
    target: int

    def describe(self) -> str:
        return f"DeleteCall @ call {self.target}"


RepairAction = Union[InsertCallBefore, InsertGuard, InsertPostCheck, ReplaceArg, WrapTryCatch, DeleteCall]

EditScript = tuple  # tuple[RepairAction, ...]


def script_text(script: EditScript) -> str:
    return "\n".join(f"EDIT {n}: {a.describe()}" for n, a in enumerate(script, start=1))


# ---------------------------------------------------------------------------
# Variable synthesis
# ---------------------------------------------------------------------------


def _all_vars(seq: UsageSequence) -> set[str]:
    names = set()
    for ev in seq.events:
        if isinstance(ev, Call):
            names.update(v for v in (ev.receiver_var, ev.result_var) if v)
            names.update(a.name for a in ev.args if a.kind == "var")
        elif isinstance(ev, GuardOpen):
            names.add(ev.subject)
    return names


def fresh_name(seq: UsageSequence, prefix: str, taken: set[str] = frozenset()) -> str:
    used = _all_vars(seq) | set(taken)
    n = 0
    while f"{prefix}{n}" in used:
        n += 1
    return f"{prefix}{n}"


def _typed_occurrences(seq: UsageSequence) -> list[tuple[int, str, str]]:
    """(event index, variable, type) for every place a variable's type is visible."""
    out = []
    for i, ev in enumerate(seq.events):
        if not isinstance(ev, Call):
            continue
        if ev.receiver_var is not None:
            out.append((i, ev.receiver_var, ev.id.receiver_type))
        for a in ev.args:
            if a.kind == "var":
                out.append((i, a.name, a.value))
        if ev.result_var is not None and ev.id.is_constructor:
            out.append((i, ev.result_var, ev.id.receiver_type))
    return out


def _assigned_before(seq: UsageSequence, var: str, index: int) -> bool:
    return any(isinstance(e, Call) and e.result_var == var for e in seq.events[:index])


def variable_of_type(seq: UsageSequence, type_name: str, index: int) -> Optional[str]:
    """Most recent variable of ``type_name`` seen before ``index``, else the
    first one seen anywhere."""
    occ = [(i, v) for i, v, t in _typed_occurrences(seq) if t == type_name]
    before = [v for i, v in occ if i < index]
    if before:
        return before[-1]
    return occ[0][1] if occ else None


def _unbound_variable_of_type(seq: UsageSequence, type_name: str, index: int) -> Optional[str]:
    for i, v, t in _typed_occurrences(seq):
        if i >= index and t == type_name and not _assigned_before(seq, v, index):
            return v
    return None


def _materialize(seq: UsageSequence, key: str, index: int, taken: set[str]) -> ArgAbstraction:
    if key.startswith("var:"):
        type_name = key[4:]
        name = variable_of_type(seq, type_name, index) or fresh_name(seq, "_v", taken)
        taken.add(name)
        return ArgAbstraction.var(type_name, name)
    return ArgAbstraction.decode(key)


def _top_keys(table, *prefix: str) -> list[tuple[int, str]]:
    """(count, last key field) pairs under ``prefix``, most frequent first."""
    return sorted(((c, k[-1]) for k, c in table.with_prefix(*prefix)), key=lambda ck: (-ck[0], ck[1]))


def synthesize_call(bundle: ModelBundle, seq: UsageSequence, target: int, method: ApiMethodId) -> Call:
    """Build a call to ``method`` to be inserted before the call at ``target``."""
    c = seq.events[target]
    ms = str(method)
    taken: set[str] = set()
    receiver = None
    if not method.is_constructor:
        if method.receiver_type == c.id.receiver_type and c.receiver_var is not None:
            receiver = c.receiver_var
        else:
            receiver = variable_of_type(seq, method.receiver_type, target) or fresh_name(seq, "_v")
        taken.add(receiver)
    args = []
    for i in range(method.arity):
        top = [key for _, key in _top_keys(bundle.argvalue, ms, arg_slot(i)) if key != "call"]
        args.append(_materialize(seq, top[0], target, taken) if top else ArgAbstraction.null())
    result = None
    if method.is_constructor:
        result = _unbound_variable_of_type(seq, method.receiver_type, target) or fresh_name(seq, "_r", taken)
    elif (
        c.receiver_var is not None
        and method.receiver_type != c.id.receiver_type
        and not _assigned_before(seq, c.receiver_var, target)
    ):
        result = c.receiver_var
    elif any(k != PostCheckKind.IGNORED.value for _, k in _top_keys(bundle.postcondition, ms)):
        result = fresh_name(seq, "_r", taken)
    return Call(method, receiver, tuple(args), result)


# ---------------------------------------------------------------------------
# Applying actions
# ---------------------------------------------------------------------------

_GUARD_FOR_POST = {
    PostCheckKind.COMPARED_TO_CONSTANT: GuardKind("const"),
    PostCheckKind.NULL_CHECKED: GuardKind("null"),
}


def apply(seq: UsageSequence, action: RepairAction) -> UsageSequence:
    """Return a new sequence with ``action`` applied; ``seq`` is untouched."""
    events = list(seq.events)
    t = action.target
    if not 0 <= t < len(events) or not isinstance(events[t], Call):
        raise InvalidTarget(f"event {t} is not a call")
    target: Call = events[t]

    if isinstance(action, InsertCallBefore):
        events.insert(t, action.call)
    elif isinstance(action, DeleteCall):
        if establishes_state_guard(events, t):
            close = matching_close(events, t + 1)
            del events[close]
            del events[t : t + 2]
        else:
            del events[t]
    elif isinstance(action, InsertGuard):
        try:
            var = slot_variable(target, action.slot)
        except (ValueError, IndexError):
            raise InvalidTarget(f"no slot {action.slot}") from None
        if var is None or action.guard.kind == "none":
            raise InvalidTarget(f"slot {action.slot} cannot be guarded")
        opening = [GuardOpen(action.guard, var)]
        if action.guard.kind == "state":
            state = action.guard.state_call
            if state.arity != 0:
                raise InvalidTarget("state checks with arguments cannot be synthesized")
            opening.insert(0, Call(state, var, (), None))
        events[t : t + 1] = opening + [target, GuardClose()]
    elif isinstance(action, InsertPostCheck):
        if action.kind not in _GUARD_FOR_POST:
            raise InvalidTarget("only comparisons and null checks can be inserted")
        result = target.result_var
        if result is None:
            result = fresh_name(seq, "_r")
            events[t] = replace(target, result_var=result)
        events.insert(t + 1, GuardClose())
        events.insert(t + 1, GuardOpen(_GUARD_FOR_POST[action.kind], result))
    elif isinstance(action, ReplaceArg):
        i = int(action.slot[3:]) if action.slot.startswith("arg") else -1
        if not 0 <= i < len(target.args):
            raise InvalidTarget(f"no slot {action.slot}")
        args = list(target.args)
        args[i] = action.arg
        events[t] = replace(target, args=tuple(args))
    elif isinstance(action, WrapTryCatch):
        if not action.exceptions:
            raise InvalidTarget("nothing to catch")
        events[t : t + 1] = [TryOpen(action.exceptions), target, TryClose()]
    else:  # pragma: no cover
        raise TypeError(action)

    out = seq.replace_events(events)
    try:
        validate(out)
    except IrError as exc:
        raise InvalidTarget(f"action would break the sequence: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# Action generation
# ---------------------------------------------------------------------------


def _family(bundle: ModelBundle, seq: UsageSequence, f: Finding) -> list[tuple[int, RepairAction]]:
    """Candidate actions for one finding with the training count backing each."""
    t = f.call_index
    call: Call = seq.events[t]
    ctx = context_of(seq, t)
    ms = str(call.id)
    out: list[tuple[int, RepairAction]] = []
    if f.factor is FactorKind.TEMPORAL_ORDER:
        current = START if ctx.predecessor is None else str(ctx.predecessor)
        for (pred, m), count in bundle.temporal.items():
            if m == ms and pred not in (START, current):
                new = synthesize_call(bundle, seq, t, ApiMethodId.parse(pred))
                out.append((count, InsertCallBefore(t, new)))
    elif f.factor is FactorKind.PRECONDITION:
        for slot, observed in ctx.guards:
            if slot_variable(call, slot) is None:
                continue
            for (_, _, g), count in bundle.precondition.with_prefix(ms, slot):
                if g not in ("none", observed.encode()):
                    out.append((count, InsertGuard(t, slot, GuardKind.decode(g))))
    elif f.factor is FactorKind.POSTCONDITION:
        for (_, kind), count in bundle.postcondition.with_prefix(ms):
            if kind not in (ctx.post_check.value, PostCheckKind.IGNORED.value):
                out.append((count, InsertPostCheck(t, PostCheckKind(kind))))
    elif f.factor is FactorKind.ARGUMENT_VALUE:
        for i, observed in enumerate(ctx.args):
            slot = arg_slot(i)
            for (_, _, key), count in bundle.argvalue.with_prefix(ms, slot):
                if key not in (observed.key, "call"):
                    out.append((count, ReplaceArg(t, slot, _materialize(seq, key, t, set()))))
    else:
        handled = set(ctx.handled_exceptions)
        best: dict[tuple[str, ...], int] = {}
        for (_, pattern), count in bundle.exception.with_prefix(ms):
            if pattern == ctx.exception_pattern or pattern == "-":
                continue
            missing = tuple(sorted(set(pattern.split(",")) - handled))
            if missing:
                best[missing] = max(best.get(missing, 0), count)
        out.extend((count, WrapTryCatch(t, types)) for types, count in best.items())
    return out


def generate_repair_actions(
    bundle: ModelBundle, seq: UsageSequence, findings: list[Finding], k: int = DEFAULT_K
) -> list[RepairAction]:
    """Up to ``k`` most-supported actions per finding (plus a deletion for
    temporal findings), deduplicated, in a deterministic order."""
    if not findings:
        raise EmptyFindings("no findings to repair")
    if k < 1:
        raise ValueError("k must be at least 1")
    actions: list[RepairAction] = []
    seen: set[str] = set()
    for f in findings:
        ranked = sorted(_family(bundle, seq, f), key=lambda ca: (-ca[0], ca[1].describe()))
        chosen = []
        for _, action in ranked:
            if len(chosen) == k:
                break
            try:
                apply(seq, action)
            except InvalidTarget:
                continue
            chosen.append(action)
        if f.factor is FactorKind.TEMPORAL_ORDER:
            chosen.append(DeleteCall(f.call_index))
        for action in chosen:
            text = action.describe()
            if text not in seen:
                seen.add(text)
                actions.append(action)
    return actions


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    script: EditScript
    sequence: UsageSequence
    geometric_mean: float

    @property
    def edits(self) -> int:
        return len(self.script)

    @property
    def score(self) -> tuple[int, float, str]:
        return (self.edits, self.geometric_mean, script_text(self.script))


@dataclass(frozen=True)
class RepairResult:
    candidates: tuple[Candidate, ...]
    explored: int

    @property
    def status(self) -> str:
        if not self.candidates:
            return "unrepairable"
        return "clean" if self.candidates[0].edits == 0 else "repaired"


def geometric_mean(bundle: ModelBundle, seq: UsageSequence) -> float:
    logs = [math.log(p.value) for r in report(bundle, seq) for p in r.probabilities]
    if not logs:
        return 1.0
    return math.exp(math.fsum(logs) / len(logs))


def correct(
    bundle: ModelBundle,
    seq: UsageSequence,
    theta=DEFAULT_THETA,
    max_length: int = DEFAULT_MAX_LENGTH,
    k: int = DEFAULT_K,
) -> RepairResult:
    if max_length < 0:
        raise ValueError("max_length must be non-negative")
    thresholds = Thresholds.of(theta)
    visited = {write_ir(seq)}
    frontier: list[tuple[UsageSequence, EditScript]] = [(seq, ())]
    found: list[tuple[EditScript, UsageSequence]] = []
    explored = 0
    depth = 0
    while frontier:
        level: dict[str, tuple[UsageSequence, EditScript, str]] = {}
        for state, script in frontier:
            explored += 1
            findings = findings_from_reports(state.source_id, report(bundle, state), thresholds)
            if not findings:
                found.append((script, state))
                continue
            if depth >= max_length:
                continue
            for action in generate_repair_actions(bundle, state, findings, k):
                child = apply(state, action)
                key = write_ir(child)
                if key in visited:
                    continue
                child_script = script + (action,)
                text = script_text(child_script)
                prev = level.get(key)
                if prev is None or text < prev[2]:
                    level[key] = (child, child_script, text)
        visited.update(level)
        frontier = [(s, sc) for s, sc, _ in sorted(level.values(), key=lambda v: v[2])]
        depth += 1

    candidates = [Candidate(script, s, geometric_mean(bundle, s)) for script, s in found]
    candidates.sort(key=lambda c: (c.edits, -c.geometric_mean, script_text(c.script)))
    return RepairResult(tuple(candidates), explored)


def format_candidate(rank: int, cand: Candidate, source: Optional[str] = None) -> str:
    lines = [f"candidate {rank}: edits={cand.edits} geomean={cand.geometric_mean:.6f}"]
    if cand.script:
        lines.append(script_text(cand.script))
    if source is not None:
        lines.append(source.rstrip("\n"))
    return "\n".join(lines) + "\n"

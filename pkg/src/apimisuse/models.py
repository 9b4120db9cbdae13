"""Count tables for the five usage factors and their smoothed ratios.

Every factor probability has the form ``(matching + 1) / (conditioning + 1)``
over integer counts. The ratio is deliberately not a normalized distribution:
for a fixed conditioning count the values over all observations sum to more
than one. Values are kept as :class:`fractions.Fraction` so that threshold
comparisons are exact.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Iterable, Optional

from .ir import (
    ApiMethodId,
    CallContext,
    FactorKind,
    UsageSequence,
    arg_slot,
    contexts,
    decode_text,
    encode_text,
)

MODEL_MAGIC = "SAMMODEL"
MODEL_VERSION = 1
START = "<s>"  # pseudo-predecessor of the first call in a sequence

TABLES = (
    "unigram",
    "temporal",
    "precondition",
    "precond_slot_totals",
    "postcondition",
    "argvalue",
    "argvalue_slot_totals",
    "exception",
)
KEY_WIDTH = {
    "unigram": 1,
    "temporal": 2,
    "precondition": 3,
    "precond_slot_totals": 2,
    "postcondition": 2,
    "argvalue": 3,
    "argvalue_slot_totals": 2,
    "exception": 2,
}


class CorruptModel(Exception):
    def __init__(self, line: int, message: str = "corrupt model file"):
        super().__init__(f"line {line}: {message}")
        self.line = line


class VersionMismatch(Exception):
    pass


class CountTable(Counter):
    """Counter keyed by tuples of strings; zero entries are never stored."""

    def count(self, *key: str) -> int:
        return self.get(key, 0)

    def total_for(self, *prefix: str) -> int:
        n = len(prefix)
        return sum(c for k, c in self.items() if k[:n] == prefix)

    def merged(self, other: "CountTable") -> "CountTable":
        out = CountTable(self)
        out.update(other)
        return out

    def with_prefix(self, *prefix: str) -> list[tuple[tuple[str, ...], int]]:
        n = len(prefix)
        return sorted((k, c) for k, c in self.items() if k[:n] == prefix)


@dataclass(frozen=True)
class FactorProbability:
    kind: FactorKind
    value: Fraction

    def __float__(self):
        return float(self.value)


def _tables() -> dict[str, CountTable]:
    return {name: CountTable() for name in TABLES}


@dataclass
class ModelBundle:
    version: int = MODEL_VERSION
    tables: dict[str, CountTable] = field(default_factory=_tables)
    trained_sequences: int = 0

    def __getattr__(self, name):
        # expose tables as attributes: bundle.temporal, bundle.unigram, ...
        tables = self.__dict__.get("tables")
        if tables is not None and name in tables:
            return tables[name]
        raise AttributeError(name)

    def __eq__(self, other):
        if not isinstance(other, ModelBundle):
            return NotImplemented
        return (
            self.version == other.version
            and self.trained_sequences == other.trained_sequences
            and all(dict(self.tables[t]) == dict(other.tables[t]) for t in TABLES)
        )

    def observe(self, method: ApiMethodId, ctx: CallContext) -> None:
        m = str(method)
        t = self.tables
        t["unigram"][(m,)] += 1
        pred = START if ctx.predecessor is None else str(ctx.predecessor)
        t["temporal"][(pred, m)] += 1
        for slot, guard in ctx.guards:
            t["precondition"][(m, slot, guard.encode())] += 1
            t["precond_slot_totals"][(m, slot)] += 1
        t["postcondition"][(m, ctx.post_check.value)] += 1
        for i, a in enumerate(ctx.args):
            t["argvalue"][(m, arg_slot(i), a.key)] += 1
            t["argvalue_slot_totals"][(m, arg_slot(i))] += 1
        t["exception"][(m, ctx.exception_pattern)] += 1

    def add_sequence(self, seq: UsageSequence) -> None:
        for method, ctx in contexts(seq):
            self.observe(method, ctx)
        self.trained_sequences += 1


def train(corpus: Iterable[UsageSequence]) -> ModelBundle:
    bundle = ModelBundle()
    for seq in corpus:
        bundle.add_sequence(seq)
    return bundle


def merge(a: ModelBundle, b: ModelBundle) -> ModelBundle:
    if a.version != b.version:
        raise VersionMismatch(f"cannot merge model versions {a.version} and {b.version}")
    return ModelBundle(
        a.version,
        {t: a.tables[t].merged(b.tables[t]) for t in TABLES},
        a.trained_sequences + b.trained_sequences,
    )


# ---------------------------------------------------------------------------
# Factor probabilities
# ---------------------------------------------------------------------------


def smoothed(matching: int, conditioning: int) -> Fraction:
    return Fraction(matching + 1, conditioning + 1)


def p_temporal(bundle: ModelBundle, predecessor: Optional[ApiMethodId], m: ApiMethodId) -> FactorProbability:
    pred = START if predecessor is None else str(predecessor)
    ms = str(m)
    value = smoothed(bundle.temporal.count(pred, ms), bundle.unigram.count(ms))
    return FactorProbability(FactorKind.TEMPORAL_ORDER, value)


def p_precondition(bundle: ModelBundle, m: ApiMethodId, ctx: CallContext) -> FactorProbability:
    ms = str(m)
    value = Fraction(1)
    for slot, guard in ctx.guards:
        value *= smoothed(
            bundle.precondition.count(ms, slot, guard.encode()),
            bundle.precond_slot_totals.count(ms, slot),
        )
    return FactorProbability(FactorKind.PRECONDITION, value)


def p_postcondition(bundle: ModelBundle, m: ApiMethodId, ctx: CallContext) -> FactorProbability:
    ms = str(m)
    value = smoothed(bundle.postcondition.count(ms, ctx.post_check.value), bundle.unigram.count(ms))
    return FactorProbability(FactorKind.POSTCONDITION, value)


def p_argvalue(bundle: ModelBundle, m: ApiMethodId, ctx: CallContext) -> FactorProbability:
    ms = str(m)
    value = Fraction(1)
    for i, a in enumerate(ctx.args):
        slot = arg_slot(i)
        value *= smoothed(
            bundle.argvalue.count(ms, slot, a.key), bundle.argvalue_slot_totals.count(ms, slot)
        )
    return FactorProbability(FactorKind.ARGUMENT_VALUE, value)


def p_exception(bundle: ModelBundle, m: ApiMethodId, ctx: CallContext) -> FactorProbability:
    ms = str(m)
    value = smoothed(bundle.exception.count(ms, ctx.exception_pattern), bundle.unigram.count(ms))
    return FactorProbability(FactorKind.EXCEPTION, value)


def factor_probabilities(bundle: ModelBundle, m: ApiMethodId, ctx: CallContext) -> tuple[FactorProbability, ...]:
    """All five factor probabilities, in :class:`FactorKind` order."""
    return (
        p_temporal(bundle, ctx.predecessor, m),
        p_precondition(bundle, m, ctx),
        p_postcondition(bundle, m, ctx),
        p_argvalue(bundle, m, ctx),
        p_exception(bundle, m, ctx),
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _encode_key_field(s: str) -> str:
    # keys never contain whitespace except inside string literals, which are
    # already percent-encoded; encode defensively anyway
    return s if s and not any(c.isspace() or c == "%" for c in s) else encode_text(s)


def dumps(bundle: ModelBundle) -> str:
    lines = [f"{MODEL_MAGIC} {bundle.version}", f"sequences {bundle.trained_sequences}"]
    for name in TABLES:
        for key, count in sorted(bundle.tables[name].items()):
            fields = "\t".join(_encode_key_field(k) for k in key)
            lines.append(f"{name}\t{fields}\t{count}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> ModelBundle:
    lines = text.split("\n")
    if not lines or not lines[0].startswith(MODEL_MAGIC + " "):
        raise CorruptModel(1, "missing SAMMODEL header")
    version = lines[0][len(MODEL_MAGIC) + 1 :]
    if not version.isdigit():
        raise CorruptModel(1, "bad version")
    if int(version) != MODEL_VERSION:
        raise VersionMismatch(f"model version {version}, expected {MODEL_VERSION}")
    if len(lines) < 2 or not lines[1].startswith("sequences "):
        raise CorruptModel(2, "missing sequence count")
    n = lines[1][len("sequences ") :]
    if not n.isdigit():
        raise CorruptModel(2, "bad sequence count")
    if lines[-1] != "":
        raise CorruptModel(len(lines), "truncated (missing final newline)")
    bundle = ModelBundle(trained_sequences=int(n))
    last_table = 0
    for lineno, line in enumerate(lines[2:-1], start=3):
        parts = line.split("\t")
        name = parts[0]
        if name not in KEY_WIDTH or len(parts) != KEY_WIDTH[name] + 2:
            raise CorruptModel(lineno, f"bad entry {line!r}")
        order = TABLES.index(name)
        if order < last_table:
            raise CorruptModel(lineno, "tables out of order")
        last_table = order
        count = parts[-1]
        if not count.isdigit() or int(count) == 0:
            raise CorruptModel(lineno, f"bad count {count!r}")
        try:
            key = tuple(decode_text(k) if "%" in k else k for k in parts[1:-1])
        except UnicodeDecodeError:
            raise CorruptModel(lineno, "bad key encoding") from None
        if key in bundle.tables[name]:
            raise CorruptModel(lineno, "duplicate key")
        bundle.tables[name][key] = int(count)
    return bundle


def save(bundle: ModelBundle, sink: IO[str]) -> None:
    sink.write(dumps(bundle))


def load(source: IO[str]) -> ModelBundle:
    return loads(source.read())

"""Flag call sites whose usage-factor probability falls below a threshold."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Union

from .ir import ApiMethodId, CallContext, FactorKind, UsageSequence, contexts
from .models import FactorProbability, ModelBundle, factor_probabilities

DEFAULT_THETA = "0.1"


class InvalidThreshold(ValueError):
    pass


def as_fraction(value: Union[str, float, int, Fraction]) -> Fraction:
    # go through the decimal text so that 0.1 means exactly 1/10
    if isinstance(value, Fraction):
        return value
    return Fraction(str(value))


@dataclass(frozen=True)
class Thresholds:
    """A global threshold with optional per-factor overrides."""

    default: Fraction = Fraction(DEFAULT_THETA)
    overrides: tuple[tuple[FactorKind, Fraction], ...] = ()

    def __post_init__(self):
        for theta in [self.default] + [t for _, t in self.overrides]:
            if not 0 < theta < 1:
                raise InvalidThreshold(f"threshold must lie in (0, 1), got {theta}")

    @classmethod
    def of(cls, theta=DEFAULT_THETA, overrides: Optional[Mapping] = None) -> "Thresholds":
        if isinstance(theta, Thresholds):
            return theta
        items = []
        for k, v in (overrides or {}).items():
            kind = k if isinstance(k, FactorKind) else FactorKind(k)
            items.append((kind, as_fraction(v)))
        items.sort(key=lambda kv: kv[0].order)
        return cls(as_fraction(theta), tuple(items))

    def for_factor(self, kind: FactorKind) -> Fraction:
        return dict(self.overrides).get(kind, self.default)

    def __str__(self):
        return _decimal(self.default)


def _decimal(x: Fraction) -> str:
    f = float(x)
    return repr(f) if Fraction(repr(f)) == x else f"{x.numerator}/{x.denominator}"


@dataclass(frozen=True)
class FactorReport:
    call_index: int
    method: ApiMethodId
    context: CallContext
    probabilities: tuple[FactorProbability, ...]


@dataclass(frozen=True)
class Finding:
    source_id: str
    call_index: int
    method: ApiMethodId
    factor: FactorKind
    probability: Fraction
    threshold: Fraction = field(default=Fraction(DEFAULT_THETA))

    def format(self) -> str:
        return (
            f"{self.source_id}:{self.call_index} {self.method} {self.factor.value} "
            f"p={float(self.probability):.6f} θ={_decimal(self.threshold)}"
        )

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "call_index": self.call_index,
            "method": str(self.method),
            "factor": self.factor.value,
            "probability": f"{self.probability.numerator}/{self.probability.denominator}",
            "probability_decimal": round(float(self.probability), 6),
            "threshold": _decimal(self.threshold),
        }


def report(bundle: ModelBundle, seq: UsageSequence) -> list[FactorReport]:
    return [
        FactorReport(ctx.call_index, m, ctx, factor_probabilities(bundle, m, ctx))
        for m, ctx in contexts(seq)
    ]


def findings_from_reports(source_id: str, reports: list[FactorReport], thresholds: Thresholds) -> list[Finding]:
    out = []
    for r in reports:
        for p in r.probabilities:
            theta = thresholds.for_factor(p.kind)
            if p.value < theta:
                out.append(Finding(source_id, r.call_index, r.method, p.kind, p.value, theta))
    return out


def detect(bundle: ModelBundle, seq: UsageSequence, theta=DEFAULT_THETA) -> list[Finding]:
    """Findings ordered by call index, then factor order. Empty means clean."""
    return findings_from_reports(seq.source_id, report(bundle, seq), Thresholds.of(theta))


def format_findings(findings: list[Finding]) -> str:
    return "".join(f.format() + "\n" for f in findings)


def findings_json(findings: list[Finding]) -> str:
    return json.dumps([f.to_dict() for f in findings], indent=2, ensure_ascii=False) + "\n"

"""Statistical detection and repair of API misuses.

Typical use::

    from apimisuse import load_source, train, detect, correct

    bundle = train(corpus_sequences)
    [seq] = load_source(text)
    findings = detect(bundle, seq)
    result = correct(bundle, seq)
"""

from .detector import Finding, Thresholds, detect, report
from .ir import ApiMethodId, UsageSequence, contexts, read_ir, write_ir
from .minilang import load_source, parse, render
from .models import ModelBundle, load, merge, save, train
from .repair import RepairResult, apply, correct, generate_repair_actions

__all__ = [
    "ApiMethodId",
    "Finding",
    "ModelBundle",
    "RepairResult",
    "Thresholds",
    "UsageSequence",
    "apply",
    "contexts",
    "correct",
    "detect",
    "generate_repair_actions",
    "load",
    "load_source",
    "merge",
    "parse",
    "read_ir",
    "render",
    "report",
    "save",
    "train",
    "write_ir",
]

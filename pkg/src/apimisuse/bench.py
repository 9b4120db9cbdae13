"""Synthetic corpora, seeded misuse benchmarks and scoring.

Clean code comes from a small library of usage patterns written in the
mini-language. Each benchmark case takes a fresh instantiation, applies one
category-specific mutation, and records the single edit that undoes it.
"""

from __future__ import annotations

import json
import random
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .detector import DEFAULT_THETA, Thresholds, detect
from .ir import (
    CONST_CHECK,
    NULL_CHECK,
    ApiMethodId,
    ArgAbstraction,
    Call,
    FactorKind,
    GuardClose,
    GuardKind,
    GuardOpen,
    PostCheckKind,
    TryClose,
    TryOpen,
    UsageSequence,
    establishes_state_guard,
    matching_close,
    slots_of,
    slot_variable,
    write_ir,
)
from .minilang import lower_method, parse, render
from .models import ModelBundle
from .repair import (
    DEFAULT_K,
    DEFAULT_MAX_LENGTH,
    InsertCallBefore,
    InsertGuard,
    InsertPostCheck,
    ReplaceArg,
    WrapTryCatch,
    apply,
    correct,
    script_text,
)

# Root-cause counts of the 144-misuse study, in its table order.
CATEGORY_COUNTS = {
    "temporal": 75,
    "exception": 27,
    "precondition": 22,
    "postcondition": 15,
    "argument": 5,
}
CATEGORIES = tuple(CATEGORY_COUNTS)
CATEGORY_FACTOR = {
    "temporal": FactorKind.TEMPORAL_ORDER,
    "exception": FactorKind.EXCEPTION,
    "precondition": FactorKind.PRECONDITION,
    "postcondition": FactorKind.POSTCONDITION,
    "argument": FactorKind.ARGUMENT_VALUE,
}

NOISE_RATE = 0.5
MAX_ATTEMPTS = 50


class NotEligible(ValueError):
    def __init__(self, category: str):
        super().__init__(f"no call eligible for a {category} mutation")
        self.category = category


# ---------------------------------------------------------------------------
# Patterns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UsagePattern:
    """A clean usage written as a method body; ``$name`` marks variables."""

    pattern_id: str
    template: str

    @property
    def placeholders(self) -> list[str]:
        return sorted(set(re.findall(r"\$([A-Za-z_][A-Za-z0-9_]*)", self.template)))

    def instantiate(self, rng: random.Random, method_name: str, prefix: str = "") -> UsageSequence:
        names = {p: f"{p}{rng.randrange(100)}" for p in self.placeholders}
        body = string.Template(self.template).substitute(names)
        unit = parse(f"void {method_name}() {{\n{prefix}{body}}}\n")
        return lower_method(unit.methods[0])


PATTERNS: tuple[UsagePattern, ...] = (
    UsagePattern(
        "file_read",
        """
        File $f = new File("data.txt");
        Bytes $b = new Bytes(1024);
        if ($f != null) {
          FileInputStream $s = new FileInputStream($f);
        }
        try {
          int $n = $s.read($b);
        } catch (IOException $e) {
        }
        if ($n != -1) {
        }
        String $t = new String($b, "UTF8");
        """,
    ),
    UsagePattern(
        "iterator",
        """
        ArrayList $l = new ArrayList();
        $l.add("item");
        Iterator $i = $l.iterator();
        while ($i.hasNext()) {
          Object $o = $i.next();
        }
        """,
    ),
    UsagePattern(
        "string_builder",
        """
        StringBuilder $sb = new StringBuilder(16);
        $sb.append("key");
        String $r = $sb.toString();
        """,
    ),
    UsagePattern(
        "lock",
        """
        ReentrantLock $k = new ReentrantLock(true);
        $k.lock();
        $k.unlock();
        """,
    ),
    UsagePattern(
        "buffered_reader",
        """
        FileReader $fr = new FileReader("in.txt");
        BufferedReader $br = new BufferedReader($fr);
        try {
          String $line = $br.readLine();
        } catch (IOException $e) {
        }
        if ($line != null) {
        }
        $br.close();
        """,
    ),
    UsagePattern(
        "cursor",
        """
        Database $db = new Database("app.db");
        Cursor $c = $db.query("users");
        if ($c != null) {
          $c.moveToFirst();
        }
        $c.close();
        """,
    ),
    UsagePattern(
        "digest",
        """
        Buffer $buf = new Buffer(64);
        MessageDigest $md = new MessageDigest("SHA-256");
        $md.update($buf);
        Hash $h = $md.digest();
        """,
    ),
    UsagePattern(
        "number_parse",
        """
        Parser $p = new Parser(10);
        try {
          int $v = $p.parseInt("42");
        } catch (NumberFormatException $e) {
        }
        $p.reset();
        """,
    ),
    UsagePattern(
        "socket",
        """
        Socket $so = new Socket("example.org", 443);
        $so.setSoTimeout(5000);
        try {
          $so.connect();
        } catch (IOException $e) {
        }
        $so.close();
        """,
    ),
    UsagePattern(
        "scanner",
        """
        Scanner $sc = new Scanner("input");
        if ($sc.hasNextInt()) {
          int $v = $sc.nextInt();
        }
        $sc.close();
        """,
    ),
    UsagePattern(
        "map_lookup",
        """
        HashMap $m = new HashMap();
        $m.put("k", "v");
        Object $v = $m.get("k");
        if ($v != null) {
        }
        """,
    ),
    UsagePattern(
        "connection",
        """
        Connection $cn = new Connection("jdbc:db");
        if ($cn.isOpen()) {
          $cn.commit();
        }
        $cn.close();
        """,
    ),
    UsagePattern(
        "url",
        """
        try {
          URL $u = new URL("http://example.org");
        } catch (MalformedURLException $e) {
        }
        if ($u != null) {
          $u.openStream();
        }
        """,
    ),
)

NOISE = UsagePattern(
    "logger",
    """
    Logger $g = new Logger("app");
    $g.info("start");
    """,
)


def _noise_prefix(rng: random.Random) -> str:
    if rng.random() >= NOISE_RATE:
        return ""
    names = {p: f"{p}{rng.randrange(100)}" for p in NOISE.placeholders}
    return string.Template(NOISE.template).substitute(names)


def instantiate(pattern: UsagePattern, rng: random.Random, method_name: str) -> UsageSequence:
    """One clean instantiation: fresh variable names, maybe a noise prefix."""
    return _instantiate(pattern, rng, method_name)[0]


def _instantiate(pattern: UsagePattern, rng: random.Random, method_name: str) -> tuple[UsageSequence, int]:
    prefix = _noise_prefix(rng)
    seq = pattern.instantiate(rng, method_name, prefix)
    return seq, (2 if prefix else 0)


def gen_corpus(patterns: Sequence[UsagePattern] = PATTERNS, n: int = 500, seed: int = 0) -> list[UsageSequence]:
    if n < 1:
        raise ValueError("corpus size must be at least 1")
    rng = random.Random(f"corpus:{seed}")
    return [instantiate(rng.choice(patterns), rng, f"use{i}") for i in range(n)]


# ---------------------------------------------------------------------------
# Mutation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MisuseCase:
    category: str
    clean: UsageSequence
    faulty: UsageSequence
    ground_truth: tuple
    target: int  # call index of the mutated call in ``faulty``
    seed: str = ""
    pattern_id: str = ""

    @property
    def factor(self) -> FactorKind:
        return CATEGORY_FACTOR[self.category]


def _without(events, *positions) -> tuple:
    drop = set(positions)
    return tuple(e for i, e in enumerate(events) if i not in drop)


def _uses_later(events, var: str, start: int) -> bool:
    for e in events[start:]:
        if isinstance(e, Call):
            if e.receiver_var == var or any(a.kind == "var" and a.name == var for a in e.args):
                return True
            if e.result_var == var:
                return False
    return False


def _temporal_sites(events):
    sites = []
    for j, p in enumerate(events):
        if not isinstance(p, Call):
            continue
        if establishes_state_guard(events, j):
            close = matching_close(events, j + 1)
            inner = events[j + 2] if j + 2 < close else None
            if isinstance(inner, Call) and inner.receiver_var == p.receiver_var:
                faulty = _without(events, j, j + 1, close)
                gt = InsertGuard(j, "recv", GuardKind.state(p.id))
                sites.append((faulty, gt, j))
            continue
        c = events[j + 1] if j + 1 < len(events) else None
        if not isinstance(c, Call):
            continue
        ok = (
            p.result_var is None
            or (p.id.is_constructor and _uses_later(events, p.result_var, j + 1))
            or (
                not p.id.is_constructor
                and p.result_var == c.receiver_var
                and p.id.receiver_type != c.id.receiver_type
            )
        )
        if ok:
            sites.append((_without(events, j), InsertCallBefore(j, p), j))
    return sites


def _exception_sites(events):
    sites = []
    for j in range(len(events) - 2):
        if isinstance(events[j], TryOpen) and isinstance(events[j + 1], Call) and isinstance(events[j + 2], TryClose):
            sites.append((_without(events, j, j + 2), WrapTryCatch(j, events[j].caught), j))
    return sites


def _precondition_sites(events):
    sites = []
    for j in range(len(events) - 2):
        g, c, close = events[j : j + 3]
        if not (isinstance(g, GuardOpen) and g.kind.kind in ("null", "const")):
            continue
        if not (isinstance(c, Call) and isinstance(close, GuardClose)):
            continue
        slots = [s for s in slots_of(c) if slot_variable(c, s) == g.subject]
        if slots:
            sites.append((_without(events, j, j + 2), InsertGuard(j, slots[0], g.kind), j))
    return sites


def _postcondition_sites(events):
    sites = []
    for i, c in enumerate(events):
        if not isinstance(c, Call) or c.result_var is None:
            continue
        for j in (i + 1, i + 2):
            if j + 1 >= len(events):
                break
            g = events[j]
            if isinstance(g, GuardOpen) and g.subject == c.result_var:
                if g.kind.kind in ("null", "const") and isinstance(events[j + 1], GuardClose):
                    kind = PostCheckKind.NULL_CHECKED if g.kind.kind == "null" else PostCheckKind.COMPARED_TO_CONSTANT
                    sites.append((_without(events, j, j + 1), InsertPostCheck(i, kind), i))
                break
    return sites


_OOV_STRINGS = ("UTF-9", "latin-0", "x-unknown", "bogus", "??")
_OOV_INT = {"pos": -1, "neg": 1, "zero": -1}


def _argument_sites(events, rng: random.Random):
    sites = []
    for i, c in enumerate(events):
        if not isinstance(c, Call):
            continue
        for n, a in enumerate(c.args):
            if a.kind == "str":
                options = [s for s in _OOV_STRINGS if s != a.value]
                bad = ArgAbstraction.string(rng.choice(options))
            elif a.kind == "int":
                bad = ArgAbstraction.int_(_OOV_INT[a.value])
            elif a.kind == "bool":
                bad = ArgAbstraction.boolean(a.value != "true")
            else:
                continue
            args = list(c.args)
            args[n] = bad
            mutated = Call(c.id, c.receiver_var, tuple(args), c.result_var)
            faulty = events[:i] + (mutated,) + events[i + 1 :]
            sites.append((faulty, ReplaceArg(i, f"arg{n}", a), i))
    return sites


def eligible_sites(clean: UsageSequence, category: str, rng: Optional[random.Random] = None):
    rng = rng or random.Random(0)
    events = clean.events
    if category == "temporal":
        return _temporal_sites(events)
    if category == "exception":
        return _exception_sites(events)
    if category == "precondition":
        return _precondition_sites(events)
    if category == "postcondition":
        return _postcondition_sites(events)
    if category == "argument":
        return _argument_sites(events, rng)
    raise ValueError(f"unknown category {category!r}")


def inject(case_seed, clean: UsageSequence, category: str, first_event: int = 0) -> MisuseCase:
    """Apply one ``category`` mutation to ``clean``, chosen by ``case_seed``.

    Events before ``first_event`` are never mutated.
    """
    rng = random.Random(f"inject:{case_seed}")
    sites = [s for s in eligible_sites(clean, category, rng) if s[2] >= first_event]
    if not sites:
        raise NotEligible(category)
    faulty_events, gt, target = sites[rng.randrange(len(sites))]
    faulty = clean.replace_events(faulty_events)
    return MisuseCase(category, clean, faulty, (gt,), target, str(case_seed))


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------


def category_split(total: int) -> dict[str, int]:
    """Largest-remainder apportionment of ``total`` over the category mix,
    then at least one case per category."""
    if total < len(CATEGORIES):
        raise ValueError(f"total must be at least {len(CATEGORIES)}")
    grand = sum(CATEGORY_COUNTS.values())
    quotas = {c: total * n / grand for c, n in CATEGORY_COUNTS.items()}
    split = {c: int(q) for c, q in quotas.items()}
    by_remainder = sorted(CATEGORIES, key=lambda c: (-(quotas[c] - split[c]), CATEGORIES.index(c)))
    for c in by_remainder[: total - sum(split.values())]:
        split[c] += 1
    for c in CATEGORIES:
        if split[c] == 0:
            donor = max(CATEGORIES, key=lambda d: (split[d], -CATEGORIES.index(d)))
            split[donor] -= 1
            split[c] = 1
    return split


def _case_is_sound(bundle: ModelBundle, case: MisuseCase, theta) -> bool:
    if detect(bundle, case.clean, theta):
        return False
    if not detect(bundle, case.faulty, theta):
        return False
    fixed = case.faulty
    for action in case.ground_truth:
        fixed = apply(fixed, action)
    return not detect(bundle, fixed, theta)


@dataclass
class Benchmark:
    cases: list[MisuseCase]
    rejected: int = 0

    def __iter__(self):
        return iter(self.cases)

    def __len__(self):
        return len(self.cases)

    def category_counts(self) -> dict[str, int]:
        counts = {c: 0 for c in CATEGORIES}
        for case in self.cases:
            counts[case.category] += 1
        return counts


def make_benchmark(
    patterns: Sequence[UsagePattern] = PATTERNS,
    total: int = 144,
    seed: int = 0,
    bundle: Optional[ModelBundle] = None,
    theta=DEFAULT_THETA,
) -> Benchmark:
    """Seeded misuse cases in the study's category mix.

    With a trained ``bundle``, cases whose clean side is flagged, whose faulty
    side is not, or whose ground-truth edit does not clear every finding are
    rejected and regenerated; :attr:`Benchmark.rejected` counts them.
    """
    split = category_split(total)
    cases = []
    rejected = 0
    index = 0
    for category in CATEGORIES:
        for _ in range(split[category]):
            for attempt in range(MAX_ATTEMPTS):
                case_seed = f"{seed}:{index}:{attempt}"
                rng = random.Random(f"case:{case_seed}")
                pattern = rng.choice(patterns)
                clean, noise = _instantiate(pattern, rng, f"case{index}")
                try:
                    case = inject(case_seed, clean, category, first_event=noise)
                except NotEligible:
                    continue
                case = MisuseCase(
                    case.category, case.clean, case.faulty, case.ground_truth, case.target,
                    case.seed, pattern.pattern_id,
                )
                if bundle is not None and not _case_is_sound(bundle, case, theta):
                    rejected += 1
                    continue
                cases.append(case)
                break
            else:
                raise RuntimeError(f"could not generate a {category} case after {MAX_ATTEMPTS} attempts")
            index += 1
    return Benchmark(cases, rejected)


def write_case(case: MisuseCase, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "clean.mj").write_text(render(case.clean), encoding="utf-8")
    (directory / "faulty.mj").write_text(render(case.faulty), encoding="utf-8")
    (directory / "truth.edits").write_text(script_text(case.ground_truth) + "\n", encoding="utf-8")
    meta = f"category {case.category}\nseed {case.seed}\npattern {case.pattern_id}\ntarget {case.target}\n"
    (directory / "meta").write_text(meta, encoding="utf-8")


def write_benchmark(benchmark: Benchmark, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    for i, case in enumerate(benchmark.cases):
        write_case(case, out_dir / f"case_{i:03d}")


def write_corpus(corpus: Iterable[UsageSequence], out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, seq in enumerate(corpus):
        (out_dir / f"seq_{i:04d}.mj").write_text(render(seq), encoding="utf-8")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CaseResult:
    category: str
    detected: bool
    clean_findings: int
    repair_rank: Optional[int]  # 0-based rank of the ground-truth repair
    explored: int


def evaluate_case(bundle: ModelBundle, case: MisuseCase, theta=DEFAULT_THETA,
                  max_length: int = DEFAULT_MAX_LENGTH, k: int = DEFAULT_K) -> CaseResult:
    thresholds = Thresholds.of(theta)
    faulty_findings = detect(bundle, case.faulty, thresholds)
    detected = any(f.call_index == case.target and f.factor is case.factor for f in faulty_findings)
    clean_findings = len(detect(bundle, case.clean, thresholds))
    expected = case.faulty
    for action in case.ground_truth:
        expected = apply(expected, action)
    expected_ir = write_ir(expected)
    result = correct(bundle, case.faulty, thresholds, max_length, k)
    rank = next((n for n, c in enumerate(result.candidates) if write_ir(c.sequence) == expected_ir), None)
    return CaseResult(case.category, detected, clean_findings, rank, result.explored)


def _rate(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


@dataclass
class EvalMetrics:
    cases: int = 0
    detected: int = 0
    clean_findings: int = 0
    repaired_at_1: int = 0
    repaired_at_k: int = 0
    top: int = DEFAULT_K
    explored: int = 0
    rejected: int = 0
    per_category: dict = field(default_factory=dict)

    @property
    def recall(self) -> Optional[float]:
        return _rate(self.detected, self.cases)

    @property
    def precision(self) -> Optional[float]:
        return _rate(self.detected, self.detected + self.clean_findings)

    @property
    def repair_at_1(self) -> Optional[float]:
        return _rate(self.repaired_at_1, self.cases)

    @property
    def repair_at_k(self) -> Optional[float]:
        return _rate(self.repaired_at_k, self.cases)

    def to_dict(self) -> dict:
        out = {
            "cases": self.cases,
            "detected": self.detected,
            "clean_findings": self.clean_findings,
            "recall": self.recall,
            "precision": self.precision,
            "repair@1": self.repair_at_1,
            f"repair@{self.top}": self.repair_at_k,
            "explored_nodes": self.explored,
        }
        if self.per_category:
            out["rejected"] = self.rejected
            out["per_category"] = {c: m.to_dict() for c, m in self.per_category.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def table(self) -> str:
        def fmt(x):
            return "-" if x is None else f"{x:.4f}"

        header = f"{'category':<14}{'cases':>6}{'recall':>9}{'precision':>11}{'repair@1':>10}{f'repair@{self.top}':>10}"
        rows = [header, "-" * len(header)]
        entries = list(self.per_category.items()) + [("all", self)]
        for name, m in entries:
            rows.append(
                f"{name:<14}{m.cases:>6}{fmt(m.recall):>9}{fmt(m.precision):>11}"
                f"{fmt(m.repair_at_1):>10}{fmt(m.repair_at_k):>10}"
            )
        rows.append(f"explored search nodes: {self.explored}")
        rows.append(f"rejected cases: {self.rejected}")
        return "\n".join(rows) + "\n"


def _accumulate(m: EvalMetrics, r: CaseResult) -> None:
    m.cases += 1
    m.detected += r.detected
    m.clean_findings += r.clean_findings
    m.repaired_at_1 += r.repair_rank == 0
    m.repaired_at_k += r.repair_rank is not None and r.repair_rank < m.top
    m.explored += r.explored


def summarize(results: Iterable[CaseResult], top: int = DEFAULT_K, rejected: int = 0) -> EvalMetrics:
    metrics = EvalMetrics(top=top, rejected=rejected)
    metrics.per_category = {c: EvalMetrics(top=top) for c in CATEGORIES}
    for r in results:
        _accumulate(metrics, r)
        _accumulate(metrics.per_category[r.category], r)
    return metrics


def evaluate(bundle: ModelBundle, cases, theta=DEFAULT_THETA, max_length: int = DEFAULT_MAX_LENGTH,
             k: int = DEFAULT_K, top: int = DEFAULT_K, jobs: int = 1) -> EvalMetrics:
    rejected = getattr(cases, "rejected", 0)
    cases = list(cases)
    if jobs > 1 and len(cases) > 1:
        from concurrent.futures import ProcessPoolExecutor
        from functools import partial

        work = partial(evaluate_case, bundle, theta=theta, max_length=max_length, k=k)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, cases, chunksize=max(1, len(cases) // (4 * jobs))))
    else:
        results = [evaluate_case(bundle, c, theta, max_length, k) for c in cases]
    return summarize(results, top, rejected)


# ---------------------------------------------------------------------------
# Random sequences for property tests
# ---------------------------------------------------------------------------

_TYPES = ("Alpha", "Beta", "Gamma")
_METHODS = ("run", "get", "check", "put")
_STATE_METHODS = ("hasMore", "ready")
_EXCEPTIONS = ("IOException", "Timeout", "Failure")
_STRING_CHARS = "ab UTF8,%=-:\"\\é\n\t"


def _random_arg(rng: random.Random, var_types: dict[str, str], renderable: bool) -> ArgAbstraction:
    roll = rng.randrange(7 if renderable else 8)
    if roll == 0:
        return ArgAbstraction.null()
    if roll == 1:
        return ArgAbstraction.int_(rng.choice((-3, 0, 5)))
    if roll == 2:
        return ArgAbstraction.string("".join(rng.choice(_STRING_CHARS) for _ in range(rng.randrange(5))))
    if roll == 3:
        return ArgAbstraction.boolean(rng.random() < 0.5)
    if roll == 7:
        return ArgAbstraction.call_result()
    name = rng.choice(sorted(var_types))
    return ArgAbstraction.var(var_types[name], name)


def random_sequence(rng: random.Random, max_events: int = 16, renderable: bool = True,
                    source_id: str = "m") -> UsageSequence:
    """A random structurally valid, type-consistent sequence.

    With ``renderable`` the sequence only uses shapes the mini-language can
    express (no call-result arguments, every method call has a receiver).
    """
    var_types = {f"v{i}": rng.choice(_TYPES) for i in range(5)}
    events = []
    stack = []
    n = rng.randrange(max_events + 1)
    while len(events) < n:
        roll = rng.random()
        if roll < 0.5:
            args = tuple(_random_arg(rng, var_types, renderable) for _ in range(rng.randrange(3)))
            if rng.random() < 0.3:
                t = rng.choice(_TYPES)
                candidates = sorted(v for v, vt in var_types.items() if vt == t)
                result = rng.choice(candidates + [None]) if candidates else None
                events.append(Call(ApiMethodId(t, "<init>", len(args)), None, args, result))
            else:
                recv = rng.choice(sorted(var_types))
                if not renderable and rng.random() < 0.1:
                    recv = None
                t = var_types[recv] if recv else rng.choice(_TYPES)
                result = rng.choice(sorted(var_types) + [None, None])
                events.append(Call(ApiMethodId(t, rng.choice(_METHODS), len(args)), recv, args, result))
        elif roll < 0.65:
            subject = rng.choice(sorted(var_types))
            if rng.random() < 0.3:
                sid = ApiMethodId(var_types[subject], rng.choice(_STATE_METHODS), 0)
                events.append(Call(sid, subject, (), None))
                events.append(GuardOpen(GuardKind.state(sid), subject))
            else:
                events.append(GuardOpen(rng.choice((NULL_CHECK, CONST_CHECK)), subject))
            stack.append(GuardClose())
        elif roll < 0.75:
            caught = tuple(rng.sample(_EXCEPTIONS, rng.randrange(1, 3)))
            events.append(TryOpen(caught))
            stack.append(TryClose())
        elif stack:
            events.append(stack.pop())
    while stack:
        events.append(stack.pop())
    return UsageSequence(source_id, tuple(events))

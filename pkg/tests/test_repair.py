import random

import pytest

import oracles
from apimisuse.bench import random_sequence
from apimisuse.detector import detect, report
from apimisuse.ir import (
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
    context_of,
    contexts,
    validate,
    write_ir,
)
from apimisuse.minilang import load_source, render
from apimisuse.models import train
from apimisuse.repair import (
    DeleteCall,
    EmptyFindings,
    InsertCallBefore,
    InsertGuard,
    InsertPostCheck,
    InvalidTarget,
    ReplaceArg,
    WrapTryCatch,
    _family,
    apply,
    correct,
    generate_repair_actions,
    geometric_mean,
    script_text,
)

READ = ApiMethodId("FileInputStream", "read", 1)
FIS = ApiMethodId("FileInputStream", "<init>", 1)


def file_read(*, guard=True, handler=True, check=True, charset="UTF8"):
    """The file-reading snippet with individual protections switched off."""
    construct = "FileInputStream s = new FileInputStream(f);"
    read = "Object n = s.read(b);"
    lines = ['File f = new File("data.txt");', "Bytes b = new Bytes(1024);"]
    lines.append(f"if (f != null) {{ {construct} }}" if guard else construct)
    lines.append(f"try {{ {read} }} catch (IOException e) {{ }}" if handler else read)
    if check:
        lines.append("if (n != 0) { }")
    lines.append(f'String t = new String(b, "{charset}");')
    return load_source("void m() {\n" + "\n".join(lines) + "\n}")[0]


def index_of(seq, method):
    return next(i for i, e in enumerate(seq.events) if isinstance(e, Call) and e.id == method)


class TestGenerate:
    def test_missing_handler(self, pattern_bundle):
        seq = file_read(handler=False)
        fs = detect(pattern_bundle, seq)
        assert [f.factor for f in fs] == [FactorKind.EXCEPTION]
        actions = generate_repair_actions(pattern_bundle, seq, fs, 3)
        assert WrapTryCatch(index_of(seq, READ), ("IOException",)) in actions

    def test_missing_null_guard(self, pattern_bundle):
        seq = file_read(guard=False)
        fs = detect(pattern_bundle, seq)
        assert FactorKind.PRECONDITION in [f.factor for f in fs]
        actions = generate_repair_actions(pattern_bundle, seq, fs, 3)
        assert InsertGuard(index_of(seq, FIS), "arg0", NULL_CHECK) in actions

    def test_temporal_two_method_corpus(self):
        a, b, c = (ApiMethodId("A", n, 0) for n in "abc")
        corpus = [UsageSequence("m", (Call(a, "x"), Call(b, "x")))] * 10
        query = UsageSequence("m", (Call(c, "x"), Call(b, "x")))
        bundle = train(corpus)
        fs = [f for f in detect(bundle, query) if f.factor is FactorKind.TEMPORAL_ORDER and f.call_index == 1]
        assert fs
        actions = generate_repair_actions(bundle, query, fs, 1)
        assert actions == [InsertCallBefore(1, Call(a, "x")), DeleteCall(1)]

    def test_empty_findings(self, pattern_bundle):
        with pytest.raises(EmptyFindings):
            generate_repair_actions(pattern_bundle, file_read(), [], 3)

    def test_at_most_k_per_finding(self, pattern_bundle):
        for seed in range(40):
            seq = random_sequence(random.Random(seed), max_events=20)
            fs = detect(pattern_bundle, seq)
            if not fs:
                continue
            for k in (1, 2, 3):
                actions = generate_repair_actions(pattern_bundle, seq, fs, k)
                assert len(actions) <= len(fs) * (k + 1)
                assert actions == generate_repair_actions(pattern_bundle, seq, fs, k)
                for action in actions:
                    validate(apply(seq, action))


class TestApply:
    def test_wrap_try_catch(self):
        seq = file_read(handler=False)
        i = index_of(seq, READ)
        out = apply(seq, WrapTryCatch(i, ("IOException",)))
        assert out.events[i] == TryOpen(("IOException",))
        assert out.events[i + 1] == seq.events[i]
        assert out.events[i + 2] == TryClose()
        assert out.events[:i] == seq.events[:i]
        assert out.events[i + 3:] == seq.events[i + 1:]
        assert "IOException" in oracles.handled_exceptions(out, i + 1)
        assert "IOException" in context_of(out, i + 1).handled_exceptions

    def test_delete_only_call(self):
        seq = UsageSequence("m", (TryOpen(("E",)), Call(READ, "s", (ArgAbstraction.null(),)), TryClose()))
        out = apply(seq, DeleteCall(1))
        validate(out)
        assert contexts(out) == []

    def test_delete_state_check_removes_its_guard(self):
        seq = load_source("void m(Iterator it) { if (it.hasNext()) { it.next(); } }")[0]
        out = apply(seq, DeleteCall(0))
        assert [type(e) for e in out.events] == [Call]

    def test_insert_guard_brackets_target(self):
        seq = file_read(guard=False)
        i = index_of(seq, FIS)
        out = apply(seq, InsertGuard(i, "arg0", NULL_CHECK))
        assert out.events[i] == GuardOpen(NULL_CHECK, "f")
        assert out.events[i + 2] == GuardClose()
        assert context_of(out, i + 1).guard("arg0") == NULL_CHECK

    def test_insert_state_guard_adds_check_call(self):
        seq = load_source("void m(Iterator it) { it.next(); }")[0]
        has_next = ApiMethodId("Iterator", "hasNext", 0)
        out = apply(seq, InsertGuard(0, "recv", GuardKind.state(has_next)))
        assert render(out) == "void m(Iterator it) {\n  if (it.hasNext()) {\n    it.next();\n  }\n}\n"

    def test_insert_post_check_names_result(self):
        seq = load_source("void m(FileInputStream s, Bytes b) { s.read(b); }")[0]
        out = apply(seq, InsertPostCheck(0, PostCheckKind.COMPARED_TO_CONSTANT))
        assert out.events[0].result_var == "_r0"
        assert context_of(out, 0).post_check is PostCheckKind.COMPARED_TO_CONSTANT

    def test_replace_arg(self):
        seq = file_read(charset="UTF-9")
        i = len(seq.events) - 1
        out = apply(seq, ReplaceArg(i, "arg1", ArgAbstraction.string("UTF8")))
        assert out.events[i].args[1] == ArgAbstraction.string("UTF8")

    def test_insert_call_before(self):
        seq = load_source("void m(Lock l) { l.unlock(); }")[0]
        lock = ApiMethodId("Lock", "lock", 0)
        out = apply(seq, InsertCallBefore(0, Call(lock, "l")))
        assert context_of(out, 1).predecessor == lock

    @pytest.mark.parametrize("action", [
        DeleteCall(2), WrapTryCatch(99, ("E",)), InsertGuard(0, "arg5", NULL_CHECK),
        ReplaceArg(0, "recv", ArgAbstraction.null()), InsertPostCheck(0, PostCheckKind.IGNORED),
    ])
    def test_invalid_target(self, action):
        seq = file_read()
        with pytest.raises(InvalidTarget):
            apply(seq, action)

    def test_input_not_mutated(self, pattern_bundle):
        seq = file_read(handler=False, guard=False)
        before = write_ir(seq)
        correct(pattern_bundle, seq, max_length=2)
        assert write_ir(seq) == before


class TestCorrect:
    def test_clean_input(self, pattern_bundle):
        result = correct(pattern_bundle, file_read())
        assert result.status == "clean"
        assert len(result.candidates) == 1
        assert result.candidates[0].script == ()
        assert result.explored == 1

    def test_missing_handler_top_candidate(self, pattern_bundle):
        seq = file_read(handler=False)
        result = correct(pattern_bundle, seq, max_length=1)
        assert result.status == "repaired"
        assert result.candidates[0].script == (WrapTryCatch(index_of(seq, READ), ("IOException",)),)
        best = one_edit_oracle(pattern_bundle, seq)
        assert write_ir(result.candidates[0].sequence) == best

    def test_zero_budget_is_unrepairable(self, pattern_bundle):
        result = correct(pattern_bundle, file_read(handler=False), max_length=0)
        assert result.status == "unrepairable"
        assert result.candidates == ()

    def test_rendered_repair_parses(self, pattern_bundle):
        seq = file_read(handler=False, guard=False)
        for cand in correct(pattern_bundle, seq, max_length=2).candidates:
            assert load_source(render(cand.sequence)) == [cand.sequence]

    @pytest.mark.parametrize("faults", [
        dict(guard=False, handler=False),
        dict(handler=False, check=False),
        dict(guard=False, charset="UTF-9"),
    ])
    def test_two_faults_match_recursion_oracle(self, pattern_bundle, faults):
        seq = file_read(**faults)
        result = correct(pattern_bundle, seq, max_length=2, k=3)
        expected, _, _ = oracles.recursion_oracle(pattern_bundle, seq, 2, 3)
        assert expected
        assert {write_ir(c.sequence): script_text(c.script) for c in result.candidates} == expected


def one_edit_oracle(bundle, seq):
    """IR of the best clean state reachable with one action from the whole
    vocabulary: every family entry for every call and factor, unfiltered."""
    from apimisuse.detector import Finding

    vocabulary = []
    for m, ctx in contexts(seq):
        i = ctx.call_index
        vocabulary.append(DeleteCall(i))
        for kind in FactorKind:
            fake = Finding(seq.source_id, i, m, kind, 0)
            vocabulary.extend(action for _, action in _family(bundle, seq, fake))
    clean = []
    for action in vocabulary:
        try:
            out = apply(seq, action)
        except InvalidTarget:
            continue
        if not detect(bundle, out):
            clean.append((-geometric_mean(bundle, out), action.describe(), write_ir(out)))
    return min(clean)[2]


def random_misuse(bundle, seed):
    """A random pattern instance with one or two injected misuses that the
    detector actually reports."""
    from apimisuse.bench import CATEGORIES, NotEligible, PATTERNS, inject

    rng = random.Random(seed)
    while True:
        seq = rng.choice(PATTERNS).instantiate(rng, "m")
        for category in rng.sample(CATEGORIES, rng.choice((1, 2))):
            try:
                seq = inject(f"{seed}:{category}", seq, category).faulty
            except NotEligible:
                pass
        if detect(bundle, seq):
            return seq


@pytest.mark.parametrize("seed", range(25))
def test_search_properties(pattern_bundle, seed):
    seq = random_misuse(pattern_bundle, seed)
    k, max_length = 2, 2
    result = correct(pattern_bundle, seq, max_length=max_length, k=k)
    # determinism, byte for byte
    again = correct(pattern_bundle, seq, max_length=max_length, k=k)
    assert [(script_text(c.script), write_ir(c.sequence), c.geometric_mean) for c in result.candidates] == \
        [(script_text(c.script), write_ir(c.sequence), c.geometric_mean) for c in again.candidates]
    # soundness and ranking
    for c in result.candidates:
        assert detect(pattern_bundle, c.sequence) == []
        assert c.edits <= max_length
    keys = [(c.edits, -c.geometric_mean, script_text(c.script)) for c in result.candidates]
    assert keys == sorted(keys)
    assert len({write_ir(c.sequence) for c in result.candidates}) == len(result.candidates)
    # bounded completeness and the node budget
    expected, max_findings, _ = oracles.recursion_oracle(pattern_bundle, seq, max_length, k)
    assert {write_ir(c.sequence): script_text(c.script) for c in result.candidates} == expected
    branching = (k + 1) * max(max_findings, 1)
    assert result.explored <= sum(branching ** d for d in range(max_length + 1))


@pytest.fixture(scope="module")
def random_bundle():
    rng = random.Random(0)
    return train([random_sequence(rng) for _ in range(300)])


@pytest.mark.parametrize("seed", range(40))
def test_search_matches_recursion_on_random_models(random_bundle, seed):
    """Dense findings over a small vocabulary stress the visited set."""
    seq = random_sequence(random.Random(1000 + seed), max_events=8)
    result = correct(random_bundle, seq, max_length=2, k=2)
    expected, max_findings, _ = oracles.recursion_oracle(random_bundle, seq, 2, 2)
    assert {write_ir(c.sequence): script_text(c.script) for c in result.candidates} == expected
    assert result.explored <= sum(((2 + 1) * max(max_findings, 1)) ** d for d in range(3))
    for c in result.candidates:
        assert detect(random_bundle, c.sequence) == []


def test_geometric_mean_covers_all_factors(pattern_bundle):
    seq = file_read(handler=False)
    values = [float(p.value) for r in report(pattern_bundle, seq) for p in r.probabilities]
    product = 1.0
    for v in values:
        product *= v
    assert geometric_mean(pattern_bundle, seq) == pytest.approx(product ** (1 / len(values)))
    assert geometric_mean(pattern_bundle, UsageSequence("m")) == 1.0


import io
import json

import pytest

from apimisuse.bench import PATTERNS, gen_corpus, write_corpus
from apimisuse.cli import main
from apimisuse.minilang import render

COMMANDS = ("train", "detect", "repair", "gen", "eval", "ir")

FAULTY_READ = """void m() {
  File f = new File("data.txt");
  Bytes b = new Bytes(1024);
  if (f != null) {
    FileInputStream s = new FileInputStream(f);
  }
  Object n = s.read(b);
  if (n != 0) {
  }
  String t = new String(b, "UTF8");
}
"""


def run(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out)
    return code, out.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_corpus(gen_corpus(PATTERNS, 300, seed=0), root / "corpus")
    code, _ = run("train", root / "corpus", "-o", root / "model.txt")
    assert code == 0
    clean = gen_corpus(PATTERNS, 1, seed=99)[0]
    (root / "clean.mj").write_text(render(clean))
    (root / "faulty.mj").write_text(FAULTY_READ)
    return root


class TestTrain:
    def test_summary(self, workspace, tmp_path):
        (tmp_path / "c").mkdir()
        (tmp_path / "c" / "a.mj").write_text(FAULTY_READ)
        code, out = run("train", tmp_path / "c", "-o", tmp_path / "m.txt")
        assert code == 0
        assert out.splitlines()[0] == "sequences 1"
        assert (tmp_path / "m.txt").read_text().startswith("SAMMODEL 1\nsequences 1\n")

    def test_empty_dir(self, tmp_path):
        assert run("train", tmp_path, "-o", tmp_path / "m.txt")[0] == 2

    def test_parse_error(self, tmp_path, capsys):
        (tmp_path / "bad.mj").write_text("void m( {")
        (tmp_path / "good.mj").write_text(FAULTY_READ)
        assert run("train", tmp_path, "-o", tmp_path / "m.txt")[0] == 3
        assert "bad.mj:1:" in capsys.readouterr().err
        code, out = run("train", tmp_path, "-o", tmp_path / "m.txt", "--skip-bad")
        assert code == 0
        assert "sequences 1" in out

    def test_jobs_byte_exact(self, workspace, tmp_path):
        assert run("train", workspace / "corpus", "-o", tmp_path / "j1", "--jobs", 1)[0] == 0
        assert run("train", workspace / "corpus", "-o", tmp_path / "j4", "--jobs", 4)[0] == 0
        assert (tmp_path / "j1").read_bytes() == (tmp_path / "j4").read_bytes()
        assert (tmp_path / "j1").read_bytes() == (workspace / "model.txt").read_bytes()

    def test_missing_corpus(self, tmp_path):
        assert run("train", tmp_path / "nope", "-o", tmp_path / "m.txt")[0] == 4


class TestDetect:
    def test_clean(self, workspace):
        assert run("detect", "-m", workspace / "model.txt", workspace / "clean.mj") == (0, "")

    def test_exception_misuse(self, workspace):
        code, out = run("detect", "-m", workspace / "model.txt", workspace / "faulty.mj")
        assert code == 1
        [line] = out.splitlines()
        assert " FileInputStream.read/1 Exception p=" in line
        assert line.endswith("θ=0.1")

    def test_lower_threshold_fewer_findings(self, workspace):
        model, target = workspace / "model.txt", workspace / "faulty.mj"
        low = run("detect", "-m", model, target, "--theta", "0.0001")[1].splitlines()
        high = run("detect", "-m", model, target, "--theta", "0.1")[1].splitlines()
        assert len(low) <= len(high)

    def test_machine_format(self, workspace):
        code, out = run("detect", "-m", workspace / "model.txt", workspace / "faulty.mj", "--format", "machine")
        assert code == 1
        [finding] = json.loads(out)
        assert finding["factor"] == "Exception"

    def test_theta_factor_override(self, workspace):
        code, out = run("detect", "-m", workspace / "model.txt", workspace / "faulty.mj",
                        "--theta-factor", "Exception=0.001")
        assert (code, out) == (0, "")

    def test_bad_threshold(self, workspace):
        assert run("detect", "-m", workspace / "model.txt", workspace / "clean.mj", "--theta", "1.5")[0] == 2

    def test_corrupt_model(self, workspace, tmp_path):
        (tmp_path / "m.txt").write_text("SAMMODEL 1\nseq")
        assert run("detect", "-m", tmp_path / "m.txt", workspace / "clean.mj")[0] == 3

    def test_missing_model(self, workspace, tmp_path):
        assert run("detect", "-m", tmp_path / "none.txt", workspace / "clean.mj")[0] == 4


class TestRepair:
    def test_clean(self, workspace):
        code, out = run("repair", "-m", workspace / "model.txt", workspace / "clean.mj")
        assert code == 0
        assert "no misuse detected" in out

    def test_single_fault(self, workspace):
        code, out = run("repair", "-m", workspace / "model.txt", workspace / "faulty.mj", "--max-length", 1)
        assert code == 1
        lines = out.splitlines()
        first_edit = next(line for line in lines if line.startswith("EDIT "))
        assert first_edit == "EDIT 1: WrapTryCatch @ call 5 IOException"
        assert "catch (IOException" in out

    def test_zero_budget(self, workspace):
        assert run("repair", "-m", workspace / "model.txt", workspace / "faulty.mj", "--max-length", 0)[0] == 5

    def test_machine_format(self, workspace):
        code, out = run("repair", "-m", workspace / "model.txt", workspace / "faulty.mj",
                        "--format", "machine", "--top", 1)
        assert code == 1
        [entry] = json.loads(out)
        assert entry["status"] == "repaired"
        assert entry["candidates"][0]["edits"] == ["EDIT 1: WrapTryCatch @ call 5 IOException"]


class TestGenEval:
    def test_gen_mix(self, tmp_path):
        code, out = run("gen", "--out", tmp_path, "--total", 144, "--seed", 7)
        assert code == 0
        counts = dict(line.split() for line in out.splitlines())
        assert [int(counts[c]) for c in ("temporal", "exception", "precondition", "postcondition", "argument")] \
            == [75, 27, 22, 15, 5]
        assert len([p for p in tmp_path.iterdir() if p.name.startswith("case_")]) == 144
        assert len(list((tmp_path / "corpus").iterdir())) == 500

    def test_eval_repeatable(self, tmp_path):
        args = ("eval", "--total", 20, "--corpus-size", 200, "--seed", 3, "--format", "machine")
        assert run(*args, "-o", tmp_path / "a.json")[0] == 0
        assert run(*args, "-o", tmp_path / "b.json", "--jobs", 2)[0] == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        metrics = json.loads((tmp_path / "a.json").read_text())
        assert metrics["cases"] == 20


class TestIr:
    def test_dump(self, workspace):
        code, out = run("ir", workspace / "faulty.mj")
        assert code == 0
        assert out.startswith("SAMIR 1 ")
        assert "CALL FileInputStream read 1 recv=s result=n args=var:Bytes:b" in out

    def test_ir_file_input(self, workspace, tmp_path):
        _, text = run("ir", workspace / "faulty.mj")
        (tmp_path / "x.ir").write_text(text)
        assert run("ir", tmp_path / "x.ir") == (0, text)


class TestConfig:
    def test_env_config(self, workspace, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"theta": "0.001"}))
        monkeypatch.setenv("SAM_CONFIG", str(cfg))
        assert run("detect", "-m", workspace / "model.txt", workspace / "faulty.mj")[0] == 0
        # flags win over the config file
        assert run("detect", "-m", workspace / "model.txt", workspace / "faulty.mj", "--theta", "0.1")[0] == 1

    def test_config_flag(self, workspace, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"max_length": 0}))
        assert run("repair", "-m", workspace / "model.txt", workspace / "faulty.mj", "--config", cfg)[0] == 5

    def test_unknown_config_key(self, workspace, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"colour": "blue"}))
        assert run("detect", "-m", workspace / "model.txt", workspace / "clean.mj", "--config", cfg)[0] == 2


@pytest.mark.parametrize("command", COMMANDS)
def test_help_lists_every_flag(command, capsys):
    assert run(command, "--help")[0] == 0
    text = capsys.readouterr().out
    from apimisuse.cli import build_parser

    sub = build_parser()._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


@pytest.mark.parametrize("argv", [
    ("detect", "--bogus", "x"),
    ("frobnicate",),
    (),
    ("repair", "-m", "m.txt"),
])
def test_usage_errors(argv):
    assert run(*argv)[0] == 2

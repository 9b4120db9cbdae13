"""Command-line entry point.

Exit codes: 0 ok / clean, 1 findings or repaired, 2 usage error, 3 parse
errors, 4 I/O errors, 5 unrepairable within the edit budget.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import reduce
from pathlib import Path
from typing import Optional

from . import bench
from .detector import (
    DEFAULT_THETA,
    InvalidThreshold,
    Thresholds,
    detect,
    findings_json,
    format_findings,
)
from .ir import IrError, read_ir, write_ir
from .minilang import ParseError, UnknownVariable, load_source, render
from .models import TABLES, CorruptModel, ModelBundle, VersionMismatch, dumps, loads, merge, train
from .repair import DEFAULT_K, DEFAULT_MAX_LENGTH, correct, format_candidate, script_text

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_IO = 4
EXIT_UNREPAIRABLE = 5

SOURCE_SUFFIXES = (".mj", ".ir")

DEFAULTS = {
    "theta": DEFAULT_THETA,
    "theta_overrides": {},
    "max_length": DEFAULT_MAX_LENGTH,
    "k": DEFAULT_K,
    "top": DEFAULT_K,
    "seed": 0,
    "format": "text",
    "total": 144,
    "corpus_size": 500,
    "jobs": 1,
}


class UsageError(Exception):
    pass


class InputError(Exception):
    """A source file failed to parse or lower."""


# ---------------------------------------------------------------------------
# Input handling
# ---------------------------------------------------------------------------


def _collect(paths: list[str]) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(f for f in p.rglob("*") if f.is_file() and f.suffix in SOURCE_SUFFIXES))
        elif p.exists():
            files.append(p)
        else:
            raise FileNotFoundError(str(p))
    return files


def load_file(path: Path):
    """Usage sequences of one ``.mj`` or IR file."""
    data = path.read_bytes()
    try:
        if path.suffix == ".ir":
            return [read_ir(data.decode("utf-8"))]
        return load_source(data, str(path))
    except ParseError as exc:
        raise InputError("\n".join(f"{path}:{d}" for d in exc.diagnostics)) from None
    except UnknownVariable as exc:
        raise InputError(f"{path}:{exc}") from None
    except (IrError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _train_files(files: list[str]) -> ModelBundle:
    seqs = []
    for f in files:
        seqs.extend(load_file(Path(f)))
    return train(seqs)


def _shards(items: list, n: int) -> list[list]:
    size, extra = divmod(len(items), n)
    out, start = [], 0
    for i in range(n):
        end = start + size + (i < extra)
        out.append(items[start:end])
        start = end
    return [s for s in out if s]


def _load_model(path: str) -> ModelBundle:
    try:
        return loads(Path(path).read_text(encoding="utf-8"))
    except (CorruptModel, VersionMismatch) as exc:
        raise InputError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def resolve_config(args: argparse.Namespace) -> dict:
    """Flags override the config file, which overrides built-in defaults."""
    config = dict(DEFAULTS)
    config_path = getattr(args, "config", None) or os.environ.get("SAM_CONFIG")
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"bad config file {config_path}: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        config.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    overrides = dict(config["theta_overrides"])
    for item in getattr(args, "theta_factor", None) or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--theta-factor expects FACTOR=VALUE, got {item!r}")
        overrides[name] = value
    config["theta_overrides"] = overrides
    try:
        config["thresholds"] = Thresholds.of(config["theta"], overrides)
    except (InvalidThreshold, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if config["max_length"] < 0:
        raise UsageError("--max-length must be non-negative")
    if config["k"] < 1 or config["top"] < 1:
        raise UsageError("--k and --top must be at least 1")
    if config["jobs"] < 1:
        raise UsageError("--jobs must be at least 1")
    if config["format"] not in ("text", "machine"):
        raise UsageError("--format must be text or machine")
    return config


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args, config, out) -> int:
    files = _collect([args.corpus])
    if not files:
        raise UsageError(f"no {' or '.join(SOURCE_SUFFIXES)} files under {args.corpus}")
    good, bad = [], []
    for f in files:
        try:
            load_file(f)
            good.append(str(f))
        except InputError as exc:
            bad.append(str(exc))
    if bad:
        print("\n".join(bad), file=sys.stderr)
        if not args.skip_bad:
            return EXIT_PARSE
        print(f"skipped {len(bad)} file(s)", file=sys.stderr)
    shards = _shards(good, config["jobs"])
    if config["jobs"] > 1 and len(shards) > 1:
        with ProcessPoolExecutor(max_workers=config["jobs"]) as pool:
            bundles = list(pool.map(_train_files, shards))
    else:
        bundles = [_train_files(s) for s in shards]
    bundle = reduce(merge, bundles, ModelBundle())
    Path(args.output).write_text(dumps(bundle), encoding="utf-8")
    print(f"sequences {bundle.trained_sequences}", file=out)
    for name in TABLES:
        print(f"{name} {len(bundle.tables[name])}", file=out)
    return EXIT_OK


def _load_inputs(paths: list[str]):
    seqs, errors = [], []
    for f in _collect(paths):
        try:
            seqs.extend(load_file(f))
        except InputError as exc:
            errors.append(str(exc))
    return seqs, errors


def cmd_detect(args, config, out) -> int:
    bundle = _load_model(args.model)
    seqs, errors = _load_inputs(args.inputs)
    if errors:
        print("\n".join(errors), file=sys.stderr)
        return EXIT_PARSE
    findings = []
    for seq in seqs:
        findings.extend(detect(bundle, seq, config["thresholds"]))
    out.write(findings_json(findings) if config["format"] == "machine" else format_findings(findings))
    return EXIT_FINDINGS if findings else EXIT_OK


def cmd_repair(args, config, out) -> int:
    bundle = _load_model(args.model)
    seqs, errors = _load_inputs([args.input])
    if errors:
        print("\n".join(errors), file=sys.stderr)
        return EXIT_PARSE
    statuses = []
    machine = []
    for seq in seqs:
        result = correct(bundle, seq, config["thresholds"], config["max_length"], config["k"])
        statuses.append(result.status)
        shown = result.candidates[: config["top"]]
        if config["format"] == "machine":
            machine.append(
                {
                    "source_id": seq.source_id,
                    "status": result.status,
                    "explored": result.explored,
                    "candidates": [
                        {
                            "edits": script_text(c.script).split("\n") if c.script else [],
                            "source": render(c.sequence),
                            "score": [c.edits, c.geometric_mean, script_text(c.script)],
                        }
                        for c in shown
                    ],
                }
            )
            continue
        print(f"== {seq.source_id}: {result.status} (explored {result.explored} states)", file=out)
        if result.status == "clean":
            print("no misuse detected", file=out)
            continue
        for rank, cand in enumerate(shown, start=1):
            out.write(format_candidate(rank, cand, render(cand.sequence)))
    if machine:
        out.write(json.dumps(machine, indent=2, ensure_ascii=False) + "\n")
    if "unrepairable" in statuses:
        return EXIT_UNREPAIRABLE
    if "repaired" in statuses:
        return EXIT_FINDINGS
    return EXIT_OK


def _benchmark(config):
    corpus = bench.gen_corpus(bench.PATTERNS, config["corpus_size"], config["seed"])
    bundle = train(corpus)
    benchmark = bench.make_benchmark(
        bench.PATTERNS, config["total"], config["seed"], bundle=bundle, theta=config["thresholds"]
    )
    return corpus, bundle, benchmark


def cmd_gen(args, config, out) -> int:
    out_dir = Path(args.out)
    corpus, _, benchmark = _benchmark(config)
    bench.write_corpus(corpus, out_dir / "corpus")
    bench.write_benchmark(benchmark, out_dir)
    for category, n in benchmark.category_counts().items():
        print(f"{category} {n}", file=out)
    print(f"rejected {benchmark.rejected}", file=out)
    return EXIT_OK


def cmd_eval(args, config, out) -> int:
    _, bundle, benchmark = _benchmark(config)
    metrics = bench.evaluate(
        bundle, benchmark, config["thresholds"], config["max_length"], config["k"],
        top=config["top"], jobs=config["jobs"],
    )
    text = metrics.to_json() if config["format"] == "machine" else metrics.table()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    out.write(text)
    return EXIT_OK


def cmd_ir(args, config, out) -> int:
    seqs, errors = _load_inputs([args.input])
    if errors:
        print("\n".join(errors), file=sys.stderr)
        return EXIT_PARSE
    for seq in seqs:
        out.write(write_ir(seq))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, search: bool = False, jobs: bool = False):
    p.add_argument("--config", help="JSON config file (default: $SAM_CONFIG)")
    p.add_argument("--format", choices=("text", "machine"), help="report format (default: text)")
    p.add_argument("--theta", help="global detection threshold in (0, 1) (default: 0.1)")
    p.add_argument(
        "--theta-factor", action="append", metavar="FACTOR=VALUE",
        help="per-factor threshold override, e.g. Exception=0.05; repeatable",
    )
    if search:
        p.add_argument("--max-length", type=int, help="maximum edit-script length (default: 3)")
        p.add_argument("--k", type=int, help="repair actions per finding (default: 3)")
        p.add_argument("--top", type=int, help="candidates to report (default: 3)")
    if jobs:
        p.add_argument("--jobs", type=int, help="worker processes (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apimisuse", description="Statistical API misuse detection and repair.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train factor models from a corpus directory")
    p.add_argument("corpus", help="directory of .mj or .ir files")
    p.add_argument("-o", "--output", required=True, help="model file to write")
    p.add_argument("--skip-bad", action="store_true", help="skip files that fail to parse")
    _add_common(p, jobs=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="report low-probability usage factors")
    p.add_argument("-m", "--model", required=True, help="trained model file")
    p.add_argument("inputs", nargs="+", help=".mj/.ir files or directories")
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("repair", help="search for edit scripts that remove all findings")
    p.add_argument("-m", "--model", required=True, help="trained model file")
    p.add_argument("input", help=".mj or .ir file")
    _add_common(p, search=True)
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("gen", help="write a synthetic corpus and seeded misuse benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--total", type=int, help="number of misuse cases (default: 144)")
    p.add_argument("--corpus-size", type=int, help="training sequences (default: 500)")
    p.add_argument("--seed", type=int, help="master seed (default: 0)")
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("eval", help="generate, train, and score the benchmark")
    p.add_argument("--total", type=int, help="number of misuse cases (default: 144)")
    p.add_argument("--corpus-size", type=int, help="training sequences (default: 500)")
    p.add_argument("--seed", type=int, help="master seed (default: 0)")
    p.add_argument("-o", "--output", help="also write the metrics report here")
    _add_common(p, search=True, jobs=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ir", help="dump the lowered IR of a source file")
    p.add_argument("input", help=".mj or .ir file")
    p.set_defaults(func=cmd_ir)
    return parser


def main(argv: Optional[list[str]] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        config = resolve_config(args)
        if config["total"] < len(bench.CATEGORIES):
            raise UsageError(f"--total must be at least {len(bench.CATEGORIES)}")
        if config["corpus_size"] < 1:
            raise UsageError("--corpus-size must be at least 1")
        return args.func(args, config, out)
    except UsageError as exc:
        print(f"apimisuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"apimisuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

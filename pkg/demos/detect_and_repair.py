"""Train on a synthetic corpus, then find and fix a file read with no handler.

Run from the repository root:

    python demos/detect_and_repair.py
"""

from apimisuse import correct, detect, load_source, render, train
from apimisuse.bench import PATTERNS, gen_corpus
from apimisuse.repair import format_candidate

SNIPPET = """
void readConfig() {
  File f = new File("data.txt");
  Bytes b = new Bytes(1024);
  if (f != null) {
    FileInputStream s = new FileInputStream(f);
  }
  Object n = s.read(b);
  if (n != 0) {
  }
  String text = new String(b, "UTF8");
}
"""


def main():
    # 500 clean usages of a dozen small API idioms stand in for production code
    corpus = gen_corpus(PATTERNS, 500, seed=0)
    bundle = train(corpus)
    print(f"trained on {bundle.trained_sequences} sequences")

    [seq] = load_source(SNIPPET, "demo.mj")
    findings = detect(bundle, seq)
    print(f"\n{len(findings)} finding(s):")
    for f in findings:
        print(" ", f.format())

    result = correct(bundle, seq, max_length=2)
    print(f"\nrepair status: {result.status}, {result.explored} states explored")
    for rank, cand in enumerate(result.candidates[:2], start=1):
        print()
        print(format_candidate(rank, cand, render(cand.sequence)), end="")


if __name__ == "__main__":
    main()

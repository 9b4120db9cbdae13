"""Show the five factor probabilities behind a detection decision.

Each factor is a smoothed ratio of integer counts, kept as an exact fraction.
The demo trains on a hand-built corpus so the counts are easy to follow.

    python demos/factor_probabilities.py
"""

from apimisuse import detect, load_source, report, train

GOOD = 'void m(FileInputStream s, Bytes b) { try { Object n = s.read(b); } catch (IOException e) { } }'
BAD = "void m(FileInputStream s, Bytes b) { Object n = s.read(b); }"


def main():
    # fifteen reads, every one inside a handler
    bundle = train(load_source(GOOD) * 15)
    [seq] = load_source(BAD)
    for r in report(bundle, seq):
        print(f"call {r.call_index}: {r.method}")
        for p in r.probabilities:
            print(f"  {p.kind.value:<14} {str(p.value):>6}  ({float(p.value):.4f})")

    for theta in ("0.1", "0.05"):
        flagged = [f.factor.value for f in detect(bundle, seq, theta)]
        print(f"theta={theta}: {flagged or 'clean'}")


if __name__ == "__main__":
    main()

"""Generate the seeded-misuse benchmark and score detection and repair.

    python demos/benchmark.py [total] [seed]
"""

import sys

from apimisuse import train
from apimisuse.bench import PATTERNS, evaluate, gen_corpus, make_benchmark


def main(total=144, seed=0):
    corpus = gen_corpus(PATTERNS, 500, seed)
    bundle = train(corpus)
    bench = make_benchmark(PATTERNS, total, seed, bundle=bundle)
    print("cases per category:", bench.category_counts())
    print(f"rejected while generating: {bench.rejected}\n")

    # show one case end to end before the aggregate numbers
    case = bench.cases[0]
    print(f"example case ({case.category}, pattern {case.pattern_id}):")
    for action in case.ground_truth:
        print("  fix:", action.describe())
    print()

    metrics = evaluate(bundle, bench)
    print(metrics.table(), end="")


if __name__ == "__main__":
    main(*map(int, sys.argv[1:3]))

"""Brute-force BMI used to freeze the expected values in test_corpus.cpp.

Conventions: every sentence ends with </s>, which is counted like any other
token; f(x) = (count(x) + 1) / (total + 1) per side; f(x, y) =
(#pairs containing both + 1) / (#pairs + 1); the sum runs over every source
position. A target token's table entry is the mean over its occurrences.
"""
import math

EOS = "</s>"


def bmi_table(corpus):
    pairs = [(s.split() + [EOS], t.split() + [EOS]) for s, t in corpus]
    src_total = sum(len(s) for s, _ in pairs)
    tgt_total = sum(len(t) for _, t in pairs)

    def src_count(x):
        return sum(s.count(x) for s, _ in pairs)

    def tgt_count(y):
        return sum(t.count(y) for _, t in pairs)

    def cooc(x, y):
        return sum(1 for s, t in pairs if x in s and y in t)

    def bmi(src, y):
        fy = (tgt_count(y) + 1) / (tgt_total + 1)
        total = 0.0
        for x in src:
            fx = (src_count(x) + 1) / (src_total + 1)
            fxy = (cooc(x, y) + 1) / (len(pairs) + 1)
            total += math.log(fxy / (fx * fy))
        return total

    sums = {}
    for s, t in pairs:
        for y in t:
            v = bmi(s, y)
            acc = sums.setdefault(y, [0.0, 0])
            acc[0] += v
            acc[1] += 1
    return {y: a / n for y, (a, n) in sums.items()}


TEN_PAIRS = [
    ("das haus ist klein", "the house is small"),
    ("das haus ist gross", "the house is big"),
    ("ein kleines haus", "a small house"),
    ("das auto ist rot", "the car is red"),
    ("ein rotes auto", "a red car"),
    ("das ist gut", "that is good"),
    ("haus und auto", "house and car"),
    ("klein und klein", "small and small"),
    ("der hund ist gross", "the dog is big"),
    ("ein hund", "a dog"),
]


if __name__ == "__main__":
    for name, corpus in (("two pairs", [("k", "v"), ("k", "w")]), ("ten pairs", TEN_PAIRS)):
        print("#", name)
        table = bmi_table(corpus)
        for y in sorted(table):
            print("%s %.17g" % (y, table[y]))

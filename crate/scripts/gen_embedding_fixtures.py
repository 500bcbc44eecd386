"""Generate the synthetic embedding fixtures used by the similarity tests.

Pretrained word2vec and sentence-transformer weights are not available
offline, so the fixtures are built from seeded random vectors with a shared
"topic" direction and synonym groups. The mixing weights are tuned so the
three reference sentences land near the published magnitudes.

Usage: python3 scripts/gen_embedding_fixtures.py [out_dir]
"""

import hashlib
import json
import sys
from pathlib import Path

import numpy as np

S1 = ("The accident occurred when a vehicle lost control, likely due to driver inattention, "
      "and collided with a roadside barrier.")
S2 = ("A vehicle lost control, probably due to driver inattention, and struck a roadside barrier, "
      "resulting in the accident.")
S3 = ("Because the driver was inattentive, the vehicle lost control, veered off course, and struck "
      "a roadside barrier, which led to the accident.")

WORD_DIM = 64
SENTENCE_DIM = 384
TARGET_W2V = 0.86
TARGET_ST = {"s2": 0.93, "s3": 0.84}

SYNONYMS = [
    ["likely", "probably"],
    ["collided", "struck", "hit", "crashed"],
    ["inattention", "inattentive", "distracted"],
    ["occurred", "resulting", "led", "happened"],
    ["when", "because"],
    ["vehicle", "car", "truck"],
    ["accident", "collision", "crash"],
]
EXTRA_WORDS = ["pedestrian", "person", "road", "intersection", "rain", "night", "day", "clear", "wet",
               "urban", "highway", "motorcycle", "bicycle", "bus", "no", "normal", "traffic", "flow",
               "red", "white", "silver", "sedan", "pole", "signal", "turn", "left", "right", "lane"]


def tokenize(text):
    out = []
    for raw in text.split():
        tok = raw.lower()
        while tok and not tok[0].isalnum():
            tok = tok[1:]
        while tok and not tok[-1].isalnum():
            tok = tok[:-1]
        if tok:
            out.append(tok)
    return out


def unit(v):
    return v / np.linalg.norm(v)


def build_lexicon(topic_weight, rng_seed=20240501):
    rng = np.random.default_rng(rng_seed)
    vocab = sorted(set(tokenize(S1) + tokenize(S2) + tokenize(S3) + EXTRA_WORDS
                       + [w for g in SYNONYMS for w in g]))
    topic = unit(rng.standard_normal(WORD_DIM))
    group_of = {w: i for i, g in enumerate(SYNONYMS) for w in g}
    groups = [unit(rng.standard_normal(WORD_DIM)) for _ in SYNONYMS]
    lex = {}
    for w in vocab:
        own = unit(rng.standard_normal(WORD_DIM))
        base = 0.3 * groups[group_of[w]] + 0.7 * own if w in group_of else own
        lex[w] = topic_weight * topic + unit(base)
    return lex


def average(tokens, lex):
    vs = [lex[t] for t in tokens if t in lex]
    return np.mean(vs, axis=0)


def cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def tune_lexicon():
    lo, hi = 0.0, 5.0
    for _ in range(60):
        mid = (lo + hi) / 2
        lex = build_lexicon(mid)
        c = cos(average(tokenize(S1), lex), average(tokenize(S2), lex))
        lo, hi = (mid, hi) if c < TARGET_W2V else (lo, mid)
    return build_lexicon(round((lo + hi) / 2, 6))


def sentence_vectors(seed=7):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((SENTENCE_DIM, 3)))
    e1, e2, e3 = q.T
    s2 = TARGET_ST["s2"] * e1 + np.sqrt(1 - TARGET_ST["s2"] ** 2) * e2
    # Tilt S3 toward S2's residual so it is not orthogonal to S2.
    r3 = unit(0.5 * e2 + e3)
    s3 = TARGET_ST["s3"] * e1 + np.sqrt(1 - TARGET_ST["s3"] ** 2) * r3
    return {S1: e1, S2: s2, S3: s3}


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/embeddings")
    out.mkdir(parents=True, exist_ok=True)

    lex = tune_lexicon()
    with open(out / "lexicon.txt", "w") as f:
        f.write(f"{len(lex)} {WORD_DIM}\n")
        for w in sorted(lex):
            f.write(w + " " + " ".join(repr(float(x)) for x in lex[w]) + "\n")

    sents = sentence_vectors()
    fixture = {hashlib.sha256(t.encode()).hexdigest(): [float(x) for x in v] for t, v in sents.items()}
    (out / "sentences.json").write_text(json.dumps(fixture, indent=1, sort_keys=True) + "\n")
    (out / "reference_sentences.json").write_text(json.dumps({"s1": S1, "s2": S2, "s3": S3}, indent=2) + "\n")

    # Values below are copied into the test suite as the independent oracle.
    t1, t2, t3 = (tokenize(s) for s in (S1, S2, S3))
    a1, a2, a3 = (average(t, lex) for t in (t1, t2, t3))
    print(f"w2v  s1s2 {cos(a1, a2):.15f}  s1s3 {cos(a1, a3):.15f}")
    print(f"st   s1s2 {cos(sents[S1], sents[S2]):.15f}  s1s3 {cos(sents[S1], sents[S3]):.15f}")


if __name__ == "__main__":
    main()

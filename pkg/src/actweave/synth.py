"""Synthetic latent-topic corpus generator for desk-scale verification.

Each topic owns five verb-object pairs, a feature centroid and an
embedding centroid; descriptions are templated human-subject sentences
whose pairs the extractor recovers exactly. All outputs are byte-stable
under a fixed seed.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import SchemaError

SUBJECTS = ["man", "woman", "boy", "girl", "person", "lady"]

# (pairs, topic hypernym); verbs/objects all exist in the shipped lexicon
TOPIC_POOLS = [
    ([("ride", "horse"), ("ride", "elephant"), ("ride", "donkey"),
      ("ride", "camel"), ("ride", "pony")], "mammal"),
    ([("eat", "pizza"), ("eat", "banana"), ("eat", "sandwich"),
      ("eat", "apple"), ("eat", "burger")], "food"),
    ([("hold", "racket"), ("hold", "bat"), ("hold", "camera"),
      ("hold", "umbrella"), ("hold", "knife")], "instrumentality"),
    ([("play", "soccer"), ("play", "tennis"), ("play", "baseball"),
      ("play", "basketball"), ("play", "frisbee")], "activity"),
    ([("read", "book"), ("use", "phone"), ("watch", "game"),
      ("wear", "necklace"), ("fly", "kite")], "thing"),
    ([("drink", "wine"), ("drink", "coffee"), ("drink", "juice"),
      ("drink", "milk"), ("drink", "tea")], "beverage"),
]

VERB_FORMS = {
    "ride": ("rides", "riding"), "eat": ("eats", "eating"),
    "hold": ("holds", "holding"), "play": ("plays", "playing"),
    "read": ("reads", "reading"), "use": ("uses", "using"),
    "watch": ("watches", "watching"), "wear": ("wears", "wearing"),
    "fly": ("flies", "flying"), "drink": ("drinks", "drinking"),
}


def _pair_hash(verb: str, obj: str) -> int:
    digest = hashlib.blake2b(f"{verb}:{obj}".encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def pair_description(verb: str, obj: str) -> str:
    """Deterministic template per pair; identical for all its images."""
    h = _pair_hash(verb, obj)
    subject = SUBJECTS[h % len(SUBJECTS)]
    third, gerund = VERB_FORMS[verb]
    if (h // len(SUBJECTS)) % 2 == 0:
        return f"a {subject} {third} a {obj}"
    return f"a {subject} is {gerund} a {obj}"


def _fmt(values) -> str:
    return "\t".join(repr(float(x)) for x in values)


def synth_dataset(out_dir, seed: int, n_topics: int, train_per_topic: int,
                  test_per_topic: int, noise: float, d_img: int,
                  d_w2v: int) -> dict[str, Path]:
    if not 2 <= n_topics <= len(TOPIC_POOLS):
        raise SchemaError(f"n_topics must be in [2, {len(TOPIC_POOLS)}]")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    topics = TOPIC_POOLS[:n_topics]

    topic_feat = rng.normal(size=(n_topics, d_img))
    topic_emb = rng.normal(size=(n_topics, d_w2v))
    pair_feat: dict[tuple[str, str], np.ndarray] = {}
    word_emb: dict[str, np.ndarray] = {}
    for t, (pairs, _) in enumerate(topics):
        for pair in pairs:
            pair_feat[pair] = topic_feat[t] + 0.4 * rng.normal(size=d_img)
        for verb, obj in pairs:
            for word in (verb, obj):
                if word not in word_emb:
                    word_emb[word] = (0.8 * topic_emb[t]
                                      + 0.4 * rng.normal(size=d_w2v))
    for verb in sorted({v for pairs, _ in topics for v, _ in pairs}):
        for form in VERB_FORMS[verb]:
            word_emb[form] = word_emb[verb] + 0.02 * rng.normal(size=d_w2v)
    for word in ["a", "is"] + SUBJECTS:
        word_emb.setdefault(word, 0.3 * rng.normal(size=d_w2v))

    corpus_lines = []
    feature_rows = []
    truth: dict[str, list[int]] = {}
    for t, (pairs, _) in enumerate(topics):
        for k in range(train_per_topic):
            verb, obj = pairs[k % len(pairs)]
            image_id = f"tr{t:02d}_{k:04d}"
            vec = pair_feat[(verb, obj)] + noise * rng.normal(size=d_img)
            feature_rows.append((image_id, vec))
            corpus_lines.append({"image_id": image_id,
                                 "description": pair_description(verb, obj),
                                 "split": "train"})
        for k in range(test_per_topic):
            verb, obj = pairs[k % len(pairs)]
            image_id = f"te{t:02d}_{k:04d}"
            vec = pair_feat[(verb, obj)] + noise * rng.normal(size=d_img)
            feature_rows.append((image_id, vec))
            corpus_lines.append({"image_id": image_id,
                                 "description": pair_description(verb, obj),
                                 "split": "test"})
            truth[image_id] = [t]

    paths = {}

    paths["corpus"] = out / "corpus.jsonl"
    with open(paths["corpus"], "w", encoding="utf-8") as f:
        for rec in corpus_lines:
            f.write(json.dumps(rec, sort_keys=True) + "\n")

    paths["features"] = out / "features.tsv"
    with open(paths["features"], "w", encoding="utf-8") as f:
        for image_id, vec in feature_rows:
            f.write(f"{image_id}\t{_fmt(vec)}\n")

    paths["embeddings"] = out / "embeddings.vec"
    with open(paths["embeddings"], "w", encoding="utf-8") as f:
        f.write(f"{len(word_emb)} {d_w2v}\n")
        for word in sorted(word_emb):
            f.write(word + " " + " ".join(repr(float(x)) for x in word_emb[word]) + "\n")

    paths["taxonomy"] = out / "taxonomy.tsv"
    with open(paths["taxonomy"], "w", encoding="utf-8") as f:
        for _, hypernym in topics:
            f.write(f"{hypernym}\tentity\n")
        for pairs, hypernym in topics:
            for _, obj in pairs:
                f.write(f"{obj}\t{hypernym}\n")

    paths["categories"] = out / "categories.txt"
    with open(paths["categories"], "w", encoding="utf-8") as f:
        for pairs, _ in topics:
            verb, obj = pairs[0]
            f.write(f"{verb} {obj}\n")

    paths["truth"] = out / "truth.json"
    with open(paths["truth"], "w", encoding="utf-8") as f:
        json.dump(truth, f, sort_keys=True, indent=1)
        f.write("\n")

    return paths

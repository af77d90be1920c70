"""Seed-deterministic synthetic datasets for the acceptance suites.

Each class owns a keyword vocabulary; documents mix own-class keywords
with a shared pool at a configurable overlap ratio. With zero overlap the
classes are linearly separable by bag-of-words; raising the ratio makes
the task harder in a controlled way.
"""

from __future__ import annotations

import json

import numpy as np

from khtext._util import derive_seed


def _random_token(rng: np.random.Generator, used: set[str]) -> str:
    while True:
        length = int(rng.integers(5, 10))
        tok = "".join(chr(ord("a") + int(rng.integers(26))) for _ in range(length))
        if tok not in used:
            used.add(tok)
            return tok


def synth_dataset(k: int, docs_per_class: int, vocab_per_class: int,
                  overlap_ratio: float, task: str, seed: int,
                  min_len: int = 12, max_len: int = 28) -> list[dict]:
    """Generate dataset records ({"labels": [...], "text": "..."}).

    Multiclass: one label per document. Multilabel: 1-3 labels whose
    keyword vocabularies are mixed. Same seed, same arguments: identical
    records, byte for byte once serialized.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 classes, got {k}")
    if docs_per_class < 1 or vocab_per_class < 1:
        raise ValueError("docs_per_class and vocab_per_class must be >= 1")
    if not 0.0 <= overlap_ratio < 1.0:
        raise ValueError(f"overlap_ratio must be in [0, 1), got {overlap_ratio}")
    if task not in ("multiclass", "multilabel"):
        raise ValueError(f"unknown task {task!r}")
    rng = np.random.default_rng(derive_seed(seed, "synth", task, k))
    # random-letter keywords: classes must not share obvious subword overlap
    used: set[str] = set()
    class_vocab = [[_random_token(rng, used) for _ in range(vocab_per_class)]
                   for _ in range(k)]
    shared = [_random_token(rng, used) for _ in range(max(10, vocab_per_class))]
    records = []
    for c in range(k):
        for _ in range(docs_per_class):
            if task == "multiclass":
                labels = [c]
            else:
                extra = rng.integers(0, 3)
                others = [int(o) for o in rng.permutation(k)[:extra] if o != c]
                labels = sorted({c, *others})
            n_tokens = int(rng.integers(min_len, max_len + 1))
            tokens = []
            for _ in range(n_tokens):
                if rng.random() < overlap_ratio:
                    tokens.append(shared[int(rng.integers(len(shared)))])
                else:
                    lab = labels[int(rng.integers(len(labels)))]
                    tokens.append(class_vocab[lab][int(rng.integers(vocab_per_class))])
            records.append({"labels": [f"label{i}" for i in labels],
                            "text": " ".join(tokens)})
    return records


def write_jsonl(records: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False))
            fh.write("\n")


def split_records(records: list[dict], seed: int,
                  valid_frac: float = 0.15,
                  test_frac: float = 0.15) -> tuple[list[dict], list[dict], list[dict]]:
    """Deterministic shuffled train/valid/test split."""
    rng = np.random.default_rng(derive_seed(seed, "split"))
    order = rng.permutation(len(records))
    n_valid = int(len(records) * valid_frac)
    n_test = int(len(records) * test_frac)
    valid = [records[i] for i in order[:n_valid]]
    test = [records[i] for i in order[n_valid:n_valid + n_test]]
    train = [records[i] for i in order[n_valid + n_test:]]
    return train, valid, test

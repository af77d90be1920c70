"""Khmer-aware text processing: character-cluster segmentation, subword
n-grams, the hashing trick, vocabulary construction and dataset loading.

Khmer script is written without word delimiters, so the toolkit consumes
pre-segmented text (tokens separated by spaces). What this module adds on
top is the orthographic-syllable level: a Khmer character cluster (KCC) is
a base letter plus any subscript (COENG-joined) letters and dependent
vowels/diacritics. Clusters are the natural subword unit for Khmer, the
same way characters are for Latin scripts.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field

# Khmer codepoint classes used by the cluster grammar.
_BASE_LO, _BASE_HI = 0x1780, 0x17B3          # consonants + independent vowels
_COENG = 0x17D2                               # subscript-former
_TRAIL_LO, _TRAIL_HI = 0x17B6, 0x17D1         # dependent vowels + most signs
_TRAIL_EXTRA = frozenset((0x17D3, 0x17DD))    # BATHAMASAT, ATTHACAN

BOUNDARY_START = "<"
BOUNDARY_END = ">"


def _is_base(cp: int) -> bool:
    return _BASE_LO <= cp <= _BASE_HI


def _is_trailing(cp: int) -> bool:
    return (_TRAIL_LO <= cp <= _TRAIL_HI and cp != _COENG) or cp in _TRAIL_EXTRA


def kcc_split(text: str) -> list[str]:
    """Split text into Khmer character clusters.

    A cluster starts at a Khmer base letter (U+1780..U+17B3) and greedily
    consumes COENG+letter pairs followed by dependent vowels and diacritics.
    Every other codepoint (Latin, digits, stray Khmer signs, a dangling
    COENG) becomes a singleton cluster, so the concatenation of the result
    always reproduces the input exactly.
    """
    out: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        if not _is_base(ord(text[i])):
            out.append(text[i])
            i += 1
            continue
        j = i + 1
        while j + 1 < n and ord(text[j]) == _COENG and _is_base(ord(text[j + 1])):
            j += 2
        while j < n and _is_trailing(ord(text[j])):
            j += 1
        out.append(text[i:j])
        i = j
    return out


@dataclass(frozen=True)
class SubwordConfig:
    """N-gram extraction settings.

    `unit` selects what an n-gram is a run of: raw codepoints, or Khmer
    character clusters (the default for Khmer corpora, where a single
    syllable can span several codepoints).
    """

    minn: int = 1
    maxn: int = 4
    buckets: int = 2_000_000
    unit: str = "kcc"  # "kcc" | "codepoint"

    def __post_init__(self):
        if not (1 <= self.minn <= self.maxn):
            raise ValueError(f"require 1 <= minn <= maxn, got minn={self.minn} maxn={self.maxn}")
        if self.buckets < 1:
            raise ValueError(f"buckets must be >= 1, got {self.buckets}")
        if self.unit not in ("kcc", "codepoint"):
            raise ValueError(f"unknown subword unit {self.unit!r}")

    @classmethod
    def for_unit(cls, unit: str, minn: int | None = None, maxn: int | None = None,
                 buckets: int = 2_000_000) -> "SubwordConfig":
        """Config with per-unit default n-gram lengths (codepoint: 3..6, kcc: 1..4)."""
        if unit == "codepoint":
            return cls(minn if minn is not None else 3, maxn if maxn is not None else 6,
                       buckets, unit)
        return cls(minn if minn is not None else 1, maxn if maxn is not None else 4,
                   buckets, unit)


def extract_ngrams(token: str, cfg: SubwordConfig) -> list[str]:
    """All unit n-grams of the boundary-wrapped token, grouped by length.

    The token is wrapped as "<token>" before segmentation; the run equal to
    the whole wrapped token is excluded because an in-vocabulary word is
    already represented by its own word id. Duplicate n-grams are kept
    (each occurrence contributes a bucket row).
    """
    if not token:
        raise ValueError("cannot extract n-grams from an empty token")
    if cfg.unit == "kcc":
        units = kcc_split(token)
    else:
        units = list(token)
    units = [BOUNDARY_START, *units, BOUNDARY_END]
    total = len(units)
    grams: list[str] = []
    for n in range(cfg.minn, cfg.maxn + 1):
        if n > total or n == total:
            # n == total would be the full wrapped token
            continue
        for i in range(total - n + 1):
            grams.append("".join(units[i:i + n]))
    return grams


_FNV_OFFSET = 2166136261
_FNV_PRIME = 16777619


def fnv1a_32(data: bytes) -> int:
    """FNV-1a 32-bit hash, fixed test vectors, platform independent."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


def hash_ngram(ngram: str, buckets: int) -> int:
    """Bucket id for an n-gram: FNV-1a over its UTF-8 bytes, mod buckets."""
    if buckets < 1:
        raise ValueError(f"buckets must be >= 1, got {buckets}")
    return fnv1a_32(ngram.encode("utf-8")) % buckets


def _check_token(token: str, where: str) -> str:
    if BOUNDARY_START in token or BOUNDARY_END in token:
        raise ValueError(f"{where}: token {token!r} contains a reserved boundary marker")
    return token


@dataclass
class Vocabulary:
    """Token index: dense ids ordered by (count desc, first appearance asc)."""

    words: list[tuple[str, int]]
    min_count: int
    total_tokens: int
    _ids: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._ids:
            self._ids = {tok: i for i, (tok, _) in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int | None:
        return self._ids.get(token)

    def token(self, word_id: int) -> str:
        return self.words[word_id][0]

    def count(self, word_id: int) -> int:
        return self.words[word_id][1]

    def counts(self) -> list[int]:
        return [c for _, c in self.words]


def build_vocab(corpus: Iterable[Sequence[str] | str], min_count: int = 1) -> Vocabulary:
    """Count tokens over a corpus and index those with count >= min_count.

    Corpus items may be pre-split token sequences or whitespace-separated
    lines. Ids follow descending count, ties broken by first appearance.
    """
    counts: dict[str, int] = {}
    order: dict[str, int] = {}
    seen_any = False
    for line in corpus:
        tokens = line.split() if isinstance(line, str) else line
        for tok in tokens:
            _check_token(tok, "build_vocab")
            seen_any = True
            if tok in counts:
                counts[tok] += 1
            else:
                counts[tok] = 1
                order[tok] = len(order)
    if not seen_any:
        raise ValueError("build_vocab: corpus contains no tokens")
    kept = [(tok, c) for tok, c in counts.items() if c >= min_count]
    kept.sort(key=lambda tc: (-tc[1], order[tc[0]]))
    total = sum(c for _, c in kept)
    return Vocabulary(words=kept, min_count=min_count, total_tokens=total)


@dataclass
class Document:
    """A labeled, pre-segmented document. Labels are dense ids."""

    tokens: list[str]
    labels: set[int]


def corpus_tokens(path) -> Iterator[list[str]]:
    """Yield token lists from a one-sentence-per-line UTF-8 corpus file."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tokens = line.split()
            if tokens:
                yield tokens


def align_labels(docs: list[Document], catalog: Sequence[str],
                 reference_catalog: Sequence[str]) -> list[Document]:
    """Remap a dataset's label ids onto a reference catalog (by name)."""
    ref_ids = {name: i for i, name in enumerate(reference_catalog)}
    out = []
    for doc in docs:
        remapped = set()
        for lab in doc.labels:
            name = catalog[lab]
            if name not in ref_ids:
                raise ValueError(f"label {name!r} is not in the reference catalog")
            remapped.add(ref_ids[name])
        out.append(Document(tokens=doc.tokens, labels=remapped))
    return out


def load_dataset(path, task: str | None = None) -> tuple[list[Document], list[str]]:
    """Load a JSON Lines dataset of {"labels": [...], "text": "tok tok ..."}.

    Label strings are mapped to dense ids in first-seen order; the catalog
    of label names is returned alongside the documents. With task set to
    "multiclass", records must carry exactly one label.
    """
    docs: list[Document] = []
    catalog: list[str] = []
    label_ids: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise ValueError(f"{path}: line {lineno}: record is not an object")
            labels = rec.get("labels")
            if labels is None:
                raise ValueError(f"{path}: line {lineno}: missing \"labels\"")
            if not isinstance(labels, list) or not labels or \
                    not all(isinstance(s, str) for s in labels):
                raise ValueError(f"{path}: line {lineno}: \"labels\" must be a non-empty "
                                 "array of strings")
            text = rec.get("text")
            if text is None:
                raise ValueError(f"{path}: line {lineno}: missing \"text\"")
            if not isinstance(text, str):
                raise ValueError(f"{path}: line {lineno}: \"text\" must be a string")
            if task == "multiclass" and len(set(labels)) != 1:
                raise ValueError(f"{path}: line {lineno}: multiclass record must have "
                                 f"exactly one label, got {len(set(labels))}")
            tokens = text.split()
            for tok in tokens:
                try:
                    _check_token(tok, "load_dataset")
                except ValueError as exc:
                    raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            ids = set()
            for name in labels:
                if name not in label_ids:
                    label_ids[name] = len(catalog)
                    catalog.append(name)
                ids.add(label_ids[name])
            docs.append(Document(tokens=tokens, labels=ids))
    return docs, catalog

"""Subword embeddings for Khmer: CBOW / skipgram training with negative
sampling, OOV-capable word vectors, nearest neighbors, PCA plot data and
binary persistence.

A word's input representation averages its own row with the hashed-bucket
rows of its boundary-wrapped n-grams, so unseen words and spelling variants
still land near their neighbors: most of their subword rows are shared.

The inner training loop is a compiled kernel when the extension built
(`khtext._embedding_inner`); otherwise a numpy fallback with identical
semantics is selected at import time. Check `COMPILED_KERNEL` to see which
one is active.
"""

from __future__ import annotations

import hashlib
import struct
import threading
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from khtext import _embedding_pure
from khtext._util import derive_seed
from khtext.textproc import SubwordConfig, Vocabulary, build_vocab, extract_ngrams, hash_ngram

try:
    from khtext import _embedding_inner  # noqa: F401
    COMPILED_KERNEL = True
except ImportError:
    _embedding_inner = None
    COMPILED_KERNEL = False

MAGIC = b"KTXE"
FORMAT_VERSION = 1

_MODES = ("cbow", "skipgram")
_DEFAULT_LR0 = {"cbow": 0.05, "skipgram": 0.025}


@dataclass(frozen=True)
class EmbeddingHyper:
    """Training hyperparameters. `lr0=None` resolves per mode (cbow 0.05,
    skipgram 0.025); the rest follow the common defaults for subword
    negative-sampling trainers."""

    m: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr0: float | None = None
    mode: str = "cbow"
    subword: SubwordConfig = field(default_factory=SubwordConfig)
    min_count: int = 5
    sample: float = 0.0  # frequent-word subsampling threshold; 0 disables
    seed: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.negatives < 1:
            raise ValueError(f"negatives must be >= 1, got {self.negatives}")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.lr0 is not None and self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if self.sample < 0:
            raise ValueError(f"sample must be >= 0, got {self.sample}")

    @property
    def resolved_lr0(self) -> float:
        return self.lr0 if self.lr0 is not None else _DEFAULT_LR0[self.mode]


class NoiseTable:
    """Negative-sampling noise distribution, proportional to count^0.75."""

    def __init__(self, counts: Sequence[int]):
        if len(counts) == 0:
            raise ValueError("noise table needs at least one word")
        weights = np.asarray(counts, dtype=np.float64) ** 0.75
        total = weights.sum()
        if total <= 0:
            raise ValueError("noise table weights sum to zero")
        self.probs = weights / total
        self.cumulative = np.cumsum(self.probs)
        self.cumulative[-1] = 1.0

    def __len__(self) -> int:
        return self.probs.shape[0]

    def sample(self, u: float) -> int:
        """Word id for a uniform draw u in [0, 1)."""
        idx = int(np.searchsorted(self.cumulative, u, side="right"))
        return min(idx, len(self) - 1)


def negative_sampling_loss(h: np.ndarray, u_pos: np.ndarray,
                           u_negs: np.ndarray) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss and analytic gradients for one (hidden, target) pair, float64.

    loss = -log sigmoid(u_pos.h) - sum_i log sigmoid(-u_negs[i].h)

    Returns (loss, dL/dh, dL/du_pos, dL/du_negs). This is the reference
    the training kernels implement in float32; gradient tests difference
    this function.
    """
    h = np.asarray(h, dtype=np.float64)
    u_pos = np.asarray(u_pos, dtype=np.float64)
    u_negs = np.asarray(u_negs, dtype=np.float64)
    z_pos = float(u_pos @ h)
    z_negs = u_negs @ h if u_negs.size else np.zeros(0)
    # -log sigmoid(z) == softplus(-z), computed stably
    loss = np.logaddexp(0.0, -z_pos) + np.logaddexp(0.0, z_negs).sum()
    s_pos = 1.0 / (1.0 + np.exp(-z_pos))
    s_negs = 1.0 / (1.0 + np.exp(-z_negs))
    dh = (s_pos - 1.0) * u_pos
    du_negs = np.zeros_like(u_negs)
    if u_negs.size:
        dh = dh + (s_negs[:, None] * u_negs).sum(axis=0)
        du_negs = s_negs[:, None] * h[None, :]
    du_pos = (s_pos - 1.0) * h
    return float(loss), dh, du_pos, du_negs


class EmbeddingModel:
    """Trained subword embedding: vocabulary plus the two weight matrices.

    input_matrix has |vocab| word rows followed by `buckets` n-gram rows;
    output_matrix has one row per vocabulary word.
    """

    def __init__(self, vocab: Vocabulary, hyper: EmbeddingHyper,
                 input_matrix: np.ndarray, output_matrix: np.ndarray):
        nrows = len(vocab) + hyper.subword.buckets
        if input_matrix.shape != (nrows, hyper.m):
            raise ValueError(f"input matrix shape {input_matrix.shape} != ({nrows}, {hyper.m})")
        if output_matrix.shape != (len(vocab), hyper.m):
            raise ValueError(f"output matrix shape {output_matrix.shape} != "
                             f"({len(vocab)}, {hyper.m})")
        self.vocab = vocab
        self.hyper = hyper
        self.input_matrix = input_matrix
        self.output_matrix = output_matrix
        self.epoch_losses: list[float] = []
        self._row_flat: np.ndarray | None = None
        self._row_off: np.ndarray | None = None
        self._vocab_vectors: np.ndarray | None = None
        self._content_hash: str | None = None

    # -- input-row bookkeeping -------------------------------------------

    def _input_rows_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-word input rows (word row first, then n-gram bucket rows)."""
        if self._row_flat is None:
            v = len(self.vocab)
            cfg = self.hyper.subword
            flat: list[int] = []
            off = np.zeros(v + 1, dtype=np.int64)
            for wid in range(v):
                token = self.vocab.token(wid)
                flat.append(wid)
                for gram in extract_ngrams(token, cfg):
                    flat.append(v + hash_ngram(gram, cfg.buckets))
                off[wid + 1] = len(flat)
            self._row_flat = np.asarray(flat, dtype=np.int32)
            self._row_off = off
        return self._row_flat, self._row_off

    def _oov_rows(self, token: str) -> np.ndarray:
        cfg = self.hyper.subword
        v = len(self.vocab)
        return np.asarray([v + hash_ngram(g, cfg.buckets) for g in extract_ngrams(token, cfg)],
                          dtype=np.int32)

    # -- vectors -----------------------------------------------------------

    def word_vector(self, token: str) -> np.ndarray:
        """Vector for any token; OOV tokens are built from n-gram rows alone.

        An OOV token with no n-grams (possible for very short tokens in
        codepoint mode) yields the zero vector and a RuntimeWarning.
        """
        if not token:
            raise ValueError("word_vector: empty token")
        wid = self.vocab.id_of(token)
        if wid is not None:
            flat, off = self._input_rows_csr()
            rows = flat[off[wid]:off[wid + 1]]
        else:
            rows = self._oov_rows(token)
            if rows.size == 0:
                warnings.warn(f"token {token!r} is out of vocabulary and has no n-grams; "
                              "returning a zero vector", RuntimeWarning, stacklevel=2)
                return np.zeros(self.hyper.m, dtype=np.float32)
        return self.input_matrix[rows].mean(axis=0)

    def vocab_vectors(self) -> np.ndarray:
        """word_vector for every vocabulary token, stacked by word id."""
        if self._vocab_vectors is None:
            flat, off = self._input_rows_csr()
            out = np.empty((len(self.vocab), self.hyper.m), dtype=np.float32)
            for wid in range(len(self.vocab)):
                out[wid] = self.input_matrix[flat[off[wid]:off[wid + 1]]].mean(axis=0)
            self._vocab_vectors = out
        return self._vocab_vectors

    def nearest_neighbors(self, token: str, topk: int = 10) -> list[tuple[str, float]]:
        """In-vocab tokens by cosine similarity to the query, query excluded."""
        if topk < 1:
            raise ValueError(f"topk must be >= 1, got {topk}")
        query = self.word_vector(token).astype(np.float64)
        qnorm = float(np.linalg.norm(query))
        if qnorm == 0.0:
            raise ValueError(f"query {token!r} has a zero-norm vector")
        mat = self.vocab_vectors().astype(np.float64)
        norms = np.linalg.norm(mat, axis=1)
        sims = np.zeros(len(self.vocab))
        nz = norms > 0
        sims[nz] = (mat[nz] @ query) / (norms[nz] * qnorm)
        qid = self.vocab.id_of(token)
        ids = np.arange(len(self.vocab))
        if qid is not None:
            keep = ids != qid
            sims, ids = sims[keep], ids[keep]
        order = np.lexsort((ids, -sims))[:topk]
        return [(self.vocab.token(int(ids[i])), float(sims[i])) for i in order]

    def pca_project(self, tokens: Sequence[str]) -> list[tuple[str, float, float]]:
        """2D PCA coordinates for the given tokens, in input order.

        Component signs are fixed so each component's largest-magnitude
        loading is positive, making plots reproducible across runs.
        """
        if len(tokens) < 3:
            raise ValueError(f"pca_project needs >= 3 tokens, got {len(tokens)}")
        if self.hyper.m < 2:
            raise ValueError("pca_project needs embedding dimension >= 2")
        x = np.stack([self.word_vector(t) for t in tokens]).astype(np.float64)
        xc = x - x.mean(axis=0)
        cov = xc.T @ xc / (len(tokens) - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        comps = eigvecs[:, np.argsort(eigvals)[::-1][:2]].T  # rows: top-2 components
        for i in range(2):
            j = int(np.argmax(np.abs(comps[i])))
            if comps[i, j] < 0:
                comps[i] = -comps[i]
        coords = xc @ comps.T
        return [(tok, float(coords[i, 0]), float(coords[i, 1]))
                for i, tok in enumerate(tokens)]

    # -- persistence -------------------------------------------------------

    def content_hash(self) -> str:
        """SHA-256 over vocabulary and matrices; identifies a trained model."""
        if self._content_hash is None:
            h = hashlib.sha256()
            h.update(MAGIC)
            cfg = self.hyper.subword
            h.update(struct.pack("<IIQII", self.hyper.m, cfg.minn, cfg.maxn,
                                 cfg.buckets, 1 if cfg.unit == "kcc" else 0))
            for token, count in self.vocab.words:
                raw = token.encode("utf-8")
                h.update(struct.pack("<I", len(raw)))
                h.update(raw)
                h.update(struct.pack("<Q", count))
            h.update(np.ascontiguousarray(self.input_matrix, dtype="<f4").tobytes())
            h.update(np.ascontiguousarray(self.output_matrix, dtype="<f4").tobytes())
            self._content_hash = h.hexdigest()
        return self._content_hash

    def save(self, path) -> None:
        save_model(self, path)

    def export_text(self, path) -> None:
        """Write the text vector format: header line, then token + m reals."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.vocab)} {self.hyper.m}\n")
            vecs = self.vocab_vectors()
            for wid in range(len(self.vocab)):
                vals = " ".join(format(float(x), ".6g") for x in vecs[wid])
                fh.write(f"{self.vocab.token(wid)} {vals}\n")


# -- training ---------------------------------------------------------------


def _init_matrices(vocab_size: int, hyper: EmbeddingHyper) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(derive_seed(hyper.seed, "embedding-init"))
    bound = 1.0 / hyper.m
    w_in = rng.uniform(-bound, bound,
                       size=(vocab_size + hyper.subword.buckets, hyper.m)).astype(np.float32)
    w_out = np.zeros((vocab_size, hyper.m), dtype=np.float32)
    return w_in, w_out


def _encode_corpus(sentences: list[list[str]], vocab: Vocabulary) -> list[np.ndarray]:
    encoded = []
    for sent in sentences:
        ids = [vocab.id_of(t) for t in sent]
        ids = [i for i in ids if i is not None]
        if ids:
            encoded.append(np.asarray(ids, dtype=np.int32))
    return encoded


def _flatten(encoded: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
    for i, sent in enumerate(encoded):
        offsets[i + 1] = offsets[i] + sent.shape[0]
    tokens = np.concatenate(encoded) if encoded else np.zeros(0, dtype=np.int32)
    return tokens.astype(np.int32), offsets


def _subsample(encoded: list[np.ndarray], vocab: Vocabulary, sample: float,
               seed: int) -> list[np.ndarray]:
    """Randomly drop frequent-word occurrences (word2vec-style threshold)."""
    counts = np.asarray(vocab.counts(), dtype=np.float64)
    freq = counts / vocab.total_tokens
    ratio = sample / freq
    keep_prob = np.minimum(1.0, np.sqrt(ratio) + ratio)
    rng = np.random.default_rng(seed)
    out = []
    for sent in encoded:
        mask = rng.random(sent.shape[0]) < keep_prob[sent]
        kept = sent[mask]
        if kept.size:
            out.append(kept)
    return out


def _select_kernel(backend: str | None):
    if backend in (None, "auto"):
        return _embedding_inner if COMPILED_KERNEL else _embedding_pure
    if backend in ("c", "compiled"):
        if not COMPILED_KERNEL:
            raise RuntimeError("compiled training kernel is not available; "
                               "build the extension or use backend='python'")
        return _embedding_inner
    if backend in ("python", "pure"):
        return _embedding_pure
    raise ValueError(f"unknown backend {backend!r}")


def train(corpus: Iterable[Sequence[str] | str], hyper: EmbeddingHyper,
          threads: int = 1, backend: str | None = None) -> EmbeddingModel:
    """Train an embedding model over a corpus of pre-segmented sentences.

    Each center position draws an effective radius uniformly from
    [1, window]; the loss is negative sampling against a count^0.75 noise
    distribution; the learning rate decays linearly from lr0 to zero over
    epochs * total_tokens visits. With threads > 1, shards update the
    shared matrices without locks (fast, nondeterministic); threads=1 with
    a fixed seed is bit-reproducible.
    """
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    kernel = _select_kernel(backend)
    sentences = [line.split() if isinstance(line, str) else list(line) for line in corpus]
    vocab = build_vocab(sentences, min_count=hyper.min_count)
    if len(vocab) == 0:
        raise ValueError("no tokens survive min_count filtering")
    encoded = _encode_corpus(sentences, vocab)
    if not encoded:
        raise ValueError("corpus is empty after vocabulary filtering")

    w_in, w_out = _init_matrices(len(vocab), hyper)
    model = EmbeddingModel(vocab, hyper, w_in, w_out)
    if hyper.epochs == 0:
        return model

    row_flat, row_off = model._input_rows_csr()
    noise = NoiseTable(vocab.counts())
    total_visits = hyper.epochs * vocab.total_tokens
    lr0 = hyper.resolved_lr0
    cbow = 1 if hyper.mode == "cbow" else 0

    visits_done = 0
    for epoch in range(hyper.epochs):
        epoch_sents = encoded
        if hyper.sample > 0:
            epoch_sents = _subsample(encoded, vocab, hyper.sample,
                                     derive_seed(hyper.seed, "subsample", epoch))
            if not epoch_sents:
                continue
        loss_sum = 0.0
        terms = 0
        if threads == 1:
            tokens, offsets = _flatten(epoch_sents)
            loss_sum, terms, visited = kernel.train_shard(
                w_in, w_out, tokens, offsets, row_flat, row_off, noise.cumulative,
                cbow, hyper.window, hyper.negatives, lr0, total_visits,
                visits_done, 1, derive_seed(hyper.seed, "epoch", epoch))
            visits_done += visited
        else:
            shards = [epoch_sents[i::threads] for i in range(threads)]
            results: list[tuple[float, int, int]] = [(0.0, 0, 0)] * threads
            lock = threading.Lock()

            def run(i: int, shard: list[np.ndarray]) -> None:
                tokens, offsets = _flatten(shard)
                res = kernel.train_shard(
                    w_in, w_out, tokens, offsets, row_flat, row_off, noise.cumulative,
                    cbow, hyper.window, hyper.negatives, lr0, total_visits,
                    visits_done, threads, derive_seed(hyper.seed, "epoch", epoch, i))
                with lock:
                    results[i] = res

            workers = [threading.Thread(target=run, args=(i, s))
                       for i, s in enumerate(shards) if s]
            for w in workers:
                w.start()
            for w in workers:
                w.join()
            loss_sum = sum(r[0] for r in results)
            terms = sum(r[1] for r in results)
            visits_done += sum(r[2] for r in results)
        model.epoch_losses.append(loss_sum / terms if terms else 0.0)
    return model


# -- binary format ------------------------------------------------------------


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"truncated model file while reading {what}")
    return data


def save_model(model: EmbeddingModel, path) -> None:
    """Binary model format: magic KTXE, version, hyperparameters block,
    vocabulary block, then both matrices as little-endian float32."""
    hyper = model.hyper
    cfg = hyper.subword
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<IIIIdB", hyper.m, hyper.window, hyper.negatives,
                             hyper.epochs, hyper.resolved_lr0,
                             1 if hyper.mode == "skipgram" else 0))
        fh.write(struct.pack("<IIQB", cfg.minn, cfg.maxn, cfg.buckets,
                             1 if cfg.unit == "kcc" else 0))
        fh.write(struct.pack("<IdQ", hyper.min_count, hyper.sample, hyper.seed))
        fh.write(struct.pack("<Q", len(model.vocab)))
        for token, count in model.vocab.words:
            raw = token.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", count))
        fh.write(struct.pack("<Q", model.vocab.total_tokens))
        fh.write(np.ascontiguousarray(model.input_matrix, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.output_matrix, dtype="<f4").tobytes())


def load_model(path) -> EmbeddingModel:
    """Load a model written by save_model; round-trips bit-identically."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}: expected {MAGIC.decode()} model file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}, "
                             f"expected {FORMAT_VERSION}")
        m, window, negatives, epochs, lr0, sg = struct.unpack(
            "<IIIIdB", _read_exact(fh, 25, "hyperparameters"))
        minn, maxn, buckets, kcc = struct.unpack("<IIQB", _read_exact(fh, 17, "subword config"))
        min_count, sample, seed = struct.unpack("<IdQ", _read_exact(fh, 20, "hyperparameters"))
        (n_words,) = struct.unpack("<Q", _read_exact(fh, 8, "vocabulary size"))
        words: list[tuple[str, int]] = []
        for _ in range(n_words):
            (tlen,) = struct.unpack("<I", _read_exact(fh, 4, "token length"))
            token = _read_exact(fh, tlen, "token").decode("utf-8")
            (count,) = struct.unpack("<Q", _read_exact(fh, 8, "token count"))
            words.append((token, count))
        (total_tokens,) = struct.unpack("<Q", _read_exact(fh, 8, "total tokens"))
        vocab = Vocabulary(words=words, min_count=min_count, total_tokens=total_tokens)
        hyper = EmbeddingHyper(
            m=m, window=window, negatives=negatives, epochs=epochs, lr0=lr0,
            mode="skipgram" if sg else "cbow",
            subword=SubwordConfig(minn=minn, maxn=maxn, buckets=buckets,
                                  unit="kcc" if kcc else "codepoint"),
            min_count=min_count, sample=sample, seed=seed)
        n_in = (n_words + buckets) * m
        w_in = np.frombuffer(_read_exact(fh, 4 * n_in, "input matrix"),
                             dtype="<f4").reshape(n_words + buckets, m).copy()
        w_out = np.frombuffer(_read_exact(fh, 4 * n_words * m, "output matrix"),
                              dtype="<f4").reshape(n_words, m).copy()
        return EmbeddingModel(vocab, hyper, w_in, w_out)


def word_vector(model: EmbeddingModel, token: str) -> np.ndarray:
    return model.word_vector(token)


def nearest_neighbors(model: EmbeddingModel, token: str, topk: int = 10):
    return model.nearest_neighbors(token, topk)


def pca_project(model: EmbeddingModel, tokens: Sequence[str]):
    return model.pca_project(tokens)

"""Reference pipeline the neural models are benchmarked against: TF-IDF
document vectors and a one-vs-rest linear SVM trained with the Pegasos
projected-subgradient schedule.

Being a bag-of-words model, this baseline deliberately exhibits the
classic failure modes the embedding pipeline fixes: a spelling variant or
out-of-vocabulary token gets an all-zero column overlap here but a usable
subword vector there. Tests pin that contrast down.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from khtext._util import derive_seed
from khtext.textproc import Document

MAGIC = b"KTXB"
FORMAT_VERSION = 1


class TfidfVectorizer:
    """tf * idf with the smoothed idf ln((1+N)/(1+df)) + 1, L2-normalized."""

    def __init__(self):
        self.vocabulary: dict[str, int] = {}
        self.idf: np.ndarray | None = None
        self.n_docs: int = 0

    def fit(self, docs: list[list[str]]) -> "TfidfVectorizer":
        if not docs:
            raise ValueError("fit_tfidf: empty corpus")
        self.n_docs = len(docs)
        df: dict[str, int] = {}
        for tokens in docs:
            for tok in set(tokens):
                df[tok] = df.get(tok, 0) + 1
        for tok in sorted(df):  # sorted for a stable column order
            self.vocabulary[tok] = len(self.vocabulary)
        counts = np.zeros(len(self.vocabulary))
        for tok, c in df.items():
            counts[self.vocabulary[tok]] = c
        self.idf = np.log((1.0 + self.n_docs) / (1.0 + counts)) + 1.0
        return self

    def transform(self, docs: list[list[str]]) -> np.ndarray:
        """Document-term matrix; tokens unseen at fit time are ignored."""
        if self.idf is None:
            raise ValueError("vectorizer is not fitted")
        x = np.zeros((len(docs), len(self.vocabulary)))
        for i, tokens in enumerate(docs):
            for tok in tokens:
                col = self.vocabulary.get(tok)
                if col is not None:
                    x[i, col] += 1.0
        x *= self.idf
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        np.divide(x, norms, out=x, where=norms > 0)
        return x


def fit_tfidf(docs: list[list[str]]) -> TfidfVectorizer:
    return TfidfVectorizer().fit(docs)


def svm_objective(x: np.ndarray, y: np.ndarray, w: np.ndarray, b: float,
                  lam: float) -> float:
    """Regularized hinge objective: lam/2 ||w||^2 + mean hinge loss."""
    margins = y * (x @ w + b)
    return 0.5 * lam * float(w @ w) + float(np.maximum(0.0, 1.0 - margins).mean())


def pegasos_step(w: np.ndarray, b: float, x_i: np.ndarray, y_i: float,
                 lam: float, t: int) -> tuple[np.ndarray, float]:
    """One projected subgradient step with learning rate 1/(lam*t).

    w <- (1 - 1/t) w + [margin < 1] * (1/(lam*t)) * y_i x_i, then projected
    onto the ball of radius 1/sqrt(lam). The bias takes the unregularized
    hinge subgradient and is not projected.
    """
    eta = 1.0 / (lam * t)
    margin = y_i * (float(x_i @ w) + b)
    w = (1.0 - eta * lam) * w
    if margin < 1.0:
        w = w + eta * y_i * x_i
        b = b + eta * y_i
    norm = float(np.linalg.norm(w))
    radius = 1.0 / np.sqrt(lam)
    if norm > radius:
        w = w * (radius / norm)
    return w, b


def _pegasos_binary(x: np.ndarray, y: np.ndarray, lam: float, epochs: int,
                    seed: int) -> tuple[np.ndarray, float, list[float]]:
    """Pegasos over one binary problem; also reports the objective of the
    averaged iterate after each epoch."""
    n, dim = x.shape
    rng = np.random.default_rng(seed)
    w = np.zeros(dim)
    b = 0.0
    w_sum = np.zeros(dim)
    b_sum = 0.0
    t = 0
    objectives = []
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            w, b = pegasos_step(w, b, x[i], float(y[i]), lam, t)
            w_sum += w
            b_sum += b
        objectives.append(svm_objective(x, y, w_sum / t, b_sum / t, lam))
    return w_sum / max(t, 1), b_sum / max(t, 1), objectives


@dataclass
class SvmModel:
    """One-vs-rest linear SVM: a weight vector and bias per class."""

    weights: np.ndarray  # (k, dim)
    biases: np.ndarray   # (k,)
    lam: float
    epochs: int
    task: str
    objectives: list[list[float]] = field(default_factory=list, repr=False)

    def scores(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights.T + self.biases

    def predict(self, x: np.ndarray) -> list[set[int]]:
        s = self.scores(x)
        out = []
        for row in s:
            if self.task == "multiclass":
                out.append({int(np.argmax(row))})
            else:
                chosen = {int(i) for i in np.nonzero(row > 0.0)[0]}
                out.append(chosen if chosen else {int(np.argmax(row))})
        return out


def train_svm(x: np.ndarray, y, lam: float, epochs: int, task: str, k: int,
              seed: int = 1) -> SvmModel:
    """Train k one-vs-rest binary Pegasos problems.

    y is an int label per row (multiclass) or an iterable of label sets
    (multilabel). Requires k >= 2 for multiclass.
    """
    if task not in ("multiclass", "multilabel"):
        raise ValueError(f"unknown task {task!r}")
    n = x.shape[0]
    khot = np.full((n, k), -1.0)
    if task == "multiclass":
        y = np.asarray(y, dtype=np.int64)
        if len(set(y.tolist())) < 2:
            raise ValueError("multiclass SVM needs at least 2 distinct classes in the data")
        khot[np.arange(n), y] = 1.0
    else:
        for i, labels in enumerate(y):
            for c in labels:
                khot[i, c] = 1.0
    weights = np.zeros((k, x.shape[1]))
    biases = np.zeros(k)
    objectives = []
    for c in range(k):
        w, b, obj = _pegasos_binary(x, khot[:, c], lam, epochs,
                                    derive_seed(seed, "svm", c))
        weights[c] = w
        biases[c] = b
        objectives.append(obj)
    return SvmModel(weights=weights, biases=biases, lam=lam, epochs=epochs,
                    task=task, objectives=objectives)


@dataclass
class BaselineModel:
    """Fitted TF-IDF vectorizer + SVM, with the label catalog for reports."""

    vectorizer: TfidfVectorizer
    svm: SvmModel
    label_catalog: list[str]

    def predict_docs(self, docs: list[Document]) -> list[set[int]]:
        x = self.vectorizer.transform([d.tokens for d in docs])
        return self.svm.predict(x)


def train_baseline(docs: list[Document], task: str, k: int, lam: float = 1e-4,
                   epochs: int = 20, seed: int = 1,
                   label_catalog: list[str] | None = None) -> BaselineModel:
    vec = fit_tfidf([d.tokens for d in docs])
    x = vec.transform([d.tokens for d in docs])
    if task == "multiclass":
        y = [next(iter(d.labels)) for d in docs]
    else:
        y = [d.labels for d in docs]
    svm = train_svm(x, y, lam, epochs, task, k, seed=seed)
    return BaselineModel(vectorizer=vec, svm=svm, label_catalog=list(label_catalog or []))


def save_baseline(model: BaselineModel, path) -> None:
    header = {
        "task": model.svm.task, "lam": model.svm.lam, "epochs": model.svm.epochs,
        "k": int(model.svm.weights.shape[0]), "dim": int(model.svm.weights.shape[1]),
        "n_docs": model.vectorizer.n_docs,
        "vocabulary": list(model.vectorizer.vocabulary.keys()),
        "labels": model.label_catalog,
    }
    blob = json.dumps(header, ensure_ascii=False).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.vectorizer.idf, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.svm.weights, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.svm.biases, dtype="<f8").tobytes())


def load_baseline(path) -> BaselineModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}: expected {MAGIC.decode()} baseline file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported baseline format version {version}")
        (blen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blen))
        dim, k = header["dim"], header["k"]
        vec = TfidfVectorizer()
        vec.n_docs = header["n_docs"]
        vec.vocabulary = {tok: i for i, tok in enumerate(header["vocabulary"])}
        raw = fh.read(8 * dim)
        if len(raw) != 8 * dim:
            raise ValueError("truncated baseline file while reading idf")
        vec.idf = np.frombuffer(raw, dtype="<f8").copy()
        raw = fh.read(8 * k * dim)
        if len(raw) != 8 * k * dim:
            raise ValueError("truncated baseline file while reading weights")
        weights = np.frombuffer(raw, dtype="<f8").reshape(k, dim).copy()
        raw = fh.read(8 * k)
        if len(raw) != 8 * k:
            raise ValueError("truncated baseline file while reading biases")
        biases = np.frombuffer(raw, dtype="<f8").copy()
        svm = SvmModel(weights=weights, biases=biases, lam=header["lam"],
                       epochs=header["epochs"], task=header["task"])
        return BaselineModel(vectorizer=vec, svm=svm, label_catalog=header["labels"])

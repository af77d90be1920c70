"""The three document classifiers built on frozen embedding vectors:
linear (mean-of-embeddings + hidden layer), bidirectional LSTM, and
CNN with per-size max pooling. Handles batching/padding, multi-class and
multi-label training, prediction and binary persistence.

Embedding rows stay frozen during training (an optional fine-tune flag
exists but is off by default), so classifier parameter counts match
`nn.count_parameters` exactly and a model can be paired at prediction
time with the embedding it was trained against via a content hash.
"""

from __future__ import annotations

import copy
import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from khtext import nn
from khtext._util import derive_seed
from khtext.embedding import EmbeddingModel
from khtext.evalkit import evaluate_multiclass, evaluate_multilabel
from khtext.textproc import Document

MAGIC = b"KTXC"
FORMAT_VERSION = 1

_ARCHS = ("linear", "birnn", "cnn")
_TASKS = ("multiclass", "multilabel")


@dataclass(frozen=True)
class ClassifierConfig:
    arch: str
    task: str
    k: int
    m: int
    h: int = 100
    h_lin: int = 200
    conv: nn.ConvSpec = field(default_factory=nn.ConvSpec)
    dropout_p: float = 0.5
    optimizer: str = "adam"  # "adam" | "sgd"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 32
    seed: int = 1
    max_len: int = 256
    fine_tune: bool = False

    def __post_init__(self):
        if self.arch not in _ARCHS:
            raise ValueError(f"arch must be one of {_ARCHS}, got {self.arch!r}")
        if self.task not in _TASKS:
            raise ValueError(f"task must be one of {_TASKS}, got {self.task!r}")
        min_k = 2 if self.task == "multiclass" else 1
        if self.k < min_k:
            raise ValueError(f"{self.task} needs k >= {min_k}, got {self.k}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.arch == "cnn" and self.max_len < max(self.conv.sizes):
            raise ValueError("max_len must cover the largest conv window")

    @property
    def min_rows(self) -> int:
        return max(self.conv.sizes) if self.arch == "cnn" else 1


def init_weights(config: ClassifierConfig) -> dict[str, np.ndarray]:
    """Fresh weight tensors for the configured architecture."""
    rng = np.random.default_rng(derive_seed(config.seed, "classifier-init", config.arch))
    k, m = config.k, config.m
    if config.arch == "linear":
        return {
            "w1": nn.glorot_uniform((config.h_lin, m), m, config.h_lin, rng),
            "b1": np.zeros(config.h_lin),
            "w2": nn.glorot_uniform((k, config.h_lin), config.h_lin, k, rng),
            "b2": np.zeros(k),
        }
    if config.arch == "birnn":
        fwd = nn.init_lstm_dir(m, config.h, rng)
        bwd = nn.init_lstm_dir(m, config.h, rng)
        return {
            "fwd_w_x": fwd.w_x, "fwd_w_h": fwd.w_h, "fwd_b_x": fwd.b_x, "fwd_b_h": fwd.b_h,
            "bwd_w_x": bwd.w_x, "bwd_w_h": bwd.w_h, "bwd_b_x": bwd.b_x, "bwd_b_h": bwd.b_h,
            "w_out": nn.glorot_uniform((k, 2 * config.h), 2 * config.h, k, rng),
            "b_out": np.zeros(k),
        }
    weights: dict[str, np.ndarray] = {}
    f = config.conv.filters
    for si, s in enumerate(config.conv.sizes):
        weights[f"conv{si}_w"] = nn.glorot_uniform((f, s, m), s * m, f, rng)
        weights[f"conv{si}_b"] = np.zeros(f)
    total = len(config.conv.sizes) * f
    weights["w_out"] = nn.glorot_uniform((k, total), total, k, rng)
    weights["b_out"] = np.zeros(k)
    return weights


class ClassifierModel:
    """Architecture config plus weight tensors and the label catalog."""

    def __init__(self, config: ClassifierConfig, weights: dict[str, np.ndarray],
                 label_catalog: list[str], embedding_hash: str):
        self.config = config
        self.weights = weights
        self.label_catalog = label_catalog
        self.embedding_hash = embedding_hash
        self.history: list[dict] = []

    def num_parameters(self) -> int:
        return sum(w.size for w in self.weights.values())

    def _lstm_params(self) -> nn.BiLstmParams:
        w = self.weights
        return nn.BiLstmParams(
            fwd=nn.LstmDirParams(w["fwd_w_x"], w["fwd_w_h"], w["fwd_b_x"], w["fwd_b_h"]),
            bwd=nn.LstmDirParams(w["bwd_w_x"], w["bwd_w_h"], w["bwd_b_x"], w["bwd_b_h"]))

    def _conv_params(self) -> nn.ConvParams:
        sizes = self.config.conv.sizes
        return nn.ConvParams(
            filters=[self.weights[f"conv{si}_w"] for si in range(len(sizes))],
            biases=[self.weights[f"conv{si}_b"] for si in range(len(sizes))])


@dataclass
class DocMatrix:
    """A vectorized document: embedding rows (possibly padded) + true length."""

    data: np.ndarray
    length: int


def vectorize(doc: Document, embedding: EmbeddingModel,
              config: ClassifierConfig) -> DocMatrix:
    """Embedding matrix for a document: one row per token, truncated at
    max_len, zero-padded up to the largest conv window when needed."""
    if not doc.tokens:
        raise ValueError("cannot vectorize an empty document")
    tokens = doc.tokens[:config.max_len]
    rows = np.zeros((max(len(tokens), config.min_rows), config.m))
    for t, token in enumerate(tokens):
        rows[t] = embedding.word_vector(token).astype(np.float64)
    return DocMatrix(data=rows, length=len(tokens))


def _assemble_batch(mats: list[DocMatrix], config: ClassifierConfig):
    lengths = np.asarray([dm.length for dm in mats], dtype=np.int64)
    t_max = max(int(lengths.max()), config.min_rows)
    x = np.zeros((len(mats), t_max, config.m))
    for i, dm in enumerate(mats):
        x[i, :dm.data.shape[0]] = dm.data
    return x, lengths


def _forward(model: ClassifierModel, x: np.ndarray, lengths: np.ndarray,
             rng: np.random.Generator | None, train: bool):
    """Scores for a padded batch; returns (scores, cache for backward)."""
    cfg = model.config
    w = model.weights
    cache: dict = {"x": x, "lengths": lengths}
    p = cfg.dropout_p if train else 0.0
    if cfg.arch == "linear":
        mask = (np.arange(x.shape[1])[None, :] < lengths[:, None]).astype(np.float64)
        mean = (x * mask[:, :, None]).sum(axis=1) / lengths[:, None]
        a1 = nn.affine_forward(mean, w["w1"], w["b1"])
        r1 = nn.relu(a1)
        d1, dmask = nn.dropout(r1, p, rng, train) if train else (r1, None)
        scores = nn.affine_forward(d1, w["w2"], w["b2"])
        cache.update(mask=mask, mean=mean, a1=a1, d1=d1, dmask=dmask)
    elif cfg.arch == "birnn":
        params = model._lstm_params()
        h_f, cache_f = nn.lstm_sequence(x, lengths, params.fwd)
        x_rev = nn.reverse_padded(x, lengths)
        h_b, cache_b = nn.lstm_sequence(x_rev, lengths, params.bwd)
        enc = np.concatenate([h_f, h_b], axis=1)
        d1, dmask = nn.dropout(enc, p, rng, train) if train else (enc, None)
        scores = nn.affine_forward(d1, w["w_out"], w["b_out"])
        cache.update(cache_f=cache_f, cache_b=cache_b, d1=d1, dmask=dmask)
    else:
        efflens = np.maximum(lengths, cfg.min_rows)
        pooled, conv_cache = nn.conv_maxpool_batch(x, efflens, cfg.conv, model._conv_params())
        d1, dmask = nn.dropout(pooled, p, rng, train) if train else (pooled, None)
        scores = nn.affine_forward(d1, w["w_out"], w["b_out"])
        cache.update(conv_cache=conv_cache, d1=d1, dmask=dmask)
    return scores, cache


def _backward(model: ClassifierModel, dscores: np.ndarray, cache: dict,
              need_dx: bool = False):
    """Gradients for every weight tensor (and dX when fine-tuning)."""
    cfg = model.config
    w = model.weights
    x, lengths = cache["x"], cache["lengths"]
    grads: dict[str, np.ndarray] = {}
    if cfg.arch == "linear":
        dd1, grads["w2"], grads["b2"] = nn.affine_backward(dscores, cache["d1"], w["w2"])
        dr1 = nn.dropout_backward(dd1, cache["dmask"])
        da1 = nn.relu_backward(dr1, cache["a1"])
        dmean, grads["w1"], grads["b1"] = nn.affine_backward(da1, cache["mean"], w["w1"])
        dx = None
        if need_dx:
            dx = cache["mask"][:, :, None] * (dmean / lengths[:, None])[:, None, :]
    elif cfg.arch == "birnn":
        dd1, grads["w_out"], grads["b_out"] = nn.affine_backward(dscores, cache["d1"], w["w_out"])
        denc = nn.dropout_backward(dd1, cache["dmask"])
        h = cfg.h
        dx_f, gf = nn.lstm_sequence_backward(denc[:, :h], cache["cache_f"])
        dx_r, gb = nn.lstm_sequence_backward(denc[:, h:], cache["cache_b"])
        for name, g in gf.items():
            grads[f"fwd_{name}"] = g
        for name, g in gb.items():
            grads[f"bwd_{name}"] = g
        dx = dx_f + nn.reverse_padded(dx_r, lengths)
        if not need_dx:
            dx = None
    else:
        dd1, grads["w_out"], grads["b_out"] = nn.affine_backward(dscores, cache["d1"], w["w_out"])
        dpooled = nn.dropout_backward(dd1, cache["dmask"])
        dx_conv, conv_grads = nn.conv_maxpool_batch_backward(dpooled, cache["conv_cache"])
        for si in range(len(cfg.conv.sizes)):
            grads[f"conv{si}_w"] = conv_grads.filters[si]
            grads[f"conv{si}_b"] = conv_grads.biases[si]
        dx = dx_conv if need_dx else None
    return grads, dx


def forward(model: ClassifierModel, docmat: DocMatrix) -> np.ndarray:
    """Inference scores (raw logits) for one vectorized document."""
    x, lengths = _assemble_batch([docmat], model.config)
    scores, _ = _forward(model, x, lengths, None, train=False)
    return scores[0]


def _doc_targets(docs: list[Document], config: ClassifierConfig):
    for doc in docs:
        for lab in doc.labels:
            if not 0 <= lab < config.k:
                raise ValueError(f"label id {lab} out of range for k={config.k}")
    if config.task == "multiclass":
        for doc in docs:
            if len(doc.labels) != 1:
                raise ValueError("multiclass documents must carry exactly one label")
        return np.asarray([next(iter(d.labels)) for d in docs], dtype=np.int64)
    targets = np.zeros((len(docs), config.k))
    for i, doc in enumerate(docs):
        for lab in doc.labels:
            targets[i, lab] = 1.0
    return targets


def _fine_tune_rows(docs_batch, dx, lengths, embedding: EmbeddingModel, lr: float):
    """Push dX down into the shared embedding rows by plain SGD."""
    for bi, doc in enumerate(docs_batch):
        for t in range(int(lengths[bi])):
            rows = embedding_token_rows(embedding, doc.tokens[t])
            if rows is None or rows.size == 0:
                continue
            update = (lr / rows.size) * dx[bi, t]
            np.subtract.at(embedding.input_matrix, rows, update.astype(np.float32))
    embedding._content_hash = None
    embedding._vocab_vectors = None


def embedding_token_rows(embedding: EmbeddingModel, token: str) -> np.ndarray | None:
    wid = embedding.vocab.id_of(token)
    if wid is not None:
        flat, off = embedding._input_rows_csr()
        return flat[off[wid]:off[wid + 1]]
    rows = embedding._oov_rows(token)
    return rows if rows.size else None


def train_classifier(dataset: list[Document], embedding: EmbeddingModel,
                     config: ClassifierConfig,
                     valid: list[Document] | None = None,
                     label_catalog: list[str] | None = None) -> ClassifierModel:
    """Mini-batch training with the configured optimizer and loss.

    Documents are bucketed by length to limit padding; per-epoch training
    loss is recorded and, when a validation set is given, the epoch with
    the best validation macro-F1 is the one retained.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    targets = _doc_targets(dataset, config)
    if valid:
        _doc_targets(valid, config)

    weights = init_weights(config)
    if config.m != embedding.hyper.m:
        raise ValueError(f"config.m={config.m} != embedding dimension {embedding.hyper.m}")
    model = ClassifierModel(config, weights, list(label_catalog or []), "")
    if config.optimizer == "adam":
        opt = nn.Adam(weights, lr=config.lr, beta1=config.beta1,
                      beta2=config.beta2, eps=config.eps)
    else:
        opt = nn.Sgd(weights, lr=config.lr)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mats = [vectorize(doc, embedding, config) for doc in dataset]
    order = np.argsort([dm.length for dm in mats], kind="stable")
    batches = [order[i:i + config.batch_size]
               for i in range(0, len(order), config.batch_size)]
    rng = np.random.default_rng(derive_seed(config.seed, "classifier-train", config.arch))

    best_f1 = -1.0
    best_weights = None
    for epoch in range(config.epochs):
        perm = rng.permutation(len(batches))
        epoch_loss = 0.0
        n_batches = 0
        for b_idx in perm:
            idx = batches[b_idx]
            batch_mats = [mats[i] for i in idx]
            if config.fine_tune:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    batch_mats = [vectorize(dataset[i], embedding, config) for i in idx]
            x, lengths = _assemble_batch(batch_mats, config)
            scores, cache = _forward(model, x, lengths, rng, train=True)
            if config.task == "multiclass":
                loss, dscores = nn.cross_entropy_batch(scores, targets[idx])
            else:
                loss, dscores = nn.binary_cross_entropy(scores, targets[idx])
            if not np.isfinite(loss):
                raise RuntimeError(f"NaN/Inf loss at epoch {epoch}, batch {n_batches}; "
                                   "try a lower learning rate")
            grads, dx = _backward(model, dscores, cache, need_dx=config.fine_tune)
            opt.step(grads)
            if config.fine_tune and dx is not None:
                _fine_tune_rows([dataset[i] for i in idx], dx, lengths,
                                embedding, config.lr)
            epoch_loss += loss
            n_batches += 1
        record = {"epoch": epoch, "train_loss": epoch_loss / max(n_batches, 1)}
        if valid:
            val_report = evaluate_model(model, valid, embedding, check_hash=False)
            record["valid_macro_f1"] = val_report.macro_f1
            if val_report.macro_f1 > best_f1:
                best_f1 = val_report.macro_f1
                best_weights = copy.deepcopy(weights)
        model.history.append(record)
    if best_weights is not None:
        model.weights = best_weights
    model.embedding_hash = embedding.content_hash()
    return model


def _probabilities(model: ClassifierModel, scores: np.ndarray) -> np.ndarray:
    if model.config.task == "multiclass":
        return nn.softmax(scores)
    return nn.sigmoid(scores)


def _decide(model: ClassifierModel, probs: np.ndarray) -> set[int]:
    if model.config.task == "multiclass":
        return {int(np.argmax(probs))}
    chosen = {int(i) for i in np.nonzero(probs >= 0.5)[0]}
    if not chosen:
        chosen = {int(np.argmax(probs))}  # documents always carry >= 1 label
    return chosen


def predict(model: ClassifierModel, doc: Document,
            embedding: EmbeddingModel) -> tuple[set[int], np.ndarray]:
    """Predicted label set and per-class probabilities for one document."""
    if model.embedding_hash and embedding.content_hash() != model.embedding_hash:
        raise ValueError("embedding model does not match the one this classifier "
                         "was trained with (content hash mismatch)")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        docmat = vectorize(doc, embedding, model.config)
    scores = forward(model, docmat)
    probs = _probabilities(model, scores)
    return _decide(model, probs), probs


def evaluate_model(model: ClassifierModel, docs: list[Document],
                   embedding: EmbeddingModel, check_hash: bool = True):
    """MetricsReport for a labeled document set."""
    if check_hash and model.embedding_hash and \
            embedding.content_hash() != model.embedding_hash:
        raise ValueError("embedding model does not match the one this classifier "
                         "was trained with (content hash mismatch)")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mats = [vectorize(doc, embedding, model.config) for doc in docs]
    preds: list[set[int]] = []
    # batched inference, bucketed by length like training
    order = np.argsort([dm.length for dm in mats], kind="stable")
    pred_by_pos: dict[int, set[int]] = {}
    for i in range(0, len(order), model.config.batch_size):
        idx = order[i:i + model.config.batch_size]
        x, lengths = _assemble_batch([mats[j] for j in idx], model.config)
        scores, _ = _forward(model, x, lengths, None, train=False)
        probs = _probabilities(model, scores)
        for row, j in enumerate(idx):
            pred_by_pos[int(j)] = _decide(model, probs[row])
    preds = [pred_by_pos[i] for i in range(len(docs))]
    if model.config.task == "multiclass":
        truth = [next(iter(d.labels)) for d in docs]
        flat_preds = [next(iter(p)) for p in preds]
        return evaluate_multiclass(truth, flat_preds, model.config.k, model.label_catalog)
    return evaluate_multilabel([d.labels for d in docs], preds, model.config.k,
                               model.label_catalog)


# -- persistence ---------------------------------------------------------------


def save_classifier(model: ClassifierModel, path) -> None:
    """Binary format: magic KTXC, version, embedding hash, config and label
    catalog as JSON blocks, then named float64 weight tensors."""
    cfg = model.config
    header = {
        "arch": cfg.arch, "task": cfg.task, "k": cfg.k, "m": cfg.m, "h": cfg.h,
        "h_lin": cfg.h_lin, "conv_sizes": list(cfg.conv.sizes),
        "conv_filters": cfg.conv.filters, "dropout_p": cfg.dropout_p,
        "optimizer": cfg.optimizer, "lr": cfg.lr, "beta1": cfg.beta1,
        "beta2": cfg.beta2, "eps": cfg.eps, "epochs": cfg.epochs,
        "batch_size": cfg.batch_size, "seed": cfg.seed, "max_len": cfg.max_len,
        "fine_tune": cfg.fine_tune,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        for block in (model.embedding_hash.encode(),
                      json.dumps(header, ensure_ascii=False).encode(),
                      json.dumps(model.label_catalog, ensure_ascii=False).encode()):
            fh.write(struct.pack("<I", len(block)))
            fh.write(block)
        fh.write(struct.pack("<I", len(model.weights)))
        for name, arr in model.weights.items():
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"truncated classifier file while reading {what}")
    return data


def load_classifier(path) -> ClassifierModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}: expected {MAGIC.decode()} classifier file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported classifier format version {version}, "
                             f"expected {FORMAT_VERSION}")
        blocks = []
        for what in ("embedding hash", "config", "label catalog"):
            (blen,) = struct.unpack("<I", _read_exact(fh, 4, what))
            blocks.append(_read_exact(fh, blen, what))
        embedding_hash = blocks[0].decode()
        header = json.loads(blocks[1])
        catalog = json.loads(blocks[2])
        config = ClassifierConfig(
            arch=header["arch"], task=header["task"], k=header["k"], m=header["m"],
            h=header["h"], h_lin=header["h_lin"],
            conv=nn.ConvSpec(sizes=tuple(header["conv_sizes"]),
                             filters=header["conv_filters"]),
            dropout_p=header["dropout_p"], optimizer=header["optimizer"],
            lr=header["lr"], beta1=header["beta1"], beta2=header["beta2"],
            eps=header["eps"], epochs=header["epochs"], batch_size=header["batch_size"],
            seed=header["seed"], max_len=header["max_len"], fine_tune=header["fine_tune"])
        (n_weights,) = struct.unpack("<I", _read_exact(fh, 4, "weight count"))
        weights: dict[str, np.ndarray] = {}
        for _ in range(n_weights):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, "weight name length"))
            name = _read_exact(fh, nlen, "weight name").decode()
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "weight rank"))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "weight shape"))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 8 * count, f"weights for {name}"),
                                 dtype="<f8").reshape(shape).copy()
            weights[name] = data
        model = ClassifierModel(config, weights, catalog, embedding_hash)
        return model

"""Minimal dense numerics for the classifiers: affine, bidirectional LSTM,
1D convolution over embedding sequences with max pooling, the usual
activations, dropout, and the two losses. Every layer ships its analytic
backward pass; finite-difference tests pin them down.

All math is float64 numpy. Batched sequence layers carry per-document true
lengths so padding never leaks into the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


# -- activations --------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction for stability."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = x - x.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def dropout(x: np.ndarray, p: float, rng: np.random.Generator,
            train: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout: zero entries with prob p, scale survivors by 1/(1-p).

    Returns (output, mask); in inference mode the identity with mask None.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout prob must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return dy if mask is None else dy * mask


# -- affine -------------------------------------------------------------------


def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = W x + b; x may carry leading batch axes."""
    x, w, b = (np.asarray(a, dtype=np.float64) for a in (x, w, b))
    if x.shape[-1] != w.shape[1] or w.shape[0] != b.shape[0]:
        raise ValueError(f"affine shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    return x @ w.T + b


def affine_backward(dy: np.ndarray, x: np.ndarray,
                    w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dy2 = dy.reshape(-1, w.shape[0])
    x2 = x.reshape(-1, w.shape[1])
    dw = dy2.T @ x2
    db = dy2.sum(axis=0)
    dx = dy @ w
    return dx, dw, db


# -- losses -------------------------------------------------------------------


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Multiclass loss -log softmax(logits)[label] and its gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[-1]
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for {k} classes")
    shifted = logits - logits.max()
    lse = float(np.log(np.exp(shifted).sum()))
    loss = lse - float(shifted[label])
    grad = softmax(logits)
    grad[label] -= 1.0
    return loss, grad


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch; gradient has the 1/B factor folded in."""
    logits = np.asarray(logits, dtype=np.float64)
    b, k = logits.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float((lse - shifted[np.arange(b), labels]).mean())
    grad = softmax(logits)
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


def binary_cross_entropy(logits: np.ndarray,
                         targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean-over-components sigmoid BCE in the stable log-sum-exp form.

    loss = mean_i [ max(z_i, 0) - z_i t_i + log(1 + exp(-|z_i|)) ]
    grad = (sigmoid(z) - t) / k
    """
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if z.shape != t.shape:
        raise ValueError(f"shape mismatch: logits {z.shape} vs targets {t.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("targets must be 0/1")
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    loss = float(per.mean())
    grad = (sigmoid(z) - t) / z.shape[-1]
    if z.ndim == 2:  # batch: fold the mean over rows into the gradient
        grad = grad / z.shape[0]
    return loss, grad


# -- LSTM ---------------------------------------------------------------------


@dataclass
class LstmDirParams:
    """One direction's cell parameters, gate order (input, forget, cell, output).

    Both bias vectors enter the pre-activation (z = W_x x + W_h h + b_x + b_h),
    so one direction carries 4*(m*h + h*h + 2*h) trainables.
    """

    w_x: np.ndarray  # (4h, m)
    w_h: np.ndarray  # (4h, h)
    b_x: np.ndarray  # (4h,)
    b_h: np.ndarray  # (4h,)

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b_x": self.b_x, "b_h": self.b_h}


@dataclass
class BiLstmParams:
    fwd: LstmDirParams
    bwd: LstmDirParams


def lstm_step(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              params: LstmDirParams) -> tuple[np.ndarray, np.ndarray]:
    """Single LSTM cell update for one input vector."""
    h = params.hidden_size
    if x.shape[-1] != params.w_x.shape[1] or h_prev.shape[-1] != h or c_prev.shape[-1] != h:
        raise ValueError("lstm_step shape mismatch")
    z = params.w_x @ x + params.w_h @ h_prev + params.b_x + params.b_h
    i = sigmoid(z[:h])
    f = sigmoid(z[h:2 * h])
    g = np.tanh(z[2 * h:3 * h])
    o = sigmoid(z[3 * h:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def lstm_sequence(x: np.ndarray, lengths: np.ndarray,
                  params: LstmDirParams) -> tuple[np.ndarray, dict]:
    """Run one direction over a padded batch (B, T, m); a document's state
    freezes once t reaches its true length. Returns the final hidden state
    (B, h) and the cache for the backward pass."""
    b, t_max, _ = x.shape
    h = params.hidden_size
    hs = np.zeros((b, h))
    cs = np.zeros((b, h))
    cache = {"x": x, "lengths": lengths, "params": params, "steps": []}
    for t in range(t_max):
        mask = (lengths > t).astype(np.float64)[:, None]
        z = x[:, t] @ params.w_x.T + hs @ params.w_h.T + params.b_x + params.b_h
        i = sigmoid(z[:, :h])
        f = sigmoid(z[:, h:2 * h])
        g = np.tanh(z[:, 2 * h:3 * h])
        o = sigmoid(z[:, 3 * h:])
        new_c = f * cs + i * g
        new_h = o * np.tanh(new_c)
        cache["steps"].append((mask, hs, cs, i, f, g, o, new_c))
        hs = mask * new_h + (1.0 - mask) * hs
        cs = mask * new_c + (1.0 - mask) * cs
    return hs, cache


def lstm_sequence_backward(dh_final: np.ndarray,
                           cache: dict) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Backprop through lstm_sequence. Returns dX and parameter gradients."""
    x = cache["x"]
    params: LstmDirParams = cache["params"]
    b, t_max, _ = x.shape
    h = params.hidden_size
    dx = np.zeros_like(x)
    dw_x = np.zeros_like(params.w_x)
    dw_h = np.zeros_like(params.w_h)
    db = np.zeros(4 * h)
    dh = dh_final.copy()
    dc = np.zeros((b, h))
    for t in range(t_max - 1, -1, -1):
        mask, h_prev, c_prev, i, f, g, o, new_c = cache["steps"][t]
        tanh_c = np.tanh(new_c)
        dnew_h = dh * mask
        dh_carry = dh * (1.0 - mask)
        do = dnew_h * tanh_c
        dnew_c = dc * mask + dnew_h * o * (1.0 - tanh_c ** 2)
        dc_carry = dc * (1.0 - mask)
        df = dnew_c * c_prev
        di = dnew_c * g
        dg = dnew_c * i
        dc = dnew_c * f + dc_carry
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                             dg * (1 - g ** 2), do * o * (1 - o)], axis=1)
        dw_x += dz.T @ x[:, t]
        dw_h += dz.T @ h_prev
        db += dz.sum(axis=0)
        dx[:, t] = dz @ params.w_x
        dh = dz @ params.w_h + dh_carry
    # b_x and b_h enter the pre-activation as a sum: identical gradients
    return dx, {"w_x": dw_x, "w_h": dw_h, "b_x": db, "b_h": db.copy()}


def reverse_padded(x: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse each document's rows within its true length; pads stay put."""
    out = np.zeros_like(x)
    for idx, n in enumerate(lengths):
        n = int(n)
        out[idx, :n] = x[idx, n - 1::-1]
    return out


def bilstm_encode(seq: np.ndarray, params: BiLstmParams) -> np.ndarray:
    """Concat of the forward direction's last hidden state and the backward
    direction's state at the first position, for a single sequence."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError("bilstm_encode needs a non-empty (n, m) sequence")
    n = seq.shape[0]
    lengths = np.asarray([n])
    x = seq[None, :, :]
    h_f, _ = lstm_sequence(x, lengths, params.fwd)
    h_b, _ = lstm_sequence(reverse_padded(x, lengths), lengths, params.bwd)
    return np.concatenate([h_f[0], h_b[0]])


# -- convolution + max pooling -------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    """Filter window sizes (each spanning the full embedding width) and the
    number of filters per size."""

    sizes: tuple[int, ...] = (2, 3, 4)
    filters: int = 50

    def __post_init__(self):
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError(f"window sizes must be >= 1, got {self.sizes}")
        if self.filters < 1:
            raise ValueError(f"filters must be >= 1, got {self.filters}")


@dataclass
class ConvParams:
    filters: list[np.ndarray]  # per size: (f, s, m)
    biases: list[np.ndarray]   # per size: (f,)


def _conv_windows(x: np.ndarray, s: int) -> np.ndarray:
    b, t, m = x.shape
    n_win = t - s + 1
    return np.stack([x[:, i:i + s, :] for i in range(n_win)], axis=1).reshape(b, n_win, s * m)


def conv_maxpool_batch(x: np.ndarray, efflens: np.ndarray, spec: ConvSpec,
                       params: ConvParams) -> tuple[np.ndarray, dict]:
    """ReLU conv activations max-pooled over each document's valid windows.

    Valid windows for size s are positions 0 .. efflen - s; efflen is the
    true length padded up to the largest window, so every size has at
    least one window. Output components are ordered (size asc, filter asc).
    """
    b, t, _ = x.shape
    if t < max(spec.sizes):
        raise ValueError(f"sequence of {t} rows is shorter than the largest "
                         f"window {max(spec.sizes)}; pad first")
    if np.any(efflens < max(spec.sizes)) or np.any(efflens > t):
        raise ValueError("effective lengths must lie in [max window, padded length]")
    pooled_parts = []
    cache: dict = {"x": x, "spec": spec, "params": params, "per_size": []}
    for si, s in enumerate(spec.sizes):
        wmat = params.filters[si].reshape(spec.filters, -1)
        windows = _conv_windows(x, s)
        pre = windows @ wmat.T + params.biases[si]
        act = relu(pre)
        n_valid = (efflens - s + 1)[:, None]
        valid = np.arange(windows.shape[1])[None, :] < n_valid
        masked = np.where(valid[:, :, None], act, -np.inf)
        idx = masked.argmax(axis=1)
        pooled = np.take_along_axis(masked, idx[:, None, :], axis=1)[:, 0, :]
        pooled_parts.append(pooled)
        cache["per_size"].append((windows, pre, idx))
    return np.concatenate(pooled_parts, axis=1), cache


def conv_maxpool_batch_backward(dout: np.ndarray, cache: dict) -> tuple[np.ndarray, ConvParams]:
    """Backprop: route each pooled gradient to its argmax window, through ReLU."""
    x = cache["x"]
    spec: ConvSpec = cache["spec"]
    params: ConvParams = cache["params"]
    dx = np.zeros_like(x)
    dfilters, dbiases = [], []
    f = spec.filters
    for si, s in enumerate(spec.sizes):
        windows, pre, idx = cache["per_size"][si]
        dpool = dout[:, si * f:(si + 1) * f]
        at_max = np.take_along_axis(pre, idx[:, None, :], axis=1)[:, 0, :]
        contrib = dpool * (at_max > 0.0)
        dpre = np.zeros_like(pre)
        np.put_along_axis(dpre, idx[:, None, :], contrib[:, None, :], axis=1)
        wmat = params.filters[si].reshape(f, -1)
        dfilters.append(np.einsum("btf,btd->fd", dpre, windows).reshape(params.filters[si].shape))
        dbiases.append(dpre.sum(axis=(0, 1)))
        dwin = dpre @ wmat
        dwin = dwin.reshape(x.shape[0], -1, s, x.shape[2])
        for i in range(dwin.shape[1]):
            dx[:, i:i + s, :] += dwin[:, i]
    return dx, ConvParams(filters=dfilters, biases=dbiases)


def conv_maxpool(seqmat: np.ndarray, spec: ConvSpec, params: ConvParams) -> np.ndarray:
    """Single-document convenience wrapper over conv_maxpool_batch."""
    seqmat = np.asarray(seqmat, dtype=np.float64)
    if seqmat.ndim != 2:
        raise ValueError("conv_maxpool expects an (n, m) matrix")
    n = seqmat.shape[0]
    out, _ = conv_maxpool_batch(seqmat[None, :, :], np.asarray([n]), spec, params)
    return out[0]


# -- parameter counting --------------------------------------------------------


def count_parameters(arch: str, m: int, k: int, *, h_lin: int = 200, h: int = 100,
                     sizes: tuple[int, ...] = (2, 3, 4), f: int = 50) -> int:
    """Trainable parameter count per architecture (embedding table excluded;
    it is frozen during classifier training)."""
    if arch == "linear":
        return m * h_lin + h_lin + h_lin * k + k
    if arch == "birnn":
        return 2 * 4 * (m * h + h * h + 2 * h) + 2 * h * k + k
    if arch == "cnn":
        return sum(f * s * m + f for s in sizes) + len(sizes) * f * k + k
    raise ValueError(f"unknown architecture {arch!r}")


# -- initialization ------------------------------------------------------------


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int,
                   rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_lstm_dir(m: int, h: int, rng: np.random.Generator) -> LstmDirParams:
    bound = 1.0 / np.sqrt(h)
    b_x = np.zeros(4 * h)
    b_x[h:2 * h] = 1.0  # forget-gate bias starts open
    return LstmDirParams(
        w_x=rng.uniform(-bound, bound, size=(4 * h, m)),
        w_h=rng.uniform(-bound, bound, size=(4 * h, h)),
        b_x=b_x,
        b_h=np.zeros(4 * h),
    )


# -- optimizers ----------------------------------------------------------------


class Adam:
    """Adam over a flat dict of parameter arrays, updated in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = self.params[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class Sgd:
    """Plain SGD; used for the determinism tests."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 0.1):
        self.params = params
        self.lr = lr

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            self.params[name] -= self.lr * g

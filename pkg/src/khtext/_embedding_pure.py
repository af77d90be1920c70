"""Pure numpy fallback for the embedding training kernel.

Mirrors `_embedding_inner.pyx` operation for operation: same RNG, same
draw order, same update order. The compiled kernel and this one therefore
walk identical training trajectories up to float32 rounding differences
in the dot products.
"""

from __future__ import annotations

import math

import numpy as np

COMPILED = False

_MASK64 = 0xFFFFFFFFFFFFFFFF
_U53 = 1.0 / 9007199254740992.0  # 2^-53


class XorShift64:
    """xorshift64* generator; kept bit-compatible with the C kernel."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64
        if self.state == 0:
            self.state = 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 2685821657736338717) & _MASK64

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * _U53

    def randint(self, n: int) -> int:
        return self.next_u64() % n


def _sigmoid(z: float) -> float:
    if z > 30.0:
        return 1.0
    if z < -30.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-z))


def _softplus(z: float) -> float:
    # log(1 + e^z) without overflow
    if z > 30.0:
        return z
    return math.log1p(math.exp(z))


def _draw_negative(noise_cum: np.ndarray, target: int, rng: XorShift64) -> int:
    """A noise word id != target, or -1 after 8 failed attempts."""
    n = noise_cum.shape[0]
    for _ in range(8):
        u = rng.uniform()
        cand = int(np.searchsorted(noise_cum, u, side="right"))
        if cand >= n:
            cand = n - 1
        if cand != target:
            return cand
    return -1


def _pair_update(w_out, hidden, target, negatives, noise_cum, rng, alpha):
    """One negative-sampling step for (hidden, target); returns (-alpha*dL/dh, loss)."""
    gvec = np.zeros_like(hidden)
    loss = 0.0
    for k in range(negatives + 1):
        if k == 0:
            tid, label = target, 1.0
        else:
            tid = _draw_negative(noise_cum, target, rng)
            if tid < 0:
                continue
            label = 0.0
        row = w_out[tid]
        z = float(row @ hidden)
        s = _sigmoid(z)
        loss += _softplus(-z) if label == 1.0 else _softplus(z)
        g = np.float32((label - s) * alpha)
        gvec += g * row
        w_out[tid] = row + g * hidden
    return gvec, loss


def train_shard(w_in, w_out, tokens, offsets, row_flat, row_off, noise_cum,
                cbow, window, negatives, lr0, total_visits, visits_base,
                visit_stride, seed):
    """Train one epoch shard; returns (loss_sum, loss_terms, visits)."""
    rng = XorShift64(seed)
    loss_sum = 0.0
    terms = 0
    local = 0
    n_sent = offsets.shape[0] - 1
    inv_total = 1.0 / total_visits if total_visits > 0 else 0.0
    for si in range(n_sent):
        start, end = int(offsets[si]), int(offsets[si + 1])
        slen = end - start
        for t in range(slen):
            alpha = lr0 * (1.0 - (visits_base + local * visit_stride) * inv_total)
            local += 1
            if alpha <= 0.0:
                alpha = 0.0
            r = 1 + rng.randint(window)
            lo = max(0, t - r)
            hi = min(slen, t + r + 1)
            ctx = [c for c in range(lo, hi) if c != t]
            if not ctx:
                continue
            if cbow:
                target = int(tokens[start + t])
                rows_per_ctx = []
                hidden = np.zeros(w_in.shape[1], dtype=np.float32)
                for c in ctx:
                    wid = int(tokens[start + c])
                    rows = row_flat[row_off[wid]:row_off[wid + 1]]
                    rows_per_ctx.append(rows)
                    hidden += w_in[rows].mean(axis=0)
                hidden /= np.float32(len(ctx))
                gvec, loss = _pair_update(w_out, hidden, target, negatives,
                                          noise_cum, rng, alpha)
                loss_sum += loss
                terms += 1
                inv_c = np.float32(1.0 / len(ctx))
                for rows in rows_per_ctx:
                    # add.at: duplicate bucket rows accumulate per occurrence
                    np.add.at(w_in, rows, gvec * (inv_c / np.float32(len(rows))))
            else:
                center = int(tokens[start + t])
                rows = row_flat[row_off[center]:row_off[center + 1]]
                hidden = w_in[rows].mean(axis=0)
                scale = np.float32(1.0 / len(rows))
                for c in ctx:
                    target = int(tokens[start + c])
                    gvec, loss = _pair_update(w_out, hidden, target, negatives,
                                              noise_cum, rng, alpha)
                    loss_sum += loss
                    terms += 1
                    np.add.at(w_in, rows, gvec * scale)
                    hidden = w_in[rows].mean(axis=0)
    return loss_sum, terms, local

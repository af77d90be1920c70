# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled embedding training kernel.

Semantics match `_embedding_pure.train_shard` exactly: same xorshift64*
RNG, same draw order, same update order. The main loop runs without the
GIL so multiple shards can train in parallel on shared matrices.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport expf, log1p, exp
from libc.stdint cimport int32_t, int64_t, uint64_t
from libc.stdlib cimport free, malloc

COMPILED = True


cdef inline uint64_t _next_u64(uint64_t* state) noexcept nogil:
    cdef uint64_t x = state[0]
    x ^= x >> 12
    x ^= x << 25
    x ^= x >> 27
    state[0] = x
    return x * <uint64_t>2685821657736338717UL


cdef inline double _uniform(uint64_t* state) noexcept nogil:
    return <double>(_next_u64(state) >> 11) * (1.0 / 9007199254740992.0)


cdef inline long _randint(uint64_t* state, long n) noexcept nogil:
    return <long>(_next_u64(state) % <uint64_t>n)


cdef inline double _sigmoid(double z) noexcept nogil:
    if z > 30.0:
        return 1.0
    if z < -30.0:
        return 0.0
    return 1.0 / (1.0 + exp(-z))


cdef inline double _softplus(double z) noexcept nogil:
    if z > 30.0:
        return z
    return log1p(exp(z))


cdef inline long _draw_negative(double* noise_cum, long n, long target,
                                uint64_t* state) noexcept nogil:
    """Upper-bound binary search over the cumulative table, 8 attempts."""
    cdef double u
    cdef long lo, hi, mid, cand
    cdef int attempt
    for attempt in range(8):
        u = _uniform(state)
        lo = 0
        hi = n
        while lo < hi:
            mid = (lo + hi) >> 1
            if noise_cum[mid] <= u:
                lo = mid + 1
            else:
                hi = mid
        cand = lo
        if cand >= n:
            cand = n - 1
        if cand != target:
            return cand
    return -1


cdef double _pair_update(float[:, ::1] w_out, float* hidden, float* gvec, long m,
                         long target, long negatives, double* noise_cum, long vocab_size,
                         uint64_t* state, double alpha, long* terms) noexcept nogil:
    cdef double loss = 0.0, z, s, label
    cdef float g
    cdef long k, j, tid
    for j in range(m):
        gvec[j] = 0.0
    for k in range(negatives + 1):
        if k == 0:
            tid = target
            label = 1.0
        else:
            tid = _draw_negative(noise_cum, vocab_size, target, state)
            if tid < 0:
                continue
            label = 0.0
        z = 0.0
        for j in range(m):
            z += <double>w_out[tid, j] * <double>hidden[j]
        s = _sigmoid(z)
        if label == 1.0:
            loss += _softplus(-z)
        else:
            loss += _softplus(z)
        g = <float>((label - s) * alpha)
        for j in range(m):
            gvec[j] += g * w_out[tid, j]
        for j in range(m):
            w_out[tid, j] += g * hidden[j]
    terms[0] += 1
    return loss


def train_shard(float[:, ::1] w_in, float[:, ::1] w_out,
                int32_t[::1] tokens, int64_t[::1] offsets,
                int32_t[::1] row_flat, int64_t[::1] row_off,
                double[::1] noise_cum,
                int cbow, int window, int negatives, double lr0,
                long total_visits, long visits_base, long visit_stride,
                unsigned long long seed):
    """Train one epoch shard; returns (loss_sum, loss_terms, visits)."""
    cdef long m = w_in.shape[1]
    cdef long vocab_size = w_out.shape[0]
    cdef long n_sent = offsets.shape[0] - 1
    cdef uint64_t state = <uint64_t>seed
    if state == 0:
        state = <uint64_t>0x9E3779B97F4A7C15UL

    cdef float* hidden = <float*>malloc(m * sizeof(float))
    cdef float* gvec = <float*>malloc(m * sizeof(float))
    if hidden == NULL or gvec == NULL:
        free(hidden)
        free(gvec)
        raise MemoryError("training work buffers")

    cdef double loss_sum = 0.0, alpha, inv_total, loss, coeff
    cdef long terms = 0, local = 0
    cdef long si, t, c, start, end, slen, lo, hi, r, target, center
    cdef long wid, rstart, rend, nrows, nctx, j, rr
    cdef float scale

    inv_total = 1.0 / total_visits if total_visits > 0 else 0.0

    with nogil:
        for si in range(n_sent):
            start = offsets[si]
            end = offsets[si + 1]
            slen = end - start
            for t in range(slen):
                alpha = lr0 * (1.0 - (visits_base + local * visit_stride) * inv_total)
                local += 1
                if alpha <= 0.0:
                    alpha = 0.0
                r = 1 + _randint(&state, window)
                lo = t - r
                if lo < 0:
                    lo = 0
                hi = t + r + 1
                if hi > slen:
                    hi = slen
                nctx = hi - lo - 1
                if nctx <= 0:
                    continue
                if cbow:
                    target = tokens[start + t]
                    for j in range(m):
                        hidden[j] = 0.0
                    for c in range(lo, hi):
                        if c == t:
                            continue
                        wid = tokens[start + c]
                        rstart = row_off[wid]
                        rend = row_off[wid + 1]
                        nrows = rend - rstart
                        scale = <float>(1.0 / nrows)
                        for rr in range(rstart, rend):
                            for j in range(m):
                                hidden[j] += w_in[row_flat[rr], j] * scale
                    scale = <float>(1.0 / nctx)
                    for j in range(m):
                        hidden[j] *= scale
                    loss = _pair_update(w_out, hidden, gvec, m, target, negatives,
                                        &noise_cum[0], vocab_size, &state, alpha, &terms)
                    loss_sum += loss
                    for c in range(lo, hi):
                        if c == t:
                            continue
                        wid = tokens[start + c]
                        rstart = row_off[wid]
                        rend = row_off[wid + 1]
                        nrows = rend - rstart
                        coeff = 1.0 / (<double>nctx * <double>nrows)
                        scale = <float>coeff
                        for rr in range(rstart, rend):
                            for j in range(m):
                                w_in[row_flat[rr], j] += gvec[j] * scale
                else:
                    center = tokens[start + t]
                    rstart = row_off[center]
                    rend = row_off[center + 1]
                    nrows = rend - rstart
                    scale = <float>(1.0 / nrows)
                    for j in range(m):
                        hidden[j] = 0.0
                    for rr in range(rstart, rend):
                        for j in range(m):
                            hidden[j] += w_in[row_flat[rr], j] * scale
                    for c in range(lo, hi):
                        if c == t:
                            continue
                        target = tokens[start + c]
                        loss = _pair_update(w_out, hidden, gvec, m, target, negatives,
                                            &noise_cum[0], vocab_size, &state, alpha, &terms)
                        loss_sum += loss
                        for rr in range(rstart, rend):
                            for j in range(m):
                                w_in[row_flat[rr], j] += gvec[j] * scale
                        for j in range(m):
                            hidden[j] = 0.0
                        for rr in range(rstart, rend):
                            for j in range(m):
                                hidden[j] += w_in[row_flat[rr], j] * scale

    free(hidden)
    free(gvec)
    return loss_sum, terms, local

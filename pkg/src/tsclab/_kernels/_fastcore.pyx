# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled sampling kernel: the hot autoregressive loop fused into C.

Mirrors ``_numpycore`` operation for operation (same SplitMix64 stream,
same chronological history-window summation order, same strict inverse-CDF
draw rule) so both backends sample the same tokens for the same keys,
up to dense-layer accumulation order, which in practice never flips a
draw.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

BACKEND = "cython"

cdef unsigned long long GOLDEN = 0x9E3779B97F4A7C15ULL
cdef unsigned long long MIX1 = 0xBF58476D1CE4E5B9ULL
cdef unsigned long long MIX2 = 0x94D049BB133111EBULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline unsigned long long _c_finalize(unsigned long long z) nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline double _c_uniform(unsigned long long key, unsigned long long counter) nogil:
    return <double>(_c_finalize(key + GOLDEN * counter) >> 11) * INV_2_53


def derive_key(seed, *indices):
    """Derive a stream key from a seed and a path of indices."""
    cdef unsigned long long key = _c_finalize(<unsigned long long>(seed % (1 << 64)) + GOLDEN)
    for ix in indices:
        key = _c_finalize((key ^ <unsigned long long>(ix % (1 << 64))) + GOLDEN)
    return int(key)


def uniforms_from_key(key, n):
    """n doubles in [0, 1) from counter positions 1..n of the stream."""
    cdef unsigned long long k = <unsigned long long>(key % (1 << 64))
    cdef Py_ssize_t i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(int(n), dtype=np.float64)
    for i in range(int(n)):
        out[i] = _c_uniform(k, <unsigned long long>(i + 1))
    return out


def sample_responses(
    cnp.ndarray[cnp.float64_t, ndim=2] emb,
    cnp.ndarray[cnp.float64_t, ndim=2] w_ctx,
    cnp.ndarray[cnp.float64_t, ndim=1] b_ctx,
    cnp.ndarray[cnp.float64_t, ndim=2] w_hist,
    cnp.ndarray[cnp.float64_t, ndim=1] b_hist,
    cnp.ndarray[cnp.float64_t, ndim=2] w_h1,
    cnp.ndarray[cnp.float64_t, ndim=1] b_h1,
    cnp.ndarray[cnp.float64_t, ndim=2] w_h2,
    cnp.ndarray[cnp.float64_t, ndim=1] b_h2,
    cnp.ndarray[cnp.float64_t, ndim=2] w_out,
    cnp.ndarray[cnp.float64_t, ndim=1] b_out,
    cnp.ndarray[cnp.float64_t, ndim=1] features,
    keys,
    int max_len,
    int eos_id,
    int k_history,
    double temperature,
):
    """Autoregressively sample ``len(keys)`` token responses.

    Same contract as the NumPy backend: draws from
    softmax(logits / temperature), log-probs recorded at temperature 1,
    tokens padded with -1 and log-probs with 0 past each response length.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")

    cdef int g = len(keys)
    cdef int vocab = emb.shape[0]
    cdef int d_e = emb.shape[1]
    cdef int n_feat = w_ctx.shape[0]
    cdef int d_h = w_ctx.shape[1]

    cdef cnp.ndarray[cnp.int64_t, ndim=2] tokens = np.full((g, max_len), -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] logps = np.zeros((g, max_len), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] lengths = np.zeros(g, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] key_arr = np.asarray(
        [int(k) % (1 << 64) for k in keys], dtype=np.uint64
    )

    cdef cnp.ndarray[cnp.float64_t, ndim=1] ctx_pre = np.empty(d_h, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] msum = np.empty(d_e, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h0 = np.empty(d_h, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h1 = np.empty(d_h, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h2 = np.empty(d_h, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] logits = np.empty(vocab, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] probs = np.empty(vocab, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] window = np.full((g, k_history if k_history > 0 else 1), -1, dtype=np.int64)

    cdef Py_ssize_t r, step, i, j, slot, tid
    cdef int count, tok
    cdef double acc, mx, lse, u, z, scale

    # ctx_pre = features @ w_ctx + b_ctx
    for j in range(d_h):
        acc = b_ctx[j]
        for i in range(n_feat):
            acc += features[i] * w_ctx[i, j]
        ctx_pre[j] = acc

    for r in range(g):
        count = 0
        for step in range(max_len):
            # mean embedding of the last min(count, k) tokens, zeros when none
            for i in range(d_e):
                msum[i] = 0.0
            for slot in range(k_history):
                tid = window[r, slot]
                if tid >= 0:
                    for i in range(d_e):
                        msum[i] = msum[i] + emb[tid, i]
            if count > 0:
                for i in range(d_e):
                    msum[i] = msum[i] / (count if count < k_history else k_history)

            # trunk forward
            for j in range(d_h):
                acc = ctx_pre[j] + b_hist[j]
                for i in range(d_e):
                    acc += msum[i] * w_hist[i, j]
                h0[j] = acc if acc >= 0.0 else 0.01 * acc
            for j in range(d_h):
                acc = b_h1[j]
                for i in range(d_h):
                    acc += h0[i] * w_h1[i, j]
                h1[j] = acc if acc >= 0.0 else 0.01 * acc
            for j in range(d_h):
                acc = b_h2[j]
                for i in range(d_h):
                    acc += h1[i] * w_h2[i, j]
                h2[j] = acc if acc >= 0.0 else 0.01 * acc
            for j in range(vocab):
                acc = b_out[j]
                for i in range(d_h):
                    acc += h2[i] * w_out[i, j]
                logits[j] = acc

            mx = logits[0]
            for j in range(1, vocab):
                if logits[j] > mx:
                    mx = logits[j]
            acc = 0.0
            for j in range(vocab):
                acc += exp(logits[j] - mx)
            lse = mx + log(acc)

            if temperature == 1.0:
                for j in range(vocab):
                    probs[j] = exp(logits[j] - mx) / acc
            else:
                scale = 1.0 / temperature
                mx = logits[0] * scale
                for j in range(1, vocab):
                    z = logits[j] * scale
                    if z > mx:
                        mx = z
                acc = 0.0
                for j in range(vocab):
                    probs[j] = exp(logits[j] * scale - mx)
                    acc += probs[j]
                for j in range(vocab):
                    probs[j] = probs[j] / acc

            u = _c_uniform(key_arr[r], <unsigned long long>(step + 1))
            tok = vocab - 1
            acc = 0.0
            for j in range(vocab):
                acc += probs[j]
                if acc > u:
                    tok = j
                    break

            tokens[r, step] = tok
            logps[r, step] = logits[tok] - lse
            lengths[r] = step + 1
            if tok == eos_id:
                break
            if k_history > 0:
                if count < k_history:
                    window[r, count] = tok
                else:
                    for slot in range(k_history - 1):
                        window[r, slot] = window[r, slot + 1]
                    window[r, k_history - 1] = tok
            count += 1

    return tokens, lengths, logps

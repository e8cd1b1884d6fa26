"""Pure-NumPy sampling kernel and counter-based RNG.

This is the fallback backend; ``_fastcore`` is the compiled twin with the
same call signatures and the same arithmetic (identical RNG integers,
identical summation order for the history window, identical inverse-CDF
draw rule), so a given seed yields the same responses on either backend
up to floating-point accumulation order in the dense layers.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_INV_2_53 = 1.0 / float(1 << 53)


def _finalize(z):
    """SplitMix64 finalizer (vectorized over uint64 arrays)."""
    with np.errstate(over="ignore"):
        z = np.asarray(z, dtype=np.uint64)
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def derive_key(seed: int, *indices: int):
    """Derive a stream key from a seed and a path of indices.

    Each level is avalanche-mixed so (seed, decision, response) paths give
    statistically independent streams.
    """
    with np.errstate(over="ignore"):
        key = _finalize(_U64(seed % (1 << 64)) + _GOLDEN)
        for ix in indices:
            key = _finalize((key ^ _U64(ix % (1 << 64))) + _GOLDEN)
    return int(key)


def uniforms_from_key(key: int, n: int) -> np.ndarray:
    """n doubles in [0, 1) from counter positions 1..n of the stream."""
    with np.errstate(over="ignore"):
        counters = _U64(key) + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        bits = _finalize(counters)
    return (bits >> _U64(11)).astype(np.float64) * _INV_2_53


def _leaky(x):
    return np.where(x >= 0.0, x, 0.01 * x)


def sample_responses(
    emb,
    w_ctx,
    b_ctx,
    w_hist,
    b_hist,
    w_h1,
    b_h1,
    w_h2,
    b_h2,
    w_out,
    b_out,
    features,
    keys,
    max_len: int,
    eos_id: int,
    k_history: int,
    temperature: float,
):
    """Autoregressively sample ``len(keys)`` token responses.

    Draws come from softmax(logits / temperature); the recorded log-probs
    are those of the unscaled (temperature-1) distribution so they match
    teacher-forced re-evaluation. Each response consumes its own uniform
    stream, so results are independent of response ordering.

    Returns (tokens, lengths, logps): tokens is (g, max_len) int64 padded
    with -1, logps is (g, max_len) float64 padded with 0.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    g = len(keys)
    vocab = emb.shape[0]
    d_e = emb.shape[1]

    uniforms = np.empty((g, max_len), dtype=np.float64)
    for r in range(g):
        uniforms[r] = uniforms_from_key(int(keys[r]), max_len)

    ctx_pre = features @ w_ctx + b_ctx  # shared by every position

    tokens = np.full((g, max_len), -1, dtype=np.int64)
    logps = np.zeros((g, max_len), dtype=np.float64)
    lengths = np.zeros(g, dtype=np.int64)
    active = np.ones(g, dtype=bool)
    window = np.full((g, k_history), -1, dtype=np.int64)  # chronological slots

    for step in range(max_len):
        if not active.any():
            break
        # Mean embedding of the last k generated tokens (zeros before any).
        msum = np.zeros((g, d_e), dtype=np.float64)
        counts = np.zeros(g, dtype=np.int64)
        for slot in range(k_history):
            ids = window[:, slot]
            valid = ids >= 0
            if valid.any():
                msum[valid] += emb[ids[valid]]
                counts[valid] += 1
        m = msum / np.maximum(counts, 1)[:, None]

        z0 = ctx_pre[None, :] + m @ w_hist + b_hist
        h0 = _leaky(z0)
        h1 = _leaky(h0 @ w_h1 + b_h1)
        h2 = _leaky(h1 @ w_h2 + b_h2)
        logits = h2 @ w_out + b_out

        mx = logits.max(axis=1, keepdims=True)
        exp1 = np.exp(logits - mx)
        lse = mx[:, 0] + np.log(exp1.sum(axis=1))

        if temperature == 1.0:
            probs = exp1 / exp1.sum(axis=1, keepdims=True)
        else:
            scaled = logits / temperature
            mx_s = scaled.max(axis=1, keepdims=True)
            exp_s = np.exp(scaled - mx_s)
            probs = exp_s / exp_s.sum(axis=1, keepdims=True)

        cdf = np.cumsum(probs, axis=1)
        drawn = (cdf <= uniforms[:, step][:, None]).sum(axis=1)
        drawn = np.minimum(drawn, vocab - 1)

        for r in range(g):
            if not active[r]:
                continue
            tok = int(drawn[r])
            tokens[r, step] = tok
            logps[r, step] = logits[r, tok] - lse[r]
            lengths[r] = step + 1
            if tok == eos_id:
                active[r] = False
            else:
                if k_history > 0:
                    if counts[r] < k_history:
                        window[r, counts[r]] = tok
                    else:
                        for s in range(k_history - 1):
                            window[r, s] = window[r, s + 1]
                        window[r, k_history - 1] = tok

    return tokens, lengths, logps

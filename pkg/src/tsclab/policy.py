"""Token-emitting policy, frozen reference snapshots, and value head.

The policy is a small feed-forward net over the observation features plus
the mean embedding of the last ``k_history`` generated tokens, giving a
genuine token-level process with position-dependent distributions. All
gradients are computed by hand-derived reverse-mode passes; the finite-
difference suite in the tests pins them to the analytic contract.

Sampling runs through the kernel backend (compiled if available); the
teacher-forced batch paths here are plain NumPy since updates touch far
fewer tokens than rollouts.
"""

from __future__ import annotations

import copy
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import _kernels

POLICY_FIELDS = (
    "emb",
    "w_ctx",
    "b_ctx",
    "w_hist",
    "b_hist",
    "w_h1",
    "b_h1",
    "w_h2",
    "b_h2",
    "w_out",
    "b_out",
)

VALUE_FIELDS = ("w1", "b1", "w2", "b2")


def _uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _leaky(x):
    return np.where(x >= 0.0, x, 0.01 * x)


def _dleaky(x):
    return np.where(x >= 0.0, 1.0, 0.01)


class TokenPolicy:
    """Autoregressive categorical policy over a small token vocabulary."""

    def __init__(
        self,
        vocab_size: int,
        feature_len: int,
        eos_id: int,
        d_embed: int = 16,
        d_hidden: int = 64,
        k_history: int = 4,
        max_len: int = 32,
        rng: Optional[np.random.Generator] = None,
        params: Optional[Dict[str, np.ndarray]] = None,
    ):
        self.vocab_size = vocab_size
        self.feature_len = feature_len
        self.eos_id = eos_id
        self.d_embed = d_embed
        self.d_hidden = d_hidden
        self.k_history = k_history
        self.max_len = max_len
        if params is not None:
            self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            self.params = self._init_params(rng)

    def _init_params(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        V, F, d_e, d_h = self.vocab_size, self.feature_len, self.d_embed, self.d_hidden
        return {
            "emb": _uniform_init(rng, (V, d_e), d_e),
            "w_ctx": _uniform_init(rng, (F, d_h), F),
            "b_ctx": np.zeros(d_h),
            "w_hist": _uniform_init(rng, (d_e, d_h), d_e),
            "b_hist": np.zeros(d_h),
            "w_h1": _uniform_init(rng, (d_h, d_h), d_h),
            "b_h1": np.zeros(d_h),
            "w_h2": _uniform_init(rng, (d_h, d_h), d_h),
            "b_h2": np.zeros(d_h),
            "w_out": _uniform_init(rng, (d_h, V), d_h),
            "b_out": np.zeros(V),
        }

    # -- sampling --------------------------------------------------------

    def sample(
        self,
        features: np.ndarray,
        keys: Sequence[int],
        temperature: float = 1.0,
        max_len: Optional[int] = None,
        backend=None,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sample ``len(keys)`` responses, one independent stream each.

        Returns (tokens, lengths, logps); log-probs are those of the
        temperature-1 distribution for the sampled tokens, so they agree
        with :meth:`logprobs` on the same tokens.
        """
        impl = backend if backend is not None else _kernels
        p = self.params
        return impl.sample_responses(
            p["emb"],
            p["w_ctx"],
            p["b_ctx"],
            p["w_hist"],
            p["b_hist"],
            p["w_h1"],
            p["b_h1"],
            p["w_h2"],
            p["b_h2"],
            p["w_out"],
            p["b_out"],
            np.ascontiguousarray(features, dtype=np.float64),
            list(keys),
            int(max_len if max_len is not None else self.max_len),
            self.eos_id,
            self.k_history,
            float(temperature),
        )

    # -- teacher-forced evaluation ---------------------------------------

    def forward_batch(self, features: np.ndarray, tokens: np.ndarray, lengths: np.ndarray):
        """Teacher-forced logits for padded token batches.

        ``features`` is (B, F), ``tokens`` is (B, L) padded with -1,
        ``lengths`` gives the valid prefix of each row. Returns
        (logits (B, L, V), cache) where the cache feeds
        :meth:`backward_from_dlogits`.
        """
        p = self.params
        B, L = tokens.shape
        k = self.k_history
        valid = (np.arange(L)[None, :] < lengths[:, None]).astype(np.float64)
        ids = np.maximum(tokens, 0)
        emb_seq = p["emb"][ids] * valid[:, :, None]

        wsum = np.zeros((B, L, self.d_embed))
        for off in range(1, k + 1):
            if off < L:
                wsum[:, off:, :] += emb_seq[:, :-off, :]
        wcount = np.minimum(np.arange(L), k).clip(min=1).astype(np.float64)
        m = wsum / wcount[None, :, None]

        ctx_pre = features @ p["w_ctx"] + p["b_ctx"]
        z0 = ctx_pre[:, None, :] + m @ p["w_hist"] + p["b_hist"]
        h0 = _leaky(z0)
        z1 = h0 @ p["w_h1"] + p["b_h1"]
        h1 = _leaky(z1)
        z2 = h1 @ p["w_h2"] + p["b_h2"]
        h2 = _leaky(z2)
        logits = h2 @ p["w_out"] + p["b_out"]

        cache = {
            "features": features,
            "ids": ids,
            "valid": valid,
            "wcount": wcount,
            "m": m,
            "z0": z0,
            "h0": h0,
            "z1": z1,
            "h1": h1,
            "z2": z2,
            "h2": h2,
        }
        return logits, cache

    def logprobs_batch(self, features: np.ndarray, tokens: np.ndarray, lengths: np.ndarray):
        """Per-token log-probs of the given tokens; zeros past each length."""
        if tokens.min() < -1 or tokens.max() >= self.vocab_size:
            raise ValueError("token id outside vocabulary")
        logits, cache = self.forward_batch(features, tokens, lengths)
        lse = _logsumexp(logits)
        B, L = tokens.shape
        rows = np.arange(B)[:, None]
        cols = np.arange(L)[None, :]
        picked = logits[rows, cols, cache["ids"]]
        logps = (picked - lse) * cache["valid"]
        return logps, logits, cache

    def logprobs(self, features: np.ndarray, tokens: Sequence[int]) -> np.ndarray:
        """Log-probs for a single response (convenience wrapper)."""
        toks = np.asarray(tokens, dtype=np.int64)[None, :]
        lengths = np.array([toks.shape[1]], dtype=np.int64)
        logps, _, _ = self.logprobs_batch(np.asarray(features, dtype=np.float64)[None, :], toks, lengths)
        return logps[0]

    def backward_from_dlogits(self, cache: dict, dlogits: np.ndarray) -> Dict[str, np.ndarray]:
        """Parameter gradients given d(loss)/d(logits).

        ``dlogits`` must already be zero at padded positions (the loss
        builders only write valid positions).
        """
        p = self.params
        B, L, V = dlogits.shape
        d_h, d_e, k = self.d_hidden, self.d_embed, self.k_history
        h2f = cache["h2"].reshape(-1, d_h)
        dlf = dlogits.reshape(-1, V)

        grads = {}
        grads["w_out"] = h2f.T @ dlf
        grads["b_out"] = dlf.sum(axis=0)

        dh2 = dlogits @ p["w_out"].T
        dz2 = dh2 * _dleaky(cache["z2"])
        grads["w_h2"] = cache["h1"].reshape(-1, d_h).T @ dz2.reshape(-1, d_h)
        grads["b_h2"] = dz2.sum(axis=(0, 1))

        dh1 = dz2 @ p["w_h2"].T
        dz1 = dh1 * _dleaky(cache["z1"])
        grads["w_h1"] = cache["h0"].reshape(-1, d_h).T @ dz1.reshape(-1, d_h)
        grads["b_h1"] = dz1.sum(axis=(0, 1))

        dh0 = dz1 @ p["w_h1"].T
        dz0 = dh0 * _dleaky(cache["z0"])
        grads["b_hist"] = dz0.sum(axis=(0, 1))
        grads["b_ctx"] = grads["b_hist"].copy()
        grads["w_hist"] = cache["m"].reshape(-1, d_e).T @ dz0.reshape(-1, d_h)
        grads["w_ctx"] = cache["features"].T @ dz0.sum(axis=1)

        dm = dz0 @ p["w_hist"].T
        dwsum = dm / cache["wcount"][None, :, None]
        demb = np.zeros((B, L, d_e))
        for off in range(1, k + 1):
            if off < L:
                demb[:, :-off, :] += dwsum[:, off:, :]
        demb *= cache["valid"][:, :, None]
        grads["emb"] = np.zeros_like(p["emb"])
        np.add.at(grads["emb"], cache["ids"].ravel(), demb.reshape(-1, d_e))
        return grads

    # -- reference snapshots and serialization ---------------------------

    def snapshot(self) -> "TokenPolicy":
        """Deep-copied frozen reference; later updates never leak into it."""
        clone = TokenPolicy(
            vocab_size=self.vocab_size,
            feature_len=self.feature_len,
            eos_id=self.eos_id,
            d_embed=self.d_embed,
            d_hidden=self.d_hidden,
            k_history=self.k_history,
            max_len=self.max_len,
            params=copy.deepcopy(self.params),
        )
        return clone

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def meta(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "feature_len": self.feature_len,
            "eos_id": self.eos_id,
            "d_embed": self.d_embed,
            "d_hidden": self.d_hidden,
            "k_history": self.k_history,
            "max_len": self.max_len,
        }

    @staticmethod
    def from_meta(meta: dict, params: Dict[str, np.ndarray]) -> "TokenPolicy":
        return TokenPolicy(
            vocab_size=int(meta["vocab_size"]),
            feature_len=int(meta["feature_len"]),
            eos_id=int(meta["eos_id"]),
            d_embed=int(meta["d_embed"]),
            d_hidden=int(meta["d_hidden"]),
            k_history=int(meta["k_history"]),
            max_len=int(meta["max_len"]),
            params=params,
        )


class ValueHead:
    """Two-layer state-value estimator over the observation features."""

    def __init__(
        self,
        feature_len: int,
        rng: Optional[np.random.Generator] = None,
        params: Optional[Dict[str, np.ndarray]] = None,
    ):
        self.feature_len = feature_len
        hidden = 2 * feature_len
        if params is not None:
            self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            self.params = {
                "w1": _uniform_init(rng, (feature_len, hidden), feature_len),
                "b1": np.zeros(hidden),
                "w2": _uniform_init(rng, (hidden, 1), hidden),
                "b2": np.zeros(1),
            }

    def value(self, features: Optional[np.ndarray]) -> float:
        """Scalar value; the terminal sentinel (None) is exactly 0."""
        if features is None:
            return 0.0
        v, _ = self.forward_batch(np.asarray(features, dtype=np.float64)[None, :])
        return float(v[0])

    def forward_batch(self, features: np.ndarray):
        p = self.params
        z1 = features @ p["w1"] + p["b1"]
        h1 = _leaky(z1)
        v = (h1 @ p["w2"])[:, 0] + p["b2"][0]
        return v, {"features": features, "z1": z1, "h1": h1}

    def backward(self, cache: dict, dv: np.ndarray) -> Dict[str, np.ndarray]:
        p = self.params
        grads = {}
        grads["w2"] = cache["h1"].T @ dv[:, None]
        grads["b2"] = np.array([dv.sum()])
        dh1 = dv[:, None] @ p["w2"].T
        dz1 = dh1 * _dleaky(cache["z1"])
        grads["w1"] = cache["features"].T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        return grads

    def snapshot(self) -> "ValueHead":
        return ValueHead(self.feature_len, params=copy.deepcopy(self.params))

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


def _logsumexp(logits: np.ndarray) -> np.ndarray:
    mx = logits.max(axis=-1, keepdims=True)
    return (mx + np.log(np.exp(logits - mx).sum(axis=-1, keepdims=True)))[..., 0]


def flatten_params(params: Dict[str, np.ndarray], fields: Sequence[str]) -> np.ndarray:
    return np.concatenate([params[f].ravel() for f in fields])


def assign_flat(params: Dict[str, np.ndarray], fields: Sequence[str], vec: np.ndarray) -> None:
    pos = 0
    for f in fields:
        size = params[f].size
        params[f][...] = vec[pos : pos + size].reshape(params[f].shape)
        pos += size
    if pos != vec.size:
        raise ValueError("flat vector length mismatch")


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """In-place global-norm clipping; returns the pre-clip norm."""
    norm = global_norm(grads)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm

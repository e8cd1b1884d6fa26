"""Clipped-surrogate policy optimization over buffered token trajectories.

Each decision contributes one response trajectory to a rolling replay
buffer (a time window, not a count). Updates compute advantages with GAE
inside each trajectory against the stored rollout-time value, standardize
them per batch, and take one AdamW step per batch on the combined
objective  L = -J_clip + alpha * J_value  with per-network global-norm
gradient clipping. A flag switches to plain REINFORCE (raw discounted
returns, no baseline, no value update) for ablations.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .policy import (
    POLICY_FIELDS,
    VALUE_FIELDS,
    TokenPolicy,
    ValueHead,
    clip_by_global_norm,
)

CHECKPOINT_VERSION = 1

VALUE_CLIP_MODES = ("standard", "literal")


@dataclass
class TrainerConfig:
    actor_lr: float = 2.5e-5
    actor_weight_decay: float = 1e-6
    value_lr: float = 1e-5
    value_weight_decay: float = 5e-7
    eps_low: float = 0.2
    eps_high: float = 0.5
    eps_value: float = 0.2
    gamma: float = 0.999
    lam: float = 0.95
    alpha: float = 1.0
    batch_size: int = 20
    batches_per_update: int = 2
    grad_clip_policy: float = 0.5
    grad_clip_value: float = 5.0
    update_interval: int = 360
    buffer_window: int = 400
    checkpoint_interval: int = 720
    decision_interval: int = 10
    episode_length: int = 3600
    g_responses: int = 8
    use_critic: bool = True
    value_clip_mode: str = "standard"
    temperature: float = 1.0

    def __post_init__(self):
        if self.eps_low <= 0 or self.eps_high <= 0:
            raise ValueError("clipping bounds must be > 0")
        if self.eps_value <= 0:
            raise ValueError("eps_value must be > 0")
        if not 0 <= self.gamma <= 1 or not 0 <= self.lam <= 1:
            raise ValueError("gamma and lam must lie in [0, 1]")
        if self.g_responses < 1:
            raise ValueError("g_responses must be >= 1")
        if self.value_clip_mode not in VALUE_CLIP_MODES:
            raise ValueError(f"value_clip_mode must be one of {VALUE_CLIP_MODES}")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")

    def warn_if_few_responses(self, n_phases: int) -> None:
        if self.g_responses < n_phases:
            warnings.warn(
                f"g_responses={self.g_responses} is below the number of phases "
                f"({n_phases}); agreement counts cannot resolve all phases",
                stacklevel=2,
            )


def gae(rewards: Sequence[float], values: Sequence[float], gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates by reverse recursion.

    ``values[l]`` approximates V(s_l); the terminal value V(s_n) is 0 by
    convention. delta_l = r_l + gamma * V(s_{l+1}) - V(s_l), and
    A_l = delta_l + gamma * lam * A_{l+1}.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape != v.shape:
        raise ValueError(f"length mismatch: {r.shape} rewards vs {v.shape} values")
    n = r.size
    adv = np.empty(n, dtype=np.float64)
    nxt = 0.0
    acc = 0.0
    for l in range(n - 1, -1, -1):
        delta = r[l] + gamma * nxt - v[l]
        acc = delta + gamma * lam * acc
        adv[l] = acc
        nxt = v[l]
    return adv


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Raw discounted reward-to-go (the no-critic, no-baseline path)."""
    r = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(r)
    acc = 0.0
    for l in range(r.size - 1, -1, -1):
        acc = r[l] + gamma * acc
        out[l] = acc
    return out


def policy_surrogate(
    ratio: np.ndarray, advantage: np.ndarray, eps_low: float, eps_high: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-token clipped objective and its derivative w.r.t. log-prob.

    Returns (objective, dobj_dlogp). The derivative is exactly zero on the
    clipped-flat branch: when the min selects the clipped term and the
    ratio sits outside [1 - eps_low, 1 + eps_high], the surrogate is
    locally constant in the logits.
    """
    t1 = ratio * advantage
    t2 = np.clip(ratio, 1.0 - eps_low, 1.0 + eps_high) * advantage
    obj = np.minimum(t1, t2)
    dlogp = np.where(t1 <= t2, t1, 0.0)  # d(r*A)/dlogp = r*A
    return obj, dlogp


def value_loss(
    v_new: np.ndarray,
    v_old: np.ndarray,
    returns: np.ndarray,
    eps_value: float,
    mode: str = "standard",
) -> Tuple[float, np.ndarray]:
    """Clipped value regression loss and its derivative w.r.t. v_new.

    "standard" clips the value change around the rollout-time value;
    "literal" clips the error term itself (in which case the max always
    selects the unclipped square, making the clip a no-op -- kept for
    fidelity to the printed form).
    """
    err = v_new - returns
    if mode == "literal":
        clipped = np.clip(err, -eps_value, eps_value)
        per = np.maximum(err**2, clipped**2)
        dv = np.where(err**2 >= clipped**2, err, clipped * np.where(np.abs(err) <= eps_value, 1.0, 0.0))
    elif mode == "standard":
        v_clip = v_old + np.clip(v_new - v_old, -eps_value, eps_value)
        err_clip = v_clip - returns
        per = np.maximum(err**2, err_clip**2)
        dv = np.where(err**2 >= err_clip**2, err, 0.0)
    else:
        raise ValueError(f"unknown value_clip_mode {mode!r}")
    n = per.size
    return 0.5 * float(per.mean()), dv / n


def total_loss(policy_objective: float, value_term: float, alpha: float) -> float:
    return -policy_objective + alpha * value_term


def standardize(x: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    mean = x.mean()
    std = x.std()
    return (x - mean) / max(std, floor)


class AdamW:
    """Adam with decoupled weight decay over a named-parameter dict."""

    def __init__(self, fields, lr, weight_decay, betas=(0.9, 0.999), eps=1e-8):
        self.fields = tuple(fields)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        if not self.m:
            for f in self.fields:
                self.m[f] = np.zeros_like(params[f])
                self.v[f] = np.zeros_like(params[f])
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for f in self.fields:
            g = grads[f]
            self.m[f] = self.beta1 * self.m[f] + (1.0 - self.beta1) * g
            self.v[f] = self.beta2 * self.v[f] + (1.0 - self.beta2) * g * g
            m_hat = self.m[f] / bc1
            v_hat = self.v[f] / bc2
            params[f] -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * params[f])

    def state_dict(self) -> dict:
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}


@dataclass
class DecisionRecord:
    """One buffered response trajectory with everything the update needs."""

    time: float  # global simulation time of the decision
    features: np.ndarray
    tokens: np.ndarray
    logps_old: np.ndarray
    rewards: np.ndarray
    v_old: float
    phase: int


class ReplayBuffer:
    """Trajectory store windowed by simulation time, oldest evicted first."""

    def __init__(self, window: float):
        self.window = window
        self.records: List[DecisionRecord] = []

    def add(self, record: DecisionRecord) -> None:
        self.records.append(record)

    def evict(self, now: float) -> None:
        cutoff = now - self.window
        self.records = [r for r in self.records if r.time > cutoff]

    def __len__(self) -> int:
        return len(self.records)


class PPOTrainer:
    """Owns the policy, its frozen reference, the value head, and updates."""

    def __init__(
        self,
        policy: TokenPolicy,
        value_head: ValueHead,
        config: TrainerConfig,
        shuffle_rng: np.random.Generator,
        reference: Optional[TokenPolicy] = None,
    ):
        self.policy = policy
        self.value_head = value_head
        self.config = config
        self.reference = reference if reference is not None else policy.snapshot()
        self.buffer = ReplayBuffer(config.buffer_window)
        self.shuffle_rng = shuffle_rng
        self.opt_policy = AdamW(POLICY_FIELDS, config.actor_lr, config.actor_weight_decay)
        self.opt_value = AdamW(VALUE_FIELDS, config.value_lr, config.value_weight_decay)
        self.updates_done = 0

    # -- batching --------------------------------------------------------

    def _pad_batch(self, records: Sequence[DecisionRecord]):
        B = len(records)
        lmax = max(r.tokens.size for r in records)
        F = records[0].features.size
        features = np.zeros((B, F))
        tokens = np.full((B, lmax), -1, dtype=np.int64)
        logps_old = np.zeros((B, lmax))
        rewards = np.zeros((B, lmax))
        lengths = np.zeros(B, dtype=np.int64)
        v_old = np.zeros(B)
        for i, rec in enumerate(records):
            n = rec.tokens.size
            features[i] = rec.features
            tokens[i, :n] = rec.tokens
            logps_old[i, :n] = rec.logps_old
            rewards[i, :n] = rec.rewards
            lengths[i] = n
            v_old[i] = rec.v_old
        return features, tokens, logps_old, rewards, lengths, v_old

    def _advantages(self, rewards, lengths, v_old):
        """Per-token advantages and lambda-returns, padded like the batch."""
        cfg = self.config
        B, lmax = rewards.shape
        adv = np.zeros((B, lmax))
        rets = np.zeros((B, lmax))
        for i in range(B):
            n = int(lengths[i])
            r = rewards[i, :n]
            if cfg.use_critic:
                values = np.full(n, v_old[i])
                a = gae(r, values, cfg.gamma, cfg.lam)
                adv[i, :n] = a
                rets[i, :n] = a + v_old[i]
            else:
                g = discounted_returns(r, cfg.gamma)
                adv[i, :n] = g
                rets[i, :n] = g
        return adv, rets

    # -- the update ------------------------------------------------------

    def update(self, step: float) -> dict:
        """One optimization pass: n_b shuffled batches, one step each.

        ``step`` is the global simulation time, recorded in diagnostics.
        Raises on an empty buffer.
        """
        cfg = self.config
        records = self.buffer.records
        if not records:
            raise ValueError("update called with an empty buffer")

        n = len(records)
        order = self.shuffle_rng.permutation(n)
        pos = 0
        diag = {k: 0.0 for k in (
            "mean_ratio", "clip_fraction", "policy_loss", "value_loss",
            "mean_advantage", "grad_norm_policy", "grad_norm_value",
        )}

        for _ in range(cfg.batches_per_update):
            take = min(cfg.batch_size, n)
            if pos + take > n:
                order = self.shuffle_rng.permutation(n)
                pos = 0
            batch = [records[int(i)] for i in order[pos : pos + take]]
            pos += take
            stats = self._update_batch(batch)
            for k, v in stats.items():
                diag[k] += v / cfg.batches_per_update

        self.updates_done += 1
        diag["step"] = step
        return diag

    def _update_batch(self, batch: Sequence[DecisionRecord]) -> dict:
        cfg = self.config
        features, tokens, logps_old, rewards, lengths, v_old = self._pad_batch(batch)
        B, lmax = tokens.shape
        mask = np.arange(lmax)[None, :] < lengths[:, None]
        n_tok = int(mask.sum())

        adv, rets = self._advantages(rewards, lengths, v_old)
        flat_adv = adv[mask]
        raw_adv_mean = float(flat_adv.mean())
        adv_std = standardize(flat_adv)
        adv_padded = np.zeros_like(adv)
        adv_padded[mask] = adv_std

        logps_new, logits, cache = self.policy.logprobs_batch(features, tokens, lengths)
        ratio = np.where(mask, np.exp(logps_new - logps_old), 1.0)
        obj, dlogp = policy_surrogate(ratio, adv_padded, cfg.eps_low, cfg.eps_high)
        obj = np.where(mask, obj, 0.0)
        j_clip = float(obj.sum() / n_tok)
        # loss = -J: each valid token contributes -dobj / n_tok through its log-prob
        dlogp_loss = np.where(mask, -dlogp / n_tok, 0.0)

        probs = np.exp(logits - _lse(logits)[..., None])
        dlogits = -probs * dlogp_loss[:, :, None]
        rows = np.arange(B)[:, None]
        cols = np.arange(lmax)[None, :]
        dlogits[rows, cols, cache["ids"]] += dlogp_loss
        dlogits *= mask[:, :, None]

        policy_grads = self.policy.backward_from_dlogits(cache, dlogits)
        norm_p = clip_by_global_norm(policy_grads, cfg.grad_clip_policy)
        self.opt_policy.step(self.policy.params, policy_grads)

        v_loss = 0.0
        norm_v = 0.0
        if cfg.use_critic:
            v_new, v_cache = self.value_head.forward_batch(features)
            v_tok = np.repeat(v_new, lengths)
            vo_tok = np.repeat(v_old, lengths)
            v_loss, dv_tok = value_loss(v_tok, vo_tok, rets[mask], cfg.eps_value, cfg.value_clip_mode)
            dv_rec = np.zeros(B)
            splits = np.cumsum(lengths)[:-1]
            for i, part in enumerate(np.split(dv_tok, splits)):
                dv_rec[i] = part.sum()
            value_grads = self.value_head.backward(v_cache, cfg.alpha * dv_rec)
            norm_v = clip_by_global_norm(value_grads, cfg.grad_clip_value)
            self.opt_value.step(self.value_head.params, value_grads)

        flat_ratio = ratio[mask]
        return {
            "mean_ratio": float(flat_ratio.mean()),
            "clip_fraction": float(
                ((flat_ratio < 1.0 - cfg.eps_low) | (flat_ratio > 1.0 + cfg.eps_high)).mean()
            ),
            "policy_loss": -j_clip,
            "value_loss": v_loss,
            "mean_advantage": raw_adv_mean,
            "grad_norm_policy": norm_p,
            "grad_norm_value": norm_v,
        }

    # -- persistence -----------------------------------------------------

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for f in POLICY_FIELDS:
            out[f"policy.{f}"] = self.policy.params[f]
            out[f"ref.{f}"] = self.reference.params[f]
        for f in VALUE_FIELDS:
            out[f"value.{f}"] = self.value_head.params[f]
        for name, opt in (("optp", self.opt_policy), ("optv", self.opt_value)):
            for f, arr in opt.m.items():
                out[f"{name}.m.{f}"] = arr
            for f, arr in opt.v.items():
                out[f"{name}.v.{f}"] = arr
        for i, rec in enumerate(self.buffer.records):
            out[f"buf.{i}.features"] = rec.features
            out[f"buf.{i}.tokens"] = rec.tokens
            out[f"buf.{i}.logps"] = rec.logps_old
            out[f"buf.{i}.rewards"] = rec.rewards
        return out

    def state_meta(self) -> dict:
        return {
            "opt_policy_t": self.opt_policy.t,
            "opt_value_t": self.opt_value.t,
            "updates_done": self.updates_done,
            "shuffle_rng": self.shuffle_rng.bit_generator.state,
            "buffer": [
                {"time": rec.time, "v_old": rec.v_old, "phase": rec.phase}
                for rec in self.buffer.records
            ],
        }

    def load_state(self, arrays: Dict[str, np.ndarray], meta: dict) -> None:
        for f in POLICY_FIELDS:
            self.policy.params[f] = np.array(arrays[f"policy.{f}"])
            self.reference.params[f] = np.array(arrays[f"ref.{f}"])
        for f in VALUE_FIELDS:
            self.value_head.params[f] = np.array(arrays[f"value.{f}"])
        for name, opt, fields in (
            ("optp", self.opt_policy, POLICY_FIELDS),
            ("optv", self.opt_value, VALUE_FIELDS),
        ):
            if f"{name}.m.{fields[0]}" in arrays:
                opt.m = {f: np.array(arrays[f"{name}.m.{f}"]) for f in fields}
                opt.v = {f: np.array(arrays[f"{name}.v.{f}"]) for f in fields}
        self.opt_policy.t = int(meta["opt_policy_t"])
        self.opt_value.t = int(meta["opt_value_t"])
        self.updates_done = int(meta["updates_done"])
        self.shuffle_rng.bit_generator.state = meta["shuffle_rng"]
        self.buffer.records = [
            DecisionRecord(
                time=float(entry["time"]),
                features=np.array(arrays[f"buf.{i}.features"]),
                tokens=np.array(arrays[f"buf.{i}.tokens"]),
                logps_old=np.array(arrays[f"buf.{i}.logps"]),
                rewards=np.array(arrays[f"buf.{i}.rewards"]),
                v_old=float(entry["v_old"]),
                phase=int(entry["phase"]),
            )
            for i, entry in enumerate(meta["buffer"])
        ]


def _lse(logits: np.ndarray) -> np.ndarray:
    mx = logits.max(axis=-1, keepdims=True)
    return (mx + np.log(np.exp(logits - mx).sum(axis=-1, keepdims=True)))[..., 0]


def save_checkpoint(path, trainer: PPOTrainer, config_hash: str, runner_meta: dict, runner_arrays=None) -> None:
    """Write a fully resumable training snapshot.

    ``runner_meta``/``runner_arrays`` carry episode-loop state (sim state,
    counters, demand RNG) owned by the caller; they round-trip unchanged.
    """
    arrays = trainer.state_arrays()
    if runner_arrays:
        arrays.update({f"runner.{k}": v for k, v in runner_arrays.items()})
    meta = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "policy_meta": trainer.policy.meta(),
        "trainer_meta": trainer.state_meta(),
        "runner_meta": runner_meta,
    }
    np.savez(path, meta=json.dumps(meta), **arrays)


def load_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    """Read a snapshot; returns (meta, arrays). Errors name the problem."""
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: np.array(data[k]) for k in data.files if k != "meta"}
            meta = json.loads(str(data["meta"]))
    except (OSError, ValueError, KeyError) as exc:
        raise ValueError(f"unreadable checkpoint {path}: {exc}") from exc
    version = meta.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint version mismatch: file has {version}, expected {CHECKPOINT_VERSION}"
        )
    return meta, arrays

"""Environmental, hurdle, semantic-uncertainty, and per-token KL rewards.

The sequence-level reward is the queue improvement minus a fixed hurdle,
optionally plus a gated confidence bonus computed from the agreement of G
sampled responses. Intermediate tokens carry only a KL penalty against the
frozen reference policy; the final token carries the task reward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ENTROPY_MODES = ("softmax_dse", "naive_dse", "off")
ENV_MODES = ("queue_difference", "negative_queue")


@dataclass
class RewardConfig:
    h_r: float = 3.0  # hurdle, vehicles
    w_e: float = 1.0  # uncertainty-bonus weight
    tau: float = 1.0  # softmax temperature over phase counts
    beta: float = 0.05  # per-token KL weight
    entropy_mode: str = "softmax_dse"
    env_mode: str = "queue_difference"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.w_e < 0:
            raise ValueError("w_e must be >= 0")
        if self.entropy_mode not in ENTROPY_MODES:
            raise ValueError(f"entropy_mode must be one of {ENTROPY_MODES}")
        if self.env_mode not in ENV_MODES:
            raise ValueError(f"env_mode must be one of {ENV_MODES}")


def env_reward(queue_prev: float, queue_curr: float, env_mode: str = "queue_difference") -> float:
    """Queue improvement (default) or plain negative queue."""
    if env_mode == "queue_difference":
        return queue_prev - queue_curr
    if env_mode == "negative_queue":
        return -queue_curr
    raise ValueError(f"unknown env_mode {env_mode!r}")


def hurdle(r_env: float, h_r: float) -> float:
    return r_env - h_r


def softmax_dse_prob(counts: Sequence[float], chosen: int, tau: float) -> float:
    """Confidence of the chosen phase under softmax(counts / tau).

    Max-subtraction keeps tiny temperatures finite; the math is unchanged.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    c = np.asarray(counts, dtype=np.float64) / tau
    c = c - c.max()
    e = np.exp(c)
    return float(e[chosen] / e.sum())


def naive_dse_prob(counts: Sequence[float], chosen: int) -> float:
    """Empirical agreement ratio counts[chosen] / sum(counts)."""
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if total <= 0:
        raise ValueError("counts must sum to >= 1")
    return float(c[chosen] / total)


def gated_entropy_reward(p_chosen: float, r_env: float, h_r: float) -> float:
    """Confidence bonus, paid only when the hurdle is strictly cleared."""
    return p_chosen if r_env > h_r else 0.0


def total_reward(r_env: float, h_r: float, w_e: float, r_entropy: float) -> float:
    return r_env - h_r + w_e * r_entropy


def k3_kl(logp_policy, logp_ref):
    """Per-token K3 divergence estimate, ratio = exp(logp_ref - logp_policy).

    Nonnegative, zero exactly when the log-probs agree. Elementwise over
    arrays.
    """
    ratio = np.exp(np.asarray(logp_ref, dtype=np.float64) - np.asarray(logp_policy, dtype=np.float64))
    return ratio - np.log(ratio) - 1.0


def assemble_token_rewards(
    policy_logprobs: Sequence[float],
    ref_logprobs: Sequence[float],
    r_final: float,
    beta: float,
) -> np.ndarray:
    """Per-token reward vector: -beta * KL except the final task reward.

    The final position carries ``r_final`` alone (no KL term there).
    """
    lp = np.asarray(policy_logprobs, dtype=np.float64)
    lr = np.asarray(ref_logprobs, dtype=np.float64)
    if lp.shape != lr.shape:
        raise ValueError(f"log-prob length mismatch: {lp.shape} vs {lr.shape}")
    if lp.size == 0:
        raise ValueError("empty trajectory")
    rewards = -beta * k3_kl(lp, lr)
    rewards[-1] = r_final
    return rewards


def decision_reward(
    counts: Sequence[float],
    chosen: int,
    r_env: float,
    cfg: RewardConfig,
) -> dict:
    """Full sequence-level reward bundle for one decision.

    Returns p_chosen (None when entropy is off or no response ensemble
    was collected), the gated bonus, the gate state, and the total
    reward R_env - H_R + w_E * R_E.
    """
    if counts is None:
        p_chosen = None
    elif cfg.entropy_mode == "softmax_dse":
        p_chosen = softmax_dse_prob(counts, chosen, cfg.tau)
    elif cfg.entropy_mode == "naive_dse":
        p_chosen = naive_dse_prob(counts, chosen)
    else:
        p_chosen = None
    gate_open = r_env > cfg.h_r
    r_entropy = gated_entropy_reward(p_chosen, r_env, cfg.h_r) if p_chosen is not None else 0.0
    return {
        "p_chosen": p_chosen,
        "r_entropy": r_entropy,
        "gate_open": bool(gate_open),
        "r_total": total_reward(r_env, cfg.h_r, cfg.w_e, r_entropy),
    }

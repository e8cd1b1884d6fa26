"""Config-driven seeded experiment runner.

One runner owns the simulator, the token pipeline, the trainer, and all
output sinks. The episode loop takes a decision every ``decision_interval``
steps; each decision's reward closes at the next decision point (queue
difference over the interval), so records enter the buffer one decision
late and the final one closes at episode end. Updates and checkpoints
fire on fixed timestep boundaries, and checkpoints capture the complete
loop state so a restored run continues bit-identically.
"""

from __future__ import annotations

import hashlib
import json
import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import _kernels
from .baselines import FixedTimeController, MaxPressureController, RandomController
from .phases import PromptContext, Vocabulary, extract_phase, feature_length, phase_histogram, verbalize
from .policy import TokenPolicy, ValueHead
from .rewards import RewardConfig, assemble_token_rewards, decision_reward, env_reward
from .sim import (
    STREAM_CONTROLLER,
    STREAM_DEMAND,
    STREAM_HOLDOUT,
    STREAM_INIT,
    STREAM_SHUFFLE,
    DemandProfile,
    Intersection,
    Topology,
    build_topology,
)
from .trainer import DecisionRecord, PPOTrainer, TrainerConfig, load_checkpoint, save_checkpoint

CONTROLLERS = ("policy", "fixed", "maxpressure", "random")

STEP_COLUMNS = ("time", "phase", "queue", "injected", "completed")
TRAIN_LOG_COLUMNS = (
    "step",
    "mean_ratio",
    "clip_fraction",
    "policy_loss",
    "value_loss",
    "mean_advantage",
    "grad_norm_policy",
    "grad_norm_value",
)
# wall-clock time stays out of the CSVs so same-seed runs are bit-identical
METRIC_COLUMNS = (
    "episode",
    "travel_time",
    "queue_length",
    "delay_seconds",
    "delay_ratio",
    "throughput",
    "decisions",
)


@dataclass
class PolicyShape:
    d_embed: int = 16
    d_hidden: int = 64
    k_history: int = 4
    max_len: int = 32
    n_filler: int = 16


@dataclass
class ExperimentConfig:
    topology: object = "toy8"  # preset name or explicit dict
    topology_overrides: dict = field(default_factory=dict)
    demand: dict = field(default_factory=lambda: {"kind": "poisson", "base_rate": 0.05})
    controller: str = "policy"
    episodes: int = 1
    seed: int = 0
    out: Optional[str] = None
    t_fixed: float = 10.0
    default_phase: int = 0
    action_from_extra_sample: bool = False
    holdout_eval: bool = True
    reward: RewardConfig = field(default_factory=RewardConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    policy: PolicyShape = field(default_factory=PolicyShape)

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.seed is None:
            raise ValueError("seed must be set; unseeded runs are not supported")

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        reward = RewardConfig(**raw.pop("reward", {}))
        trainer = TrainerConfig(**raw.pop("trainer", {}))
        policy = PolicyShape(**raw.pop("policy", {}))
        known = {
            "topology",
            "topology_overrides",
            "demand",
            "controller",
            "episodes",
            "seed",
            "out",
            "t_fixed",
            "default_phase",
            "action_from_extra_sample",
            "holdout_eval",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return ExperimentConfig(reward=reward, trainer=trainer, policy=policy, **raw)

    @staticmethod
    def from_yaml(path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        return ExperimentConfig.from_dict(raw)

    def to_dict(self) -> dict:
        out = {
            "topology": self.topology,
            "topology_overrides": dict(self.topology_overrides),
            "demand": dict(self.demand),
            "controller": self.controller,
            "episodes": self.episodes,
            "seed": self.seed,
            "out": self.out,
            "t_fixed": self.t_fixed,
            "default_phase": self.default_phase,
            "action_from_extra_sample": self.action_from_extra_sample,
            "holdout_eval": self.holdout_eval,
            "reward": vars(self.reward).copy(),
            "trainer": vars(self.trainer).copy(),
            "policy": vars(self.policy).copy(),
        }
        return out

    def config_hash(self) -> str:
        """Hash identifying the experiment definition.

        Covers everything that shapes trajectories (topology, demand,
        rewards, trainer, policy); excludes the seed, the output path,
        and run-length knobs so reruns and resumed runs with a longer
        budget keep the same identity.
        """
        payload = self.to_dict()
        for key in ("seed", "out", "episodes", "holdout_eval"):
            payload.pop(key)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


class _CsvSink:
    def __init__(self, path, columns, append=False):
        self.path = Path(path)
        exists = self.path.exists() and append
        self.fh = open(self.path, "a" if append else "w", encoding="utf-8", newline="")
        self.columns = columns
        if not exists:
            self.fh.write(",".join(columns) + "\n")

    def row(self, values: dict) -> None:
        self.fh.write(",".join(_fmt(values[c]) for c in self.columns) + "\n")

    def close(self) -> None:
        self.fh.flush()
        self.fh.close()


@dataclass
class _Pending:
    """A decision awaiting its reward at the next decision boundary."""

    time: float  # episode-local
    global_time: float
    queue_before: float
    phase: int
    decision_index: int
    features: Optional[np.ndarray] = None
    tokens: Optional[np.ndarray] = None
    logps: Optional[np.ndarray] = None
    ref_logps: Optional[np.ndarray] = None
    v_old: float = 0.0
    counts: Optional[list] = None


@dataclass
class EpisodeReport:
    episode: int
    metrics: dict
    decisions: int
    steps_csv: str
    decisions_jsonl: str
    reward_histogram: dict
    wall_clock: float


def reward_histogram(jsonl_path, hurdle: float, bin_width: float = 0.5) -> dict:
    """Histogram of per-decision environmental rewards from a decision log.

    Returns bin edges/counts plus the fraction of decisions whose reward
    strictly exceeds the hurdle (invariant to the bin width).
    """
    rewards = []
    with open(jsonl_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                rewards.append(float(row["R_env"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"malformed decision log {jsonl_path}: {exc}") from exc
    if not rewards:
        return {"bin_edges": [], "counts": [], "fraction_above": 0.0, "n": 0}
    arr = np.asarray(rewards)
    lo = math.floor(arr.min() / bin_width) * bin_width
    hi = math.ceil(arr.max() / bin_width) * bin_width
    if hi <= lo:
        hi = lo + bin_width
    edges = np.arange(lo, hi + bin_width / 2, bin_width)
    counts, edges = np.histogram(arr, bins=edges)
    return {
        "bin_edges": [float(e) for e in edges],
        "counts": [int(c) for c in counts],
        "fraction_above": float((arr > hurdle).mean()),
        "n": int(arr.size),
    }


class ExperimentRunner:
    """Builds every component from a config and drives seeded episodes."""

    def __init__(self, cfg: ExperimentConfig, out_dir=None):
        self.cfg = cfg
        self.topo: Topology = build_topology(cfg.topology, **cfg.topology_overrides)
        if not 0 <= cfg.default_phase < self.topo.n_phases:
            raise ValueError(f"default_phase {cfg.default_phase} out of range")
        self.demand_template = DemandProfile.from_dict(cfg.demand)
        self.out_dir = Path(out_dir if out_dir is not None else (cfg.out or "runs/exp"))
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.hash = cfg.config_hash()

        self.vocab = Vocabulary.for_topology(self.topo, n_filler=cfg.policy.n_filler)
        self.feature_len = feature_length(self.topo)

        self.trainer: Optional[PPOTrainer] = None
        self._random_controller: Optional[RandomController] = None
        if cfg.controller == "policy":
            cfg.trainer.warn_if_few_responses(self.topo.n_phases)
            init_rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([cfg.seed, STREAM_INIT]))
            )
            policy = TokenPolicy(
                vocab_size=self.vocab.size,
                feature_len=self.feature_len,
                eos_id=self.vocab.eos_id,
                d_embed=cfg.policy.d_embed,
                d_hidden=cfg.policy.d_hidden,
                k_history=cfg.policy.k_history,
                max_len=cfg.policy.max_len,
                rng=init_rng,
            )
            value_head = ValueHead(self.feature_len, rng=init_rng)
            shuffle_rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([cfg.seed, STREAM_SHUFFLE]))
            )
            self.trainer = PPOTrainer(policy, value_head, cfg.trainer, shuffle_rng)
        elif cfg.controller == "random":
            self._random_controller = RandomController(
                np.random.Generator(
                    np.random.PCG64(np.random.SeedSequence([cfg.seed, STREAM_CONTROLLER]))
                )
            )
        elif cfg.controller == "fixed":
            self._fixed = FixedTimeController(cfg.t_fixed)
        elif cfg.controller == "maxpressure":
            self._maxpressure = MaxPressureController()

        self.episode_index = 0
        self.decision_counter = 0  # global across episodes, keys the sampling streams
        self.history: List[Tuple[str, int]] = []
        self._resume_step: Optional[float] = None
        self._resume_sim_state: Optional[dict] = None

        self._write_run_info()

    # -- plumbing --------------------------------------------------------

    def _write_run_info(self) -> None:
        info = {
            "config_hash": self.hash,
            "seed": self.cfg.seed,
            "controller": self.cfg.controller,
            "backend": _kernels.BACKEND,
            "topology": self.topo.name,
        }
        with open(self.out_dir / "run_info.json", "w", encoding="utf-8") as fh:
            json.dump(info, fh, indent=2, sort_keys=True)
        resolved = self.out_dir / "config_resolved.yaml"
        with open(resolved, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.cfg.to_dict(), fh, sort_keys=True)

    def _new_sim(self, episode: int) -> Intersection:
        demand = DemandProfile(
            rates=dict(self.demand_template.rates),
            surges=list(self.demand_template.surges),
            spawns=list(self.demand_template.spawns),
            base_rate=self.demand_template.base_rate,
        )
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.cfg.seed, STREAM_DEMAND, episode]))
        )
        return Intersection(self.topo, demand, rng)

    def _decide_policy(self, ctx: PromptContext, learn: bool, temperature: Optional[float]):
        """Sample responses for one decision; returns (action, pending fields)."""
        cfg = self.cfg
        temp = cfg.trainer.temperature if temperature is None else temperature
        g = cfg.trainer.g_responses
        n_samples = (g + 1 if cfg.action_from_extra_sample else g) if learn else 1
        # leading 0 reserves the key space; holdout evaluation uses 1
        keys = [
            _kernels.derive_key(cfg.seed, 0, self.decision_counter, r)
            for r in range(n_samples)
        ]
        tokens, lengths, logps = self.trainer.policy.sample(
            ctx.features, keys, temperature=temp
        )
        action_tokens = tokens[0, : lengths[0]]
        action_logps = logps[0, : lengths[0]]
        action_phase = extract_phase(action_tokens, self.topo, cfg.default_phase, self.vocab)

        counts = None
        if learn:
            first_entropy = 1 if cfg.action_from_extra_sample else 0
            responses = [tokens[r, : lengths[r]] for r in range(first_entropy, n_samples)]
            counts = phase_histogram(responses, self.topo, cfg.default_phase, self.vocab)
        return action_phase, action_tokens, action_logps, counts

    def _close_pending(
        self,
        pending: _Pending,
        queue_now: float,
        learn: bool,
        jsonl_fh,
        env_rewards: List[float],
    ) -> None:
        cfg = self.cfg
        r_env = env_reward(pending.queue_before, queue_now, cfg.reward.env_mode)
        env_rewards.append(r_env)
        counts = pending.counts
        bundle = decision_reward(counts, pending.phase, r_env, cfg.reward)
        row = {
            "time": pending.time,
            "chosen_phase": pending.phase,
            "counts": None if counts is None else [int(c) for c in counts],
            "p_chosen": bundle["p_chosen"],
            "R_env": r_env,
            "R_total": bundle["r_total"],
            "gate_open": bundle["gate_open"],
        }
        jsonl_fh.write(json.dumps(row, sort_keys=True) + "\n")
        if learn and pending.tokens is not None:
            rewards = assemble_token_rewards(
                pending.logps, pending.ref_logps, bundle["r_total"], cfg.reward.beta
            )
            self.trainer.buffer.add(
                DecisionRecord(
                    time=pending.global_time,
                    features=pending.features,
                    tokens=pending.tokens,
                    logps_old=pending.logps,
                    rewards=rewards,
                    v_old=pending.v_old,
                    phase=pending.phase,
                )
            )

    # -- the episode loop ------------------------------------------------

    def run_episode(
        self,
        learn: bool,
        train_log: Optional[_CsvSink] = None,
        temperature: Optional[float] = None,
        checkpoints: bool = None,
        tag: str = "",
    ) -> EpisodeReport:
        cfg = self.cfg
        tcfg = cfg.trainer
        episode = self.episode_index
        if checkpoints is None:
            checkpoints = learn
        t0_wall = _time.perf_counter()

        if self._resume_sim_state is not None:
            sim = self._new_sim(episode)
            sim.load_state_dict(self._resume_sim_state)
            start_t = int(self._resume_step)
            self._resume_sim_state = None
            self._resume_step = None
        else:
            sim = self._new_sim(episode)
            start_t = 0
            self.history = []

        prefix = f"ep{episode:03d}{tag}"
        steps_path = self.out_dir / f"{prefix}_steps.csv"
        jsonl_path = self.out_dir / f"{prefix}_decisions.jsonl"
        steps = _CsvSink(steps_path, STEP_COLUMNS)
        jsonl_fh = open(jsonl_path, "w", encoding="utf-8")

        pending: Optional[_Pending] = None
        env_rewards: List[float] = []
        decisions = 0
        length = tcfg.episode_length

        try:
            for t in range(start_t, length):
                if t % tcfg.decision_interval == 0:
                    queue_now = sim.queue_length()
                    obs = sim.observe()
                    ctx = verbalize(obs, sim.active_phase, self.topo, self.history)

                    if pending is not None:
                        self._close_pending(pending, queue_now, learn, jsonl_fh, env_rewards)
                        pending = None

                    global_t = episode * length + t
                    if learn and t > start_t:
                        if t % tcfg.update_interval == 0:
                            self.trainer.buffer.evict(global_t)
                            if len(self.trainer.buffer):
                                diag = self.trainer.update(global_t)
                                if train_log is not None:
                                    train_log.row(diag)
                        if checkpoints and t % tcfg.checkpoint_interval == 0:
                            self._save_checkpoint(t, sim=sim)

                    if cfg.controller == "policy":
                        action, toks, lps, counts = self._decide_policy(ctx, learn, temperature)
                        p = _Pending(
                            time=float(t),
                            global_time=float(global_t),
                            queue_before=queue_now,
                            phase=action,
                            decision_index=self.decision_counter,
                        )
                        if learn:
                            p.features = ctx.features
                            p.tokens = np.array(toks)
                            p.logps = np.array(lps)
                            p.ref_logps = np.asarray(
                                self.trainer.reference.logprobs(ctx.features, toks)
                            )
                            p.v_old = (
                                self.trainer.value_head.value(ctx.features)
                                if tcfg.use_critic
                                else 0.0
                            )
                            p.counts = counts
                        pending = p
                    else:
                        if cfg.controller == "fixed":
                            action = self._fixed.decide(obs, sim.active_phase, t, self.topo)
                        elif cfg.controller == "maxpressure":
                            action = self._maxpressure.decide(obs, sim.active_phase, t, self.topo)
                        else:
                            action = self._random_controller.decide(obs, sim.active_phase, t, self.topo)
                        pending = _Pending(
                            time=float(t),
                            global_time=float(episode * length + t),
                            queue_before=queue_now,
                            phase=action,
                            decision_index=self.decision_counter,
                        )

                    sim.set_phase(action)
                    self.history.append((f"queue {queue_now:.2f}", action))
                    self.history = self.history[-2:]
                    self.decision_counter += 1
                    decisions += 1

                sim.step()
                assert sim.conservation_ok(), "vehicle conservation violated"
                steps.row(
                    {
                        "time": sim.time,
                        "phase": sim.active_phase,
                        "queue": sim.queue_length(),
                        "injected": sim.injected_count,
                        "completed": len(sim.completed),
                    }
                )

            # episode end: close the final decision, then the final update
            queue_now = sim.queue_length()
            if pending is not None:
                self._close_pending(pending, queue_now, learn, jsonl_fh, env_rewards)
                pending = None
            if learn:
                global_t = episode * length + length
                if length % tcfg.update_interval == 0:
                    self.trainer.buffer.evict(global_t)
                    if len(self.trainer.buffer):
                        diag = self.trainer.update(global_t)
                        if train_log is not None:
                            train_log.row(diag)
                if checkpoints and length % tcfg.checkpoint_interval == 0:
                    self.episode_index += 1
                    self._save_checkpoint(0)
                    self.episode_index -= 1
        finally:
            steps.close()
            jsonl_fh.close()

        metrics = sim.finalize_metrics()
        hist = {}
        if env_rewards:
            arr = np.asarray(env_rewards)
            lo = math.floor(arr.min() / 0.5) * 0.5
            hi = max(math.ceil(arr.max() / 0.5) * 0.5, lo + 0.5)
            counts, edges = np.histogram(arr, bins=np.arange(lo, hi + 0.25, 0.5))
            hist = {
                "bin_edges": [float(e) for e in edges],
                "counts": [int(c) for c in counts],
                "fraction_above": float((arr > cfg.reward.h_r).mean()),
            }

        self.episode_index += 1
        return EpisodeReport(
            episode=episode,
            metrics=metrics.as_dict(),
            decisions=decisions,
            steps_csv=str(steps_path),
            decisions_jsonl=str(jsonl_path),
            reward_histogram=hist,
            wall_clock=_time.perf_counter() - t0_wall,
        )

    # -- checkpointing ---------------------------------------------------

    def _save_checkpoint(self, t: int, sim: "Intersection" = None, path=None) -> Path:
        """Snapshot at a decision boundary with no pending decision.

        ``t`` is the episode-local step; episode-end snapshots store the
        *next* episode index with t = 0 so resume starts it fresh.
        """
        if path is None:
            path = self.out_dir / f"ckpt_ep{self.episode_index:03d}_t{t:05d}.npz"
        runner_meta = {
            "episode_index": self.episode_index,
            "step": t,
            "decision_counter": self.decision_counter,
            "history": [[s, int(a)] for s, a in self.history],
            "sim_state": None if sim is None else sim.state_dict(),
        }
        save_checkpoint(path, self.trainer, self.hash, runner_meta)
        return path

    def restore(self, path, fresh_episodes: bool = False) -> None:
        """Load a snapshot produced by :meth:`_save_checkpoint`.

        With ``fresh_episodes`` a mid-episode snapshot yields full new
        episodes from the stored parameters instead of finishing the
        interrupted one.
        """
        meta, arrays = load_checkpoint(path)
        pm = meta["policy_meta"]
        if int(pm["vocab_size"]) != self.vocab.size:
            raise ValueError(
                f"checkpoint vocabulary size {pm['vocab_size']} does not match "
                f"the configured topology's {self.vocab.size}"
            )
        if meta["config_hash"] != self.hash:
            raise ValueError("checkpoint config hash does not match the supplied config")
        self.trainer.load_state(arrays, meta["trainer_meta"])
        rm = meta["runner_meta"]
        self.episode_index = int(rm["episode_index"])
        self.decision_counter = int(rm["decision_counter"])
        self.history = [(s, int(a)) for s, a in rm["history"]]
        if rm["sim_state"] is not None and not fresh_episodes:
            self._resume_sim_state = rm["sim_state"]
            self._resume_step = int(rm["step"])

    # -- drivers ---------------------------------------------------------

    def train(self, episodes: Optional[int] = None) -> List[EpisodeReport]:
        if self.trainer is None:
            raise ValueError("train requires controller: policy")
        n = episodes if episodes is not None else self.cfg.episodes
        metrics_sink = _CsvSink(self.out_dir / "metrics.csv", METRIC_COLUMNS, append=True)
        train_log = _CsvSink(self.out_dir / "train_log.csv", TRAIN_LOG_COLUMNS, append=True)
        best_queue = math.inf
        reports = []
        try:
            while self.episode_index < n:
                report = self.run_episode(learn=True, train_log=train_log)
                metrics_sink.row(
                    {
                        "episode": report.episode,
                        "decisions": report.decisions,
                        "wall_clock": report.wall_clock,
                        **report.metrics,
                    }
                )
                reports.append(report)
                if self.cfg.holdout_eval:
                    holdout_queue = self._holdout_queue()
                    if holdout_queue < best_queue:
                        best_queue = holdout_queue
                        self._save_checkpoint(0, path=self.out_dir / "ckpt_best.npz")
        finally:
            metrics_sink.close()
            train_log.close()
        self._save_checkpoint(0, path=self.out_dir / "ckpt_final.npz")
        return reports

    def _holdout_queue(self) -> float:
        """Average queue of a held-out eval episode on its own demand seed.

        The held-out demand and sampling keys are fixed across calls so
        successive checkpoints are judged on the same episode.
        """
        sim = self._new_sim_holdout()
        tcfg = self.cfg.trainer
        hist: List[Tuple[str, int]] = []
        index = 0
        for t in range(tcfg.episode_length):
            if t % tcfg.decision_interval == 0:
                q_now = sim.queue_length()
                obs = sim.observe()
                ctx = verbalize(obs, sim.active_phase, self.topo, hist)
                keys = [_kernels.derive_key(self.cfg.seed, 1, index, 0)]
                tokens, lengths, _ = self.trainer.policy.sample(
                    ctx.features, keys, temperature=tcfg.temperature
                )
                action = extract_phase(
                    tokens[0, : lengths[0]], self.topo, self.cfg.default_phase, self.vocab
                )
                sim.set_phase(action)
                hist.append((f"queue {q_now:.2f}", action))
                hist = hist[-2:]
                index += 1
            sim.step()
        return sim.finalize_metrics().queue_length

    def _new_sim_holdout(self) -> Intersection:
        demand = DemandProfile(
            rates=dict(self.demand_template.rates),
            surges=list(self.demand_template.surges),
            spawns=list(self.demand_template.spawns),
            base_rate=self.demand_template.base_rate,
        )
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.cfg.seed, STREAM_HOLDOUT]))
        )
        return Intersection(self.topo, demand, rng)

    def evaluate(self, episodes: Optional[int] = None, temperature: Optional[float] = None) -> List[EpisodeReport]:
        n = episodes if episodes is not None else self.cfg.episodes
        metrics_sink = _CsvSink(self.out_dir / "metrics.csv", METRIC_COLUMNS, append=True)
        reports = []
        try:
            for _ in range(n):
                report = self.run_episode(learn=False, temperature=temperature)
                metrics_sink.row(
                    {
                        "episode": report.episode,
                        "decisions": report.decisions,
                        "wall_clock": report.wall_clock,
                        **report.metrics,
                    }
                )
                reports.append(report)
        finally:
            metrics_sink.close()
        return reports


def run_config(cfg: ExperimentConfig, out_dir=None) -> List[EpisodeReport]:
    """Train when the controller learns, otherwise evaluate."""
    runner = ExperimentRunner(cfg, out_dir=out_dir)
    if cfg.controller == "policy":
        return runner.train()
    return runner.evaluate()


def compare(configs: Sequence[ExperimentConfig], seeds: Sequence[int], out_dir, labels=None) -> List[dict]:
    """Run each config over the seeds; one median-aggregated row per config.

    All configs must share a topology and demand description. Learned
    configs are trained and judged on their final episode; baselines are
    evaluated the same way.
    """
    if len(configs) < 2:
        raise ValueError("compare needs at least 2 configs")
    ref = (json.dumps(configs[0].topology, sort_keys=True), json.dumps(configs[0].demand, sort_keys=True))
    for cfg in configs[1:]:
        key = (json.dumps(cfg.topology, sort_keys=True), json.dumps(cfg.demand, sort_keys=True))
        if key != ref:
            raise ValueError("compare requires configs sharing topology and demand")
    if labels is None:
        labels = [f"config{i}" for i in range(len(configs))]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for label, cfg in zip(labels, configs):
        finals = {k: [] for k in ("travel_time", "queue_length", "delay_seconds", "delay_ratio", "throughput")}
        for seed in seeds:
            run_cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": int(seed)})
            reports = run_config(run_cfg, out_dir=out_dir / f"{label}_seed{seed}")
            final = reports[-1].metrics
            for k in finals:
                finals[k].append(final[k])
        row = {"label": label}
        for k, vals in finals.items():
            row[k] = float(np.median(vals))
        rows.append(row)

    columns = ["label", "travel_time", "queue_length", "delay_seconds", "delay_ratio", "throughput"]
    sink = _CsvSink(out_dir / "comparison.csv", columns)
    for row in rows:
        sink.row(row)
    sink.close()
    return rows

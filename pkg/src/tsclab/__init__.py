"""Desk-scale traffic signal control with a token-level learned policy.

A deterministic single-intersection queue simulator, a tiny
token-emitting policy trained with clipped policy gradients and a KL
penalty toward its frozen initial weights, entropy-gated reward shaping
over repeated sampled responses, and classic fixed-time / max-pressure
baselines, all driven from seeded YAML configs.
"""

from ._kernels import BACKEND, COMPILED
from .baselines import FixedTimeController, MaxPressureController, RandomController
from .experiment import ExperimentConfig, ExperimentRunner, compare, reward_histogram, run_config
from .phases import Vocabulary, extract_phase, verbalize
from .policy import TokenPolicy, ValueHead
from .rewards import RewardConfig
from .sim import DemandProfile, Intersection, Topology, build_topology
from .trainer import PPOTrainer, TrainerConfig, gae, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "COMPILED",
    "DemandProfile",
    "ExperimentConfig",
    "ExperimentRunner",
    "FixedTimeController",
    "Intersection",
    "MaxPressureController",
    "PPOTrainer",
    "RandomController",
    "RewardConfig",
    "TokenPolicy",
    "Topology",
    "TrainerConfig",
    "ValueHead",
    "Vocabulary",
    "build_topology",
    "compare",
    "extract_phase",
    "gae",
    "load_checkpoint",
    "reward_histogram",
    "run_config",
    "save_checkpoint",
    "verbalize",
    "__version__",
]

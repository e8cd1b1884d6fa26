"""Non-learning reference controllers: fixed-time cycling, max pressure,
and a seeded uniform-random control condition.

All three expose ``decide(observation, current_phase, t)`` so the episode
runner can drive them through the same loop as the learned policy.
"""

from __future__ import annotations

from typing import Dict

import numpy as np

from .sim import LaneObservation, Topology


def fixed_time_phase(t: float, t_fixed: float, n_phases: int) -> int:
    """Cycle through phases, t_fixed seconds each."""
    if t_fixed <= 0:
        raise ValueError("t_fixed must be > 0")
    return int(t // t_fixed) % n_phases


def max_pressure_phase(observation: Dict[str, LaneObservation], topo: Topology) -> int:
    """Phase with the largest total stopped queue over its lanes.

    Downstream lanes are outside the model, so pressure reduces to the
    early-queued count. Ties go to the lowest phase index.
    """
    best_phase = 0
    best_pressure = -1.0
    for phase in topo.phases:
        pressure = 0.0
        for lid in phase.allowed_lanes:
            if lid not in observation:
                raise KeyError(f"observation missing lane {lid!r}")
            pressure += observation[lid].early_queued
        if pressure > best_pressure:
            best_pressure = pressure
            best_phase = phase.index
    return best_phase


def random_phase(rng: np.random.Generator, n_phases: int) -> int:
    if n_phases < 1:
        raise ValueError("n_phases must be >= 1")
    return int(rng.integers(0, n_phases))


class FixedTimeController:
    def __init__(self, t_fixed: float = 10.0):
        self.t_fixed = t_fixed

    def decide(self, observation, current_phase, t, topo: Topology) -> int:
        return fixed_time_phase(t, self.t_fixed, topo.n_phases)


class MaxPressureController:
    def decide(self, observation, current_phase, t, topo: Topology) -> int:
        return max_pressure_phase(observation, topo)


class RandomController:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def decide(self, observation, current_phase, t, topo: Topology) -> int:
        return random_phase(self.rng, topo.n_phases)

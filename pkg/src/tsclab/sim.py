"""Deterministic queue-based single-intersection microsimulator.

The model is a point-queue approximation: vehicles travel at free-flow
speed until they hit the stop line or the tail of the standing queue,
where they stop instantly. Departures across the stop line happen at most
once per saturation headway per lane while the lane's phase is green.
Phase changes insert a fixed all-red yellow interval during which no lane
is served.

All dynamics are integer-stepped (dt = 1 s by default) and fully
deterministic given the demand seed, which makes episode outputs
bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

SPEED_STOPPED = 0.1  # m/s; below this a vehicle counts as queued
JAM_SPACING = 7.0  # m between stopped vehicles, gives queues physical extent

# Demand stream ids used to derive independent RNG streams from one seed.
STREAM_DEMAND = 0
STREAM_SHUFFLE = 1
STREAM_CONTROLLER = 2
STREAM_INIT = 3
STREAM_HOLDOUT = 4


class TopologyError(ValueError):
    """Raised when a topology description violates a structural invariant."""


@dataclass(frozen=True)
class Lane:
    lane_id: str
    approach: str
    movement: str  # through | left | right | u-turn
    road_length: float = 300.0
    free_flow_speed: float = 10.0
    saturation_headway: float = 2.0


@dataclass(frozen=True)
class PhaseSpec:
    index: int
    mnemonic: str
    description: str
    allowed_lanes: Tuple[str, ...]


@dataclass(frozen=True)
class Topology:
    name: str
    lanes: Tuple[Lane, ...]
    phases: Tuple[PhaseSpec, ...]
    yellow_duration: float = 5.0

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    @property
    def lane_ids(self) -> Tuple[str, ...]:
        return tuple(lane.lane_id for lane in self.lanes)

    def lane(self, lane_id: str) -> Lane:
        for lane in self.lanes:
            if lane.lane_id == lane_id:
                return lane
        raise KeyError(lane_id)


_MOVEMENTS = ("through", "left", "right", "u-turn")

TOY8_PHASES = (
    ("NTST", "Northern and southern through lanes", ("N_T", "S_T")),
    ("NLSL", "Northern and southern left-turn lanes", ("N_L", "S_L")),
    ("NTNL", "Northern through and left-turn lanes", ("N_T", "N_L")),
    ("STSL", "Southern through and left-turn lanes", ("S_T", "S_L")),
    ("ETWT", "Eastern and western through lanes", ("E_T", "W_T")),
    ("ELWL", "Eastern and western left-turn lanes", ("E_L", "W_L")),
    ("ETEL", "Eastern through and left-turn lanes", ("E_T", "E_L")),
    ("WTWL", "Western through and left-turn lanes", ("W_T", "W_L")),
)

TOY4_PHASES = (
    (
        "NUTRLSUTRL",
        "Northern and southern U-turn, through, right-turn and left-turn lanes",
        ("N_T", "N_R", "S_T", "S_R"),
    ),
    (
        "NUTLSUTL",
        "Northern and southern U-turn, through, and left-turn lanes",
        ("N_T", "S_T"),
    ),
    (
        "EUTRLWUTRL",
        "Eastern and western U-turn, through, right-turn and left-turn lanes",
        ("E_T", "E_R", "W_T", "W_R"),
    ),
    (
        "EUTLWUTL",
        "Eastern and western U-turn, through, and left-turn lanes",
        ("E_T", "W_T"),
    ),
)


def _validate_topology(topo: Topology) -> Topology:
    lane_ids = [lane.lane_id for lane in topo.lanes]
    if len(set(lane_ids)) != len(lane_ids):
        raise TopologyError("duplicate lane ids")
    for lane in topo.lanes:
        if lane.movement not in _MOVEMENTS:
            raise TopologyError(f"lane {lane.lane_id}: unknown movement {lane.movement!r}")
        if lane.road_length <= 0:
            raise TopologyError(f"lane {lane.lane_id}: road_length must be > 0")
        if lane.free_flow_speed <= 0:
            raise TopologyError(f"lane {lane.lane_id}: free_flow_speed must be > 0")
        if lane.saturation_headway <= 0:
            raise TopologyError(f"lane {lane.lane_id}: saturation_headway must be > 0")
    if topo.yellow_duration < 0:
        raise TopologyError("yellow_duration must be >= 0")
    mnemonics = [p.mnemonic for p in topo.phases]
    if len(set(mnemonics)) != len(mnemonics):
        raise TopologyError("phase mnemonics must be unique")
    covered = set()
    for i, phase in enumerate(topo.phases):
        if phase.index != i:
            raise TopologyError(f"phase {phase.mnemonic}: index {phase.index} out of order")
        if not phase.mnemonic:
            raise TopologyError("phase mnemonic must be nonempty")
        if not phase.allowed_lanes:
            raise TopologyError(f"phase {phase.mnemonic}: allowed_lanes is empty")
        for lid in phase.allowed_lanes:
            if lid not in lane_ids:
                raise TopologyError(f"phase {phase.mnemonic}: unknown lane {lid!r}")
            covered.add(lid)
    missing = set(lane_ids) - covered
    if missing:
        raise TopologyError(f"lanes not referenced by any phase: {sorted(missing)}")
    return topo


def build_topology(preset="toy8", **overrides) -> Topology:
    """Build a validated topology from a preset name or an explicit dict.

    ``preset`` may be "toy8" (8 two-movement phases on 4 approaches),
    "toy4" (4 combined-movement phases), or a dict with keys ``lanes``
    (list of dicts with lane_id/approach/movement and optional geometry)
    and ``phases`` (list of dicts with mnemonic/description/allowed_lanes).
    Keyword overrides (road_length, free_flow_speed, saturation_headway,
    yellow_duration) apply uniformly to preset lanes.
    """
    if isinstance(preset, dict):
        lane_defaults = {
            "road_length": 300.0,
            "free_flow_speed": 10.0,
            "saturation_headway": 2.0,
        }
        lanes = []
        for entry in preset.get("lanes", []):
            kw = dict(lane_defaults)
            kw.update({k: v for k, v in entry.items() if k in lane_defaults})
            lanes.append(
                Lane(
                    lane_id=str(entry["lane_id"]),
                    approach=str(entry.get("approach", "?")),
                    movement=str(entry.get("movement", "through")),
                    **kw,
                )
            )
        phases = []
        for i, entry in enumerate(preset.get("phases", [])):
            phases.append(
                PhaseSpec(
                    index=i,
                    mnemonic=str(entry["mnemonic"]),
                    description=str(entry.get("description", entry["mnemonic"])),
                    allowed_lanes=tuple(entry.get("allowed_lanes", ())),
                )
            )
        topo = Topology(
            name=str(preset.get("name", "custom")),
            lanes=tuple(lanes),
            phases=tuple(phases),
            yellow_duration=float(preset.get("yellow_duration", 5.0)),
        )
        return _validate_topology(topo)

    if preset == "toy8":
        movement = {"T": "through", "L": "left"}
        lane_ids = [f"{a}_{m}" for a in "NSEW" for m in ("T", "L")]
        table = TOY8_PHASES
    elif preset == "toy4":
        movement = {"T": "through", "R": "right"}
        lane_ids = [f"{a}_{m}" for a in "NSEW" for m in ("T", "R")]
        table = TOY4_PHASES
    else:
        raise TopologyError(f"unknown topology preset {preset!r}")

    lane_kw = {
        k: float(overrides[k])
        for k in ("road_length", "free_flow_speed", "saturation_headway")
        if k in overrides
    }
    lanes = tuple(
        Lane(lane_id=lid, approach=lid.split("_")[0], movement=movement[lid.split("_")[1]], **lane_kw)
        for lid in lane_ids
    )
    phases = tuple(
        PhaseSpec(index=i, mnemonic=m, description=d, allowed_lanes=al)
        for i, (m, d, al) in enumerate(table)
    )
    topo = Topology(
        name=preset,
        lanes=lanes,
        phases=phases,
        yellow_duration=float(overrides.get("yellow_duration", 5.0)),
    )
    return _validate_topology(topo)


@dataclass
class Vehicle:
    vid: int
    lane: str
    position: float  # meters from the stop line, decreasing toward 0
    speed: float
    spawn_time: float
    completion_time: Optional[float] = None


@dataclass
class DemandProfile:
    """Per-lane arrival schedule.

    Either Poisson rates (``rates`` maps lane id -> vehicles/s, optionally
    reshaped by ``surges``: a list of (start, end, {lane: rate}) windows
    that override the base rate inside [start, end)), or an explicit
    ``spawns`` list of (time, lane) pairs. Poisson draws consume the
    demand RNG stream in a fixed lane order, so runs are seed-exact.
    """

    rates: Dict[str, float] = field(default_factory=dict)
    surges: List[Tuple[float, float, Dict[str, float]]] = field(default_factory=list)
    spawns: List[Tuple[float, str]] = field(default_factory=list)
    base_rate: Optional[float] = None

    def rate_at(self, lane_id: str, t: float) -> float:
        rate = self.rates.get(lane_id, 0.0)
        for start, end, lane_rates in self.surges:
            if start <= t < end and lane_id in lane_rates:
                rate = lane_rates[lane_id]
        return rate

    @staticmethod
    def from_dict(spec: dict) -> "DemandProfile":
        kind = spec.get("kind", "poisson")
        if kind == "schedule":
            spawns = [(float(s["time"]), str(s["lane"])) for s in spec.get("spawns", [])]
            spawns.sort(key=lambda p: p[0])
            return DemandProfile(spawns=spawns)
        if kind != "poisson":
            raise ValueError(f"unknown demand kind {kind!r}")
        rates = {str(k): float(v) for k, v in spec.get("rates", {}).items()}
        base = spec.get("base_rate")
        surges = []
        for s in spec.get("surges", []):
            lane_rates = {str(k): float(v) for k, v in s.get("rates", {}).items()}
            if "rate" in s:
                for lid in s.get("lanes", []):
                    lane_rates[str(lid)] = float(s["rate"])
            surges.append((float(s["start"]), float(s["end"]), lane_rates))
        return DemandProfile(
            rates=rates, surges=surges, base_rate=None if base is None else float(base)
        )

    def resolve_lanes(self, topo: Topology) -> None:
        """Validate lane references and fill in the base rate."""
        known = set(topo.lane_ids)
        referenced = set(self.rates)
        referenced.update(lid for _, lid in self.spawns)
        for _, _, lane_rates in self.surges:
            referenced.update(lane_rates)
        unknown = referenced - known
        if unknown:
            raise ValueError(f"demand references unknown lanes: {sorted(unknown)}")
        if self.base_rate is not None:
            for lid in topo.lane_ids:
                self.rates.setdefault(lid, self.base_rate)


def demand_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, STREAM_DEMAND, episode])))


class Intersection:
    """Mutable simulation state stepped at 1-second resolution."""

    def __init__(self, topo: Topology, demand: DemandProfile, rng: np.random.Generator):
        demand.resolve_lanes(topo)
        self.topo = topo
        self.demand = demand
        self.rng = rng
        self.time = 0.0
        self.active_phase = 0
        self.pending_phase: Optional[int] = None
        self.yellow_remaining = 0.0
        self.vehicles: Dict[str, List[Vehicle]] = {lid: [] for lid in topo.lane_ids}
        self.completed: List[Vehicle] = []
        self.injected_count = 0
        self._next_vid = 0
        self._last_departure: Dict[str, float] = {lid: -math.inf for lid in topo.lane_ids}
        self._spawn_cursor = 0
        self._queue_samples: List[float] = []

    # -- control ---------------------------------------------------------

    def set_phase(self, phase_idx: int) -> None:
        if not 0 <= phase_idx < self.topo.n_phases:
            raise ValueError(f"phase index {phase_idx} out of range [0, {self.topo.n_phases})")
        if phase_idx == self.active_phase:
            return
        self.pending_phase = phase_idx
        self.yellow_remaining = self.topo.yellow_duration

    # -- dynamics --------------------------------------------------------

    def step(self, dt: float = 1.0) -> None:
        if dt <= 0:
            raise ValueError("dt must be > 0")
        t_next = self.time + dt

        if self.yellow_remaining > 0:
            served_lanes = frozenset()
            self.yellow_remaining -= dt
            if self.yellow_remaining <= 1e-9:
                self.yellow_remaining = 0.0
                if self.pending_phase is not None:
                    self.active_phase = self.pending_phase
                    self.pending_phase = None
        else:
            served_lanes = frozenset(self.topo.phases[self.active_phase].allowed_lanes)

        for lane in self.topo.lanes:
            self._advance_lane(lane, lane.lane_id in served_lanes, dt, t_next)

        self._spawn(dt, t_next)
        self.time = t_next
        self._queue_samples.append(self.queue_length())

    def _advance_lane(self, lane: Lane, served: bool, dt: float, t_next: float) -> None:
        queue = self.vehicles[lane.lane_id]
        if not queue:
            return
        queue.sort(key=lambda v: v.position)
        survivors: List[Vehicle] = []
        front_limit = 0.0  # closest position the next vehicle may occupy
        for veh in queue:
            candidate = veh.position - lane.free_flow_speed * dt
            if not survivors and candidate <= 0.0 and served:
                if t_next - self._last_departure[lane.lane_id] >= lane.saturation_headway:
                    veh.completion_time = t_next
                    veh.position = 0.0
                    veh.speed = lane.free_flow_speed
                    self._last_departure[lane.lane_id] = t_next
                    self.completed.append(veh)
                    continue
            new_pos = max(candidate, front_limit)
            new_pos = min(new_pos, veh.position)  # never move backwards
            veh.speed = (veh.position - new_pos) / dt
            veh.position = new_pos
            survivors.append(veh)
            front_limit = new_pos + JAM_SPACING
        queue[:] = survivors

    def _spawn(self, dt: float, t_next: float) -> None:
        # Explicit schedule entries falling in (t, t+dt].
        spawns = self.demand.spawns
        while self._spawn_cursor < len(spawns):
            when, lane_id = spawns[self._spawn_cursor]
            if when > t_next:
                break
            if when > self.time or (self.time == 0.0 and when == 0.0):
                self._add_vehicle(lane_id, when)
            self._spawn_cursor += 1
        # Poisson arrivals, one draw per lane per step in lane order.
        if self.demand.rates:
            for lane in self.topo.lanes:
                rate = self.demand.rate_at(lane.lane_id, self.time)
                if rate <= 0:
                    continue
                for _ in range(int(self.rng.poisson(rate * dt))):
                    self._add_vehicle(lane.lane_id, t_next)

    def _add_vehicle(self, lane_id: str, when: float) -> None:
        lane = self.topo.lane(lane_id)
        veh = Vehicle(
            vid=self._next_vid,
            lane=lane_id,
            position=lane.road_length,
            speed=lane.free_flow_speed,
            spawn_time=when,
        )
        self._next_vid += 1
        self.injected_count += 1
        self.vehicles[lane_id].append(veh)

    # -- observation -----------------------------------------------------

    def observe(self) -> Dict[str, "LaneObservation"]:
        out = {}
        for lane in self.topo.lanes:
            early = seg1 = seg2 = seg3 = 0
            b1 = 0.10 * lane.road_length
            b2 = 0.33 * lane.road_length
            for veh in self.vehicles[lane.lane_id]:
                if veh.speed < SPEED_STOPPED:
                    early += 1
                elif veh.position <= b1:
                    seg1 += 1
                elif veh.position <= b2:
                    seg2 += 1
                else:
                    seg3 += 1
            out[lane.lane_id] = LaneObservation(early, seg1, seg2, seg3)
        return out

    def queue_length(self) -> float:
        stopped = sum(
            1
            for lane_vehicles in self.vehicles.values()
            for veh in lane_vehicles
            if veh.speed < SPEED_STOPPED
        )
        return stopped / len(self.topo.lanes)

    def in_network(self) -> int:
        return sum(len(v) for v in self.vehicles.values())

    def conservation_ok(self) -> bool:
        return self.injected_count == self.in_network() + len(self.completed)

    # -- metrics ---------------------------------------------------------

    def finalize_metrics(self) -> "Metrics":
        if not self.completed:
            return Metrics(
                travel_time=math.nan,
                queue_length=float(np.mean(self._queue_samples)) if self._queue_samples else 0.0,
                delay_seconds=math.nan,
                delay_ratio=math.nan,
                throughput=0,
            )
        travel = []
        delays = []
        ratios = []
        for veh in self.completed:
            lane = self.topo.lane(veh.lane)
            actual = veh.completion_time - veh.spawn_time
            free = lane.road_length / lane.free_flow_speed
            travel.append(actual)
            delays.append(actual - free)
            ratios.append((actual - free) / actual if actual > 0 else 0.0)
        return Metrics(
            travel_time=float(np.mean(travel)),
            queue_length=float(np.mean(self._queue_samples)) if self._queue_samples else 0.0,
            delay_seconds=float(np.mean(delays)),
            delay_ratio=float(np.mean(ratios)),
            throughput=len(self.completed),
        )

    # -- serialization (resumable checkpoints) ---------------------------

    def state_dict(self) -> dict:
        def pack(veh: Vehicle) -> list:
            return [veh.vid, veh.lane, veh.position, veh.speed, veh.spawn_time, veh.completion_time]

        return {
            "time": self.time,
            "active_phase": self.active_phase,
            "pending_phase": self.pending_phase,
            "yellow_remaining": self.yellow_remaining,
            "vehicles": {lid: [pack(v) for v in vs] for lid, vs in self.vehicles.items()},
            "completed": [pack(v) for v in self.completed],
            "injected_count": self.injected_count,
            "next_vid": self._next_vid,
            "last_departure": {
                lid: (None if math.isinf(t) else t) for lid, t in self._last_departure.items()
            },
            "spawn_cursor": self._spawn_cursor,
            "queue_samples": list(self._queue_samples),
            "rng_state": self.rng.bit_generator.state,
        }

    def load_state_dict(self, state: dict) -> None:
        def unpack(row: list) -> Vehicle:
            return Vehicle(
                vid=int(row[0]),
                lane=row[1],
                position=float(row[2]),
                speed=float(row[3]),
                spawn_time=float(row[4]),
                completion_time=None if row[5] is None else float(row[5]),
            )

        self.time = float(state["time"])
        self.active_phase = int(state["active_phase"])
        self.pending_phase = None if state["pending_phase"] is None else int(state["pending_phase"])
        self.yellow_remaining = float(state["yellow_remaining"])
        self.vehicles = {lid: [unpack(r) for r in rows] for lid, rows in state["vehicles"].items()}
        self.completed = [unpack(r) for r in state["completed"]]
        self.injected_count = int(state["injected_count"])
        self._next_vid = int(state["next_vid"])
        self._last_departure = {
            lid: (-math.inf if t is None else float(t)) for lid, t in state["last_departure"].items()
        }
        self._spawn_cursor = int(state["spawn_cursor"])
        self._queue_samples = [float(q) for q in state["queue_samples"]]
        self.rng.bit_generator.state = state["rng_state"]


@dataclass(frozen=True)
class LaneObservation:
    early_queued: int
    seg1: int
    seg2: int
    seg3: int

    @property
    def total(self) -> int:
        return self.early_queued + self.seg1 + self.seg2 + self.seg3


@dataclass(frozen=True)
class Metrics:
    travel_time: float
    queue_length: float
    delay_seconds: float
    delay_ratio: float
    throughput: int

    def as_dict(self) -> dict:
        return {
            "travel_time": self.travel_time,
            "queue_length": self.queue_length,
            "delay_seconds": self.delay_seconds,
            "delay_ratio": self.delay_ratio,
            "throughput": self.throughput,
        }

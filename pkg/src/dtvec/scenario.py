"""World state: vehicles, tasks, digital twins, mobility."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import channel
from .config import SimConfig


@dataclass
class VehicleState:
    id: int
    position_l: float
    speed_v: float
    small_scale_s: complex
    shadow_db: float


@dataclass(frozen=True)
class Task:
    size_bytes: float
    max_delay: float
    type_index: int


@dataclass
class TaskMatrix:
    """Sizes and deadlines of the N x K tasks generated in one slot."""

    sizes: np.ndarray  # bytes, (N, K)
    max_delay: np.ndarray  # s, (N, K)

    def __len__(self) -> int:
        return self.sizes.shape[0]

    def task(self, n: int, k: int) -> Task:
        return Task(float(self.sizes[n, k]), float(self.max_delay[n, k]), k)

    def row(self, n: int) -> list[Task]:
        return [self.task(n, k) for k in range(self.sizes.shape[1])]


@dataclass
class TwinModel:
    vehicle_info: VehicleState
    task_vector: list[Task]
    est_bias: np.ndarray  # cycles/s per task type


@dataclass
class ScenarioState:
    config: SimConfig
    vehicles: list[VehicleState]
    queue_backlog: np.ndarray
    rng_tasks: np.random.Generator
    rng_channel: np.random.Generator
    slot: int = 0
    twins: list[TwinModel] = field(default_factory=list)

    @property
    def positions(self) -> np.ndarray:
        return np.array([v.position_l for v in self.vehicles])

    @property
    def speeds(self) -> np.ndarray:
        return np.array([v.speed_v for v in self.vehicles])

    def copy(self) -> "ScenarioState":
        return copy.deepcopy(self)


def init_scenario(config: SimConfig) -> ScenarioState:
    config.validate()
    seq = np.random.SeedSequence(config.seed)
    init_seq, task_seq, chan_seq = seq.spawn(3)
    rng = np.random.default_rng(init_seq)
    n = config.n_vehicles
    positions = rng.uniform(0.0, config.road_length, size=n)
    speeds = rng.uniform(config.speed_range[0], config.speed_range[1], size=n)
    fading = channel.complex_gaussian(rng, 1.0, size=n)
    shadows = channel.sample_shadowing(rng, config.shadow_sigma_db, size=n)
    vehicles = [
        VehicleState(i, float(positions[i]), float(speeds[i]), complex(fading[i]), float(shadows[i]))
        for i in range(n)
    ]
    return ScenarioState(
        config=config,
        vehicles=vehicles,
        queue_backlog=np.zeros(config.n_task_types),
        rng_tasks=np.random.default_rng(task_seq),
        rng_channel=np.random.default_rng(chan_seq),
    )


def generate_tasks(state: ScenarioState, t: int) -> TaskMatrix:
    if t < 0:
        raise ValueError("slot index must be nonnegative")
    cfg = state.config
    lo, hi = cfg.task_size_range
    shape = (cfg.n_vehicles, cfg.n_task_types)
    sizes = state.rng_tasks.uniform(lo, hi, size=shape) if hi > lo else np.full(shape, lo)
    deadlines = np.broadcast_to(np.asarray(cfg.max_delay_Tmax), shape).copy()
    return TaskMatrix(sizes, deadlines)


def advance_vehicles(state: ScenarioState, dt: float) -> ScenarioState:
    """Move every vehicle by v*dt, wrapping around the road."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    length = state.config.road_length
    for v in state.vehicles:
        v.position_l = (v.position_l + v.speed_v * dt) % length
    return state


def bias_vector(config: SimConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-type estimation bias (cycles/s) the twin applies to a vehicle."""
    bias = np.full(config.n_task_types, float(config.est_bias_df))
    if config.bias_jitter > 0 and rng is not None:
        bias += rng.uniform(-config.bias_jitter, config.bias_jitter, size=bias.shape)
    return bias


def sync_twin(vehicle: VehicleState, tasks: list[Task], bias_config) -> TwinModel:
    """Mirror a vehicle and its slot tasks into the cloud twin (zero-time)."""
    bias = np.broadcast_to(np.asarray(bias_config, dtype=float), (len(tasks),)).copy()
    return TwinModel(copy.copy(vehicle), list(tasks), bias)


def sync_all(state: ScenarioState, tasks: TaskMatrix, bias_config) -> list[TwinModel]:
    state.twins = [sync_twin(v, tasks.row(i), bias_config) for i, v in enumerate(state.vehicles)]
    return state.twins


def twin_bias_matrix(twins: list[TwinModel]) -> np.ndarray:
    return np.stack([tw.est_bias for tw in twins])

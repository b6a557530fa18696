"""One simulation run: the per-slot pipeline shared by the harness and the RL env.

A slot is split in two halves so a policy can act in between:
``begin_slot`` generates tasks, syncs twins and samples the channel;
``finish_slot`` projects the action, updates the queues and scores the slot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import channel
from .config import SimConfig
from .decision import (ActionMatrix, ObjectiveValue, check_constraints, p2_objective,
                       project_feasible)
from .metrics import SlotMetrics, compute_slot_metrics
from .queueing import BacklogHistory, QueueState, arrivals, service, step_queue
from .scenario import (ScenarioState, TaskMatrix, TwinModel, advance_vehicles, bias_vector,
                       generate_tasks, init_scenario, sync_all, twin_bias_matrix)

# log10 gain normalisation; typical gains span 1e-13 .. 1e-6
GAIN_LOG_CENTER = -10.5
GAIN_LOG_SCALE = 1.5


@dataclass
class SlotContext:
    t: int
    tasks: TaskMatrix
    twins: list[TwinModel]
    bias: np.ndarray  # (N, K) cycles/s
    gains: np.ndarray  # (N,)
    rates: np.ndarray  # (N,) bits/s
    obs: np.ndarray  # (N, K + 3) normalised observation rows
    queue: np.ndarray  # backlog at slot start


@dataclass
class SlotRecord:
    t: int
    actions: ActionMatrix
    metrics: SlotMetrics
    objective: ObjectiveValue
    Z: np.ndarray
    phi: np.ndarray
    q_before: np.ndarray
    q_after: np.ndarray
    sizes: np.ndarray | None = None
    fell_back: bool = False


def observation_matrix(config: SimConfig, sizes, positions, speeds, gains) -> np.ndarray:
    size_norm = np.asarray(sizes, float) / config.max_task_size
    pos = np.asarray(positions, float) / config.road_length
    vmax = config.speed_range[1] if config.speed_range[1] > 0 else 1.0
    spd = np.asarray(speeds, float) / vmax
    g = (np.log10(np.asarray(gains, float) + 1e-300) - GAIN_LOG_CENTER) / GAIN_LOG_SCALE
    return np.column_stack([size_norm, pos, spd, g])


class Simulation:
    def __init__(self, config: SimConfig):
        self.config = config
        self.state: ScenarioState = init_scenario(config)
        self.queue = QueueState(np.zeros(config.n_task_types))
        self.history = BacklogHistory(config.n_task_types)
        self._kappa = np.array([
            channel.doppler_correlation(v.speed_v, config.carrier_fc, config.slot_dt)
            for v in self.state.vehicles])
        self._bias_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))

    @property
    def t(self) -> int:
        return self.state.slot

    def _sample_channel(self):
        cfg = self.config
        vs = self.state.vehicles
        s_prev = np.array([v.small_scale_s for v in vs])
        s_new = channel.step_small_scale(s_prev, self._kappa, self.state.rng_channel)
        s_new = np.atleast_1d(s_new)
        for v, s in zip(vs, s_new):
            v.small_scale_s = complex(s)
        dist = channel.distance_to_bs(self.state.positions, cfg.bs_position, cfg.bs_elevation)
        h = channel.large_scale_gain(channel.path_loss_db(dist), [v.shadow_db for v in vs])
        g = np.atleast_1d(channel.channel_gain(s_new, h))
        r = np.atleast_1d(channel.transmission_rate(cfg.bandwidth_w, cfg.tx_power_p, g, cfg.noise_watts))
        return g, r

    def begin_slot(self) -> SlotContext:
        cfg = self.config
        t = self.state.slot
        tasks = generate_tasks(self.state, t)
        twins = sync_all(self.state, tasks, bias_vector(cfg, self._bias_rng))
        gains, rates = self._sample_channel()
        obs = observation_matrix(cfg, tasks.sizes, self.state.positions, self.state.speeds, gains)
        return SlotContext(t, tasks, twins, twin_bias_matrix(twins), gains, rates, obs,
                           self.queue.backlog_q.copy())

    def project(self, ctx: SlotContext, raw: ActionMatrix) -> ActionMatrix:
        return project_feasible(raw, ctx.bias, self.config.server_cpu_fE, self.config.alpha_min)

    def finish_slot(self, ctx: SlotContext, raw: ActionMatrix) -> SlotRecord:
        cfg = self.config
        actions = self.project(ctx, raw)
        sizes = ctx.tasks.sizes
        Z = arrivals(actions.offload_omega, sizes)
        phi = service(actions.alloc_alpha, cfg.server_cpu_fE, cfg.cycles_per_byte_ck, cfg.slot_dt)
        q_before = self.queue.backlog_q.copy()
        q_after = step_queue(q_before, Z, phi)
        self.history.append(q_before, Z, phi)
        self.queue = QueueState(q_after, Z, phi)
        m = compute_slot_metrics(cfg, actions.offload_omega, actions.alloc_alpha, sizes, ctx.rates, ctx.bias)
        viol = check_constraints(actions, m, ctx.bias, cfg.server_cpu_fE, cfg.max_delay_Tmax)
        obj = p2_objective(q_before, actions, sizes, m, cfg.beta, cfg.server_cpu_fE,
                           cfg.cycles_per_byte_ck, viol)
        advance_vehicles(self.state, cfg.slot_dt)
        self.state.slot += 1
        return SlotRecord(ctx.t, actions, m, obj, Z, phi, q_before, q_after, sizes)

"""Hand-written policies: comparison baselines and twin-aware experts.

Every policy maps a ``SlotContext`` to a raw ``ActionMatrix``; the
simulation projects it onto the feasible set afterwards.
"""
from __future__ import annotations

import numpy as np

from ..config import SimConfig
from ..decision import ActionMatrix, p2_objective, project_feasible
from ..metrics import compute_slot_metrics
from .codebook import Codebook


class Policy:
    name = "policy"

    def reset(self, config: SimConfig) -> None:
        """Called once before an episode starts."""

    def decide(self, ctx, config: SimConfig) -> ActionMatrix:
        raise NotImplementedError

    def after_slot(self, ctx, record) -> None:
        """Hook for online learners; receives the finished slot."""


def feasible_budget(config: SimConfig, bias) -> float:
    """Largest sum of alpha allowed by the server budget, as a fraction of f_E."""
    return (config.server_cpu_fE - float(np.sum(bias))) / config.server_cpu_fE


def equal_split(config: SimConfig, bias) -> np.ndarray:
    N, K = config.n_vehicles, config.n_task_types
    share = feasible_budget(config, bias) / (N * K)
    return np.full((N, K), max(share, config.alpha_min))


class UniformPolicy(Policy):
    """Half of every task offloaded; equal share of the feasible budget.

    ``alpha`` overrides the per-pair share (e.g. the floor, to model a
    deliberately poor allocation).
    """

    name = "uniform"

    def __init__(self, omega: float = 0.5, alpha: float | None = None):
        self.omega = omega
        self.alpha = alpha

    def decide(self, ctx, config):
        shape = ctx.tasks.sizes.shape
        alpha = equal_split(config, ctx.bias) if self.alpha is None else np.full(shape, self.alpha)
        return ActionMatrix(np.full(shape, self.omega), alpha)


class GreedyLocalPolicy(Policy):
    """Compute locally unless the local delay alone would miss the deadline."""

    name = "greedy"

    def __init__(self, alpha: float | None = None):
        self.alpha = alpha

    def decide(self, ctx, config):
        ck = np.asarray(config.cycles_per_byte_ck)
        t_local = ctx.tasks.sizes * ck / config.vehicle_cpu_fv
        omega = (t_local > ctx.tasks.max_delay).astype(float)
        shape = omega.shape
        alpha = equal_split(config, ctx.bias) if self.alpha is None else np.full(shape, self.alpha)
        return ActionMatrix(omega, alpha)


class RandomPolicy(Policy):
    """Each vehicle draws a codebook entry uniformly at random."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.last_indices: list[int] = []

    def reset(self, config):
        self.rng = np.random.default_rng(np.random.SeedSequence([self.seed, config.seed]))

    def decide(self, ctx, config):
        book = Codebook(config.n_task_types)
        idx = self.rng.integers(0, book.size, size=config.n_vehicles)
        self.last_indices = [int(i) for i in idx]
        rows = [book.decode(i) for i in idx]
        return ActionMatrix(np.stack([r[0] for r in rows]), np.stack([r[1] for r in rows]))


class BalancedPolicy(Policy):
    """Twin-aware split that equalises the local and edge branch times.

    Each pair gets ``headroom / (N K)`` of the server; the twin's biased
    frequency estimate alpha f_E + df then sets the offload ratio so that
    (1 - w) a = tx + w b, where a and b are the local and edge processing
    times of the whole task.
    """

    name = "balanced"

    def __init__(self, headroom: float = 0.9):
        self.headroom = headroom

    def decide(self, ctx, config):
        N, K = ctx.tasks.sizes.shape
        fE = config.server_cpu_fE
        alpha = np.full((N, K), max(self.headroom / (N * K), config.alpha_min))
        f_eff = np.maximum(alpha * fE + ctx.bias, 1.0)
        work = ctx.tasks.sizes * np.asarray(config.cycles_per_byte_ck)
        a = work / config.vehicle_cpu_fv
        b = work / f_eff
        tx = 8.0 * ctx.tasks.sizes / ctx.rates[:, None]
        if config.tx_scaled_by_omega:
            omega = a / (a + b + tx)
        else:
            omega = (a - tx) / (a + b)
        return ActionMatrix(np.clip(omega, 0.0, 1.0), alpha)


class DriftPlusPenaltyPolicy(Policy):
    """Per-slot minimiser of the drift-plus-penalty objective over a candidate family.

    Candidates combine a common offload level with an equal or
    backlog-weighted split of the full feasible budget, plus the balanced
    expert's action.
    """

    name = "dpp"

    def __init__(self, levels=(0.0, 0.25, 0.5, 0.75, 1.0)):
        self.levels = tuple(levels)
        self._balanced = BalancedPolicy()

    def candidates(self, ctx, config):
        N, K = ctx.tasks.sizes.shape
        budget = feasible_budget(config, ctx.bias) * (1 - 1e-9)
        equal = np.full((N, K), budget / (N * K))
        weights = (ctx.queue + 1.0) * np.asarray(config.cycles_per_byte_ck)
        weighted = np.broadcast_to(weights / weights.sum() * budget / N, (N, K)).copy()
        for w in self.levels:
            for alpha in (equal, weighted):
                yield ActionMatrix(np.full((N, K), w), alpha)
        yield self._balanced.decide(ctx, config)

    def decide(self, ctx, config):
        best, best_val = None, np.inf
        for cand in self.candidates(ctx, config):
            act = project_feasible(cand, ctx.bias, config.server_cpu_fE, config.alpha_min)
            m = compute_slot_metrics(config, act.offload_omega, act.alloc_alpha,
                                     ctx.tasks.sizes, ctx.rates, ctx.bias)
            val = p2_objective(ctx.queue, act, ctx.tasks.sizes, m, config.beta,
                               config.server_cpu_fE, config.cycles_per_byte_ck).p2
            if val < best_val:
                best, best_val = act, val
        return best


class FixedPolicy(Policy):
    """Replays one constant action every slot."""

    name = "fixed"

    def __init__(self, omega, alpha):
        self.omega = np.asarray(omega, float)
        self.alpha = np.asarray(alpha, float)

    def decide(self, ctx, config):
        shape = ctx.tasks.sizes.shape
        return ActionMatrix(np.broadcast_to(self.omega, shape).copy(),
                            np.broadcast_to(self.alpha, shape).copy())

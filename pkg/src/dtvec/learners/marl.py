"""Multi-agent actor-critic over a discrete action codebook.

Decentralised softmax actors and per-agent critics. With
``centralized=True`` every critic sees the joint observation and joint
action (MARL); otherwise each critic sees only its own agent (SARL).
The actor follows the critic through a score-function estimate of the
gradient of E_pi[Q].
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..config import SimConfig
from ..decision import ActionMatrix, reward
from ..sim import Simulation
from .codebook import Codebook
from .nets import MLP, SGD, Adam, NumericError, log_softmax, soft_update, softmax

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, message, diagnostics=None, checkpoint=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.checkpoint = checkpoint


@dataclass
class LearnerHyper:
    hidden: tuple = (64, 64, 64)
    actor_activations: tuple = ("relu", "relu", "tanh")
    critic_activations: tuple = ("relu", "relu", "tanh")
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    optimizer: str = "adam"
    gamma: float = 0.95
    tau: float = 0.01
    batch_size: int = 64
    capacity: int = 100_000
    baseline_samples: int = 8
    exact_below: int = 32
    entropy_coef: float = 1e-3
    train_every: int = 8
    eps_start: float = 1.0
    eps_end: float = 0.05
    seed: int = 0


# ---------------------------------------------------------------------------
# losses with explicit gradients (also used by the finite-difference tests)

def critic_loss_and_grads(critic: MLP, X: np.ndarray, y: np.ndarray):
    """Mean squared TD error and its parameter gradients."""
    q, stash = critic.forward(X, cache=True)
    err = q[:, 0] - y
    loss = float(np.mean(err ** 2))
    grad_out = (2.0 / len(y)) * err[:, None]
    grads, _ = critic.backward(stash, grad_out)
    return loss, grads


def actor_loss_and_grads(actor: MLP, obs: np.ndarray, coef: np.ndarray, entropy_coef: float = 0.0,
                         forward=None):
    """loss = mean_b [ -sum_a coef[b,a] log pi(a|s_b) - c H(pi(.|s_b)) ].

    ``coef`` is treated as a constant (advantage-weighted action mass).
    ``forward`` may pass a cached ``actor.forward(obs, cache=True)`` result.
    """
    z, stash = forward if forward is not None else actor.forward(obs, cache=True)
    logp = log_softmax(z)
    p = np.exp(logp)
    ent = -(p * logp).sum(axis=1)
    B = len(obs)
    loss = float(np.mean(-(coef * logp).sum(axis=1) - entropy_coef * ent))
    g = -(coef - p * coef.sum(axis=1, keepdims=True))
    g += entropy_coef * p * (logp + ent[:, None])
    grads, _ = actor.backward(stash, g / B)
    return loss, grads


# ---------------------------------------------------------------------------

class ReplayBuffer:
    def __init__(self, capacity: int, n_agents: int, obs_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, n_agents, obs_dim))
        self.next_obs = np.zeros_like(self.obs)
        self.actions = np.zeros((self.capacity, n_agents), dtype=np.int64)
        self.rewards = np.zeros((self.capacity, n_agents))
        self.done = np.zeros(self.capacity)
        self.size = 0
        self.pos = 0

    def add(self, obs, actions, rewards, next_obs, done=False) -> None:
        i = self.pos
        self.obs[i] = obs
        self.actions[i] = actions
        self.rewards[i] = rewards
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch_size: int):
        idx = rng.integers(0, self.size, size=batch_size)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.done[idx]


class MultiAgentLearner:
    def __init__(self, n_agents: int, obs_dim: int, action_features: np.ndarray,
                 centralized: bool = True, hyper: LearnerHyper | None = None):
        self.hyper = hyper or LearnerHyper()
        h = self.hyper
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.features = np.asarray(action_features, dtype=float)
        self.n_actions, self.feat_dim = self.features.shape
        self.centralized = centralized
        self.rng = np.random.default_rng(h.seed)
        init_rng = np.random.default_rng(np.random.SeedSequence([h.seed, 1]))
        self.actors = [MLP([obs_dim, *h.hidden, self.n_actions], h.actor_activations, init_rng)
                       for _ in range(n_agents)]
        self.critics = [MLP([self.critic_input_dim, *h.hidden, 1], h.critic_activations, init_rng)
                        for _ in range(n_agents)]
        self.target_actors = [a.copy() for a in self.actors]
        self.target_critics = [c.copy() for c in self.critics]
        opt = Adam if h.optimizer == "adam" else SGD
        self.actor_opts = [opt(a.params, lr=h.lr_actor) for a in self.actors]
        self.critic_opts = [opt(c.params, lr=h.lr_critic) for c in self.critics]
        self.buffer = ReplayBuffer(h.capacity, n_agents, obs_dim)
        self.updates = 0

    @property
    def critic_input_dim(self) -> int:
        if self.centralized:
            return self.n_agents * (self.obs_dim + self.feat_dim)
        return self.obs_dim + self.feat_dim

    def critic_input(self, i: int, S: np.ndarray, A: np.ndarray) -> np.ndarray:
        """S: (B, N, obs_dim), A: (B, N) action indices."""
        if self.centralized:
            B = len(S)
            return np.hstack([S.reshape(B, -1), self.features[A].reshape(B, -1)])
        return np.hstack([S[:, i], self.features[A[:, i]]])

    # acting -------------------------------------------------------------
    def probs(self, i: int, obs: np.ndarray) -> np.ndarray:
        return softmax(self.actors[i].forward(np.atleast_2d(obs)))

    def act(self, i: int, obs: np.ndarray, eps: float = 0.0, greedy: bool = False) -> int:
        if eps > 0 and self.rng.random() < eps:
            return int(self.rng.integers(self.n_actions))
        p = self.probs(i, obs)[0]
        if greedy:
            return int(np.argmax(p))
        return int(self.rng.choice(self.n_actions, p=p))

    def act_all(self, obs: np.ndarray, eps: float = 0.0, greedy: bool = False) -> np.ndarray:
        return np.array([self.act(i, obs[i], eps, greedy) for i in range(self.n_agents)])

    # learning -----------------------------------------------------------
    def _advantage_coef(self, i, S, A, p):
        B = len(S)
        h = self.hyper
        if self.n_actions <= h.exact_below:
            # exact expectation over the whole codebook
            q = np.empty((B, self.n_actions))
            for a in range(self.n_actions):
                A2 = A.copy()
                A2[:, i] = a
                q[:, a] = self.critics[i].forward(self.critic_input(i, S, A2))[:, 0]
            v = (p * q).sum(axis=1, keepdims=True)
            return p * (q - v)
        M = max(2, h.baseline_samples)
        # row-offset trick: one searchsorted call samples every row
        offsets = np.arange(B, dtype=float)[:, None]
        cum = (p.cumsum(axis=1) + offsets).ravel()
        u = self.rng.random((B, M)) + offsets
        samples = np.searchsorted(cum, u.ravel()).reshape(B, M) - np.arange(B)[:, None] * self.n_actions
        samples = np.clip(samples, 0, self.n_actions - 1)
        S_rep = np.repeat(S, M, axis=0)
        A_rep = np.repeat(A, M, axis=0)
        A_rep[:, i] = samples.ravel()
        q = self.critics[i].forward(self.critic_input(i, S_rep, A_rep))[:, 0].reshape(B, M)
        loo = (q.sum(axis=1, keepdims=True) - q) / (M - 1)
        adv = (q - loo) / M
        coef = np.zeros((B, self.n_actions))
        np.add.at(coef, (np.repeat(np.arange(B), M), samples.ravel()), adv.ravel())
        return coef

    def train_step(self, batch=None) -> dict:
        h = self.hyper
        if batch is None:
            if self.buffer.size == 0:
                raise ValueError("empty replay buffer")
            batch = self.buffer.sample(self.rng, h.batch_size)
        S, A, R, S2, D = batch
        if len(S) == 0:
            raise ValueError("empty batch")
        A2 = np.stack([np.argmax(self.target_actors[j].forward(S2[:, j]), axis=1)
                       for j in range(self.n_agents)], axis=1)
        losses = {"critic": [], "actor": []}
        for i in range(self.n_agents):
            q_next = self.target_critics[i].forward(self.critic_input(i, S2, A2))[:, 0]
            y = R[:, i] + h.gamma * (1.0 - D) * q_next
            c_loss, c_grads = critic_loss_and_grads(self.critics[i], self.critic_input(i, S, A), y)
            self.critic_opts[i].step(c_grads)
            fwd = self.actors[i].forward(S[:, i], cache=True)
            p = softmax(fwd[0])
            coef = self._advantage_coef(i, S, A, p)
            a_loss, a_grads = actor_loss_and_grads(self.actors[i], S[:, i], coef, h.entropy_coef, fwd)
            self.actor_opts[i].step(a_grads)
            if not (math.isfinite(c_loss) and math.isfinite(a_loss)):
                raise NumericError(f"agent {i}: non-finite loss (critic={c_loss}, actor={a_loss})")
            soft_update(self.target_critics[i], self.critics[i], h.tau)
            soft_update(self.target_actors[i], self.actors[i], h.tau)
            losses["critic"].append(c_loss)
            losses["actor"].append(a_loss)
        self.updates += 1
        return losses

    # persistence --------------------------------------------------------
    def networks(self) -> dict[str, MLP]:
        out = {}
        for i in range(self.n_agents):
            out[f"actor{i}"] = self.actors[i]
            out[f"critic{i}"] = self.critics[i]
            out[f"target_actor{i}"] = self.target_actors[i]
            out[f"target_critic{i}"] = self.target_critics[i]
        return out

    def snapshot(self) -> list[np.ndarray]:
        return [p.copy() for net in self.networks().values() for p in net.params]

    def restore(self, snap: list[np.ndarray]) -> None:
        it = iter(snap)
        for net in self.networks().values():
            for p in net.params:
                p[...] = next(it)

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        """Write ``<path>.json`` (header) and ``<path>.bin`` (float64, row-major, little-endian)."""
        path = Path(path)
        arrays, entries, offset = [], [], 0
        for name, net in self.networks().items():
            for j, p in enumerate(net.params):
                entries.append({"name": f"{name}.{j}", "shape": list(p.shape), "offset": offset})
                offset += p.size
                arrays.append(p.ravel())
        header = {
            "format": "dtvec-checkpoint-1",
            "dtype": "<f8",
            "n_agents": self.n_agents,
            "obs_dim": self.obs_dim,
            "n_actions": self.n_actions,
            "centralized": self.centralized,
            "hyper": asdict(self.hyper),
            "arrays": entries,
            "meta": meta or {},
        }
        path.with_suffix(".json").write_text(json.dumps(header, indent=1))
        np.concatenate(arrays).astype("<f8").tofile(path.with_suffix(".bin"))

    @classmethod
    def load(cls, path: str | Path, action_features: np.ndarray) -> "MultiAgentLearner":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        hyper = header["hyper"]
        for key in ("hidden", "actor_activations", "critic_activations"):
            hyper[key] = tuple(hyper[key])
        learner = cls(header["n_agents"], header["obs_dim"], action_features,
                      header["centralized"], LearnerHyper(**hyper))
        flat = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
        params = [p for net in learner.networks().values() for p in net.params]
        for entry, p in zip(header["arrays"], params):
            if list(p.shape) != entry["shape"]:
                raise ValueError(f"shape mismatch for {entry['name']}")
            p[...] = flat[entry["offset"]:entry["offset"] + p.size].reshape(p.shape)
        return learner


# ---------------------------------------------------------------------------
# VEC environment wrapper and training loop

class VecEnv:
    """Gym-like wrapper: one agent per vehicle, actions are codebook indices."""

    def __init__(self, config: SimConfig, reward_fn: Callable | None = None):
        self.config = config
        self.book = Codebook(config.n_task_types)
        self.reward_fn = reward_fn
        self.sim: Simulation | None = None
        self.ctx = None

    @property
    def obs_dim(self) -> int:
        return self.config.n_task_types + 3

    def reset(self, seed: int) -> np.ndarray:
        self.sim = Simulation(self.config.replace(seed=seed))
        self.ctx = self.sim.begin_slot()
        return self.ctx.obs

    def decode(self, indices) -> ActionMatrix:
        rows = [self.book.decode(i) for i in indices]
        return ActionMatrix(np.stack([r[0] for r in rows]), np.stack([r[1] for r in rows]))

    def step(self, indices):
        cfg = self.config
        record = self.sim.finish_slot(self.ctx, self.decode(indices))
        if self.reward_fn is not None:
            r = np.asarray(self.reward_fn(record), dtype=float)
        else:
            r = reward(record.metrics.qos_vehicle, record.actions, self.ctx.bias,
                       cfg.server_cpu_fE, cfg.reward_eta)
        self.ctx = self.sim.begin_slot()
        return self.ctx.obs, r, record


@dataclass
class TrainResult:
    learner: MultiAgentLearner
    curve: np.ndarray  # (episodes, n_agents) mean reward per slot
    converged_episode: int | None
    cases: object = None
    losses: list = field(default_factory=list)


def plateau_episode(curve_mean: np.ndarray, window: int = 200, rel: float = 0.05) -> int | None:
    """First episode at which the trailing-window std falls under rel*|mean|."""
    for e in range(window, len(curve_mean) + 1):
        w = curve_mean[e - window:e]
        if np.std(w) < rel * abs(np.mean(w)):
            return e - 1
    return None


def epsilon_at(episode: int, episodes: int, hyper: LearnerHyper) -> float:
    half = max(1, episodes // 2)
    frac = min(1.0, episode / half)
    return hyper.eps_start + frac * (hyper.eps_end - hyper.eps_start)


def marl_train(config: SimConfig, episodes: int, slots_per_episode: int = 50,
               hyper: LearnerHyper | None = None, centralized: bool = True,
               reward_fn: Callable | None = None, export_slots: int = 0,
               warmup: int | None = None) -> TrainResult:
    """Train one learner per vehicle and optionally export a greedy-rollout case set."""
    from ..llm.cases import CaseSet, CaseRecord

    hyper = hyper or LearnerHyper(seed=config.seed, gamma=config.gamma, tau=config.soft_update_lambda)
    env = VecEnv(config, reward_fn)
    learner = MultiAgentLearner(config.n_vehicles, env.obs_dim, env.book.feature_table(),
                                centralized, hyper)
    warmup = hyper.batch_size if warmup is None else warmup
    curve = np.zeros((episodes, config.n_vehicles))
    last_good = learner.snapshot()
    step = 0
    for ep in range(episodes):
        obs = env.reset(seed=config.seed * 100_003 + ep)
        eps = epsilon_at(ep, episodes, hyper)
        total = np.zeros(config.n_vehicles)
        for _ in range(slots_per_episode):
            acts = learner.act_all(obs, eps)
            next_obs, r, _ = env.step(acts)
            learner.buffer.add(obs, acts, r, next_obs)
            total += r
            obs = next_obs
            step += 1
            if learner.buffer.size >= warmup and step % hyper.train_every == 0:
                try:
                    learner.train_step()
                except NumericError as exc:
                    learner.restore(last_good)
                    raise TrainingError(str(exc), {"episode": ep, "step": step}, last_good) from exc
        curve[ep] = total / slots_per_episode
        last_good = learner.snapshot()
    conv = plateau_episode(curve.mean(axis=1))
    cases = None
    if export_slots > 0:
        cases = CaseSet()
        sim = Simulation(config.replace(seed=config.seed + 1))
        for _ in range(export_slots):
            ctx = sim.begin_slot()
            idx = learner.act_all(ctx.obs, greedy=True)
            rec = sim.finish_slot(ctx, env.decode(idx))
            cases.append(CaseRecord(ctx.obs, rec.actions.as_rows(), rec.metrics.summary(), ctx.t))
    log.info("trained %d episodes, plateau at %s", episodes, conv)
    return TrainResult(learner, curve, conv, cases)


class LearnedPolicy:
    """Greedy decisions from a trained learner."""

    name = "marl"

    def __init__(self, learner: MultiAgentLearner, K: int, name: str | None = None):
        self.learner = learner
        self.book = Codebook(K)
        if name:
            self.name = name

    def reset(self, config):
        pass

    def decide(self, ctx, config):
        idx = self.learner.act_all(ctx.obs, greedy=True)
        rows = [self.book.decode(i) for i in idx]
        return ActionMatrix(np.stack([r[0] for r in rows]), np.stack([r[1] for r in rows]))

    def after_slot(self, ctx, record):
        pass


def sarl_hyper(**kw) -> LearnerHyper:
    """Single-agent baseline: all-ReLU hidden layers, local critic."""
    base = dict(actor_activations=("relu", "relu", "relu"), critic_activations=("relu", "relu", "relu"))
    base.update(kw)
    return LearnerHyper(**base)

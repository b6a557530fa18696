"""Objectives, constraint checks, feasibility projection and RL reward."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .metrics import SlotMetrics
from .queueing import arrivals

ALPHA_MIN = 0.005
# relative slack before a budget is treated as exceeded; keeps projection idempotent
_BUDGET_RTOL = 1e-12


class InfeasibleError(ValueError):
    """Even the alpha floor overruns the server budget."""


@dataclass
class ActionMatrix:
    offload_omega: np.ndarray  # (N, K)
    alloc_alpha: np.ndarray  # (N, K)

    def __post_init__(self):
        self.offload_omega = np.asarray(self.offload_omega, dtype=float)
        self.alloc_alpha = np.asarray(self.alloc_alpha, dtype=float)
        if self.offload_omega.shape != self.alloc_alpha.shape:
            raise ValueError("omega and alpha must have the same shape")

    @property
    def shape(self):
        return self.offload_omega.shape

    def as_rows(self) -> np.ndarray:
        """N x 2K layout: omega columns then alpha columns."""
        return np.hstack([self.offload_omega, self.alloc_alpha])

    @classmethod
    def from_rows(cls, rows, K: int) -> "ActionMatrix":
        rows = np.asarray(rows, dtype=float)
        return cls(rows[:, :K], rows[:, K:2 * K])

    def copy(self) -> "ActionMatrix":
        return ActionMatrix(self.offload_omega.copy(), self.alloc_alpha.copy())

    def equals(self, other: "ActionMatrix") -> bool:
        return (np.array_equal(self.offload_omega, other.offload_omega)
                and np.array_equal(self.alloc_alpha, other.alloc_alpha))


class Violation(NamedTuple):
    id: str
    magnitude: float
    where: tuple = ()


@dataclass
class ObjectiveValue:
    p1: float
    p2: float
    drift_penalty_term: float
    constraint_violations: list = field(default_factory=list)


def p1_objective(metrics: SlotMetrics) -> float:
    return -metrics.qos_system + metrics.e_system


def drift_penalty_term(q, Z, alpha, beta: float, fE: float, ck, service_dt: float = 1.0) -> float:
    """beta * sum_k q_k (Z_k - f_E sum_n alpha_nk / c_k)."""
    served = fE * np.asarray(alpha, float).sum(axis=0) / np.asarray(ck, float) * service_dt
    return float(beta * np.dot(np.asarray(q, float), np.asarray(Z, float) - served))


def p2_objective(q, actions: ActionMatrix, sizes, metrics: SlotMetrics, beta: float,
                 fE: float, ck, violations=None, service_dt: float = 1.0) -> ObjectiveValue:
    Z = arrivals(actions.offload_omega, sizes)
    drift = drift_penalty_term(q, Z, actions.alloc_alpha, beta, fE, ck, service_dt)
    p1 = p1_objective(metrics)
    return ObjectiveValue(p1, drift + p1, drift, list(violations or []))


def resource_usage(actions: ActionMatrix, twin_bias, fE: float) -> float:
    """sum_n sum_k (alpha_nk f_E + df_nk)."""
    bias = np.broadcast_to(np.asarray(twin_bias, float), actions.shape)
    return float(np.sum(actions.alloc_alpha * fE + bias))


def check_constraints(actions: ActionMatrix, metrics: SlotMetrics | None, twin_bias,
                      fE: float, Tmax) -> list[Violation]:
    out: list[Violation] = []
    if metrics is not None:
        tmax = np.broadcast_to(np.asarray(Tmax, float), actions.shape)
        over = metrics.total_delay - tmax
        for n, k in zip(*np.nonzero(over > 0)):
            out.append(Violation("17c", float(over[n, k]), (int(n), int(k))))
    excess = resource_usage(actions, twin_bias, fE) - fE
    if excess > _BUDGET_RTOL * fE * 1e3:
        out.append(Violation("17d", excess))
    w = actions.offload_omega
    bad = np.maximum(w - 1.0, 0.0) + np.maximum(-w, 0.0)
    for n, k in zip(*np.nonzero(bad > 0)):
        out.append(Violation("17e", float(bad[n, k]), (int(n), int(k))))
    return out


def _shrink_to(alpha: np.ndarray, floor: float, target: float) -> np.ndarray:
    # scale the part above the floor so that the total hits target
    excess = alpha - floor
    room = target - floor * alpha.size
    total_excess = excess.sum()
    if total_excess <= 0:
        return alpha
    return floor + excess * (room / total_excess)


def project_feasible(raw: ActionMatrix, twin_bias, fE: float, alpha_min: float = ALPHA_MIN) -> ActionMatrix:
    """Map an arbitrary action into the feasible set.

    omega is clipped to [0, 1] and alpha to >= alpha_min. If a per-type sum
    of alpha exceeds 1, or the server budget sum(alpha f_E + df) exceeds
    f_E, the alpha mass above the floor is scaled down so the violated
    budget binds. Feasible inputs come back unchanged.
    """
    omega = np.asarray(raw.offload_omega, float)
    alpha = np.asarray(raw.alloc_alpha, float)
    if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(alpha))):
        raise ValueError("action entries must be finite")
    N, K = omega.shape
    bias = np.broadcast_to(np.asarray(twin_bias, float), omega.shape)
    budget = (fE - float(bias.sum())) / fE
    if N * K * alpha_min > budget * (1 + _BUDGET_RTOL) or N * alpha_min > 1.0:
        raise InfeasibleError(
            f"alpha floor {alpha_min} x {N * K} pairs exceeds budget {budget:.6g} of f_E")
    omega = np.clip(omega, 0.0, 1.0)
    alpha = np.maximum(alpha, alpha_min)
    for k in range(K):
        col = alpha[:, k]
        if col.sum() > 1.0 + _BUDGET_RTOL:
            alpha[:, k] = _shrink_to(col, alpha_min, 1.0)
    if alpha.sum() > budget * (1 + _BUDGET_RTOL):
        alpha = _shrink_to(alpha.ravel(), alpha_min, budget).reshape(N, K)
    return ActionMatrix(omega, alpha)


def is_feasible(actions: ActionMatrix, twin_bias, fE: float, alpha_min: float = ALPHA_MIN) -> bool:
    return project_feasible(actions, twin_bias, fE, alpha_min).equals(actions)


def reward(u_ave_n, actions: ActionMatrix, twin_bias, fE: float, eta: float):
    """U_n - eta (f_E - sum(alpha f_E + df)); the penalty is shared by all agents."""
    gap = fE - resource_usage(actions, twin_bias, fE)
    return np.asarray(u_ave_n, float) - eta * gap


def discounted_return(rewards, gamma: float) -> float:
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    r = np.asarray(rewards, float)
    return float(np.sum(r * gamma ** np.arange(len(r))))

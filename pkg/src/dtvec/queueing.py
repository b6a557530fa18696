"""Server-side per-type queues and Lyapunov diagnostics.

Queues are fluid and counted in bytes. Service is a rate (bytes/s) scaled
by the slot length for the backlog recursion.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InsufficientHistoryError(ValueError):
    pass


@dataclass
class QueueState:
    backlog_q: np.ndarray
    slot_arrivals_Z: np.ndarray = None
    slot_service_phi: np.ndarray = None

    def __post_init__(self):
        self.backlog_q = np.asarray(self.backlog_q, dtype=float)
        k = self.backlog_q.shape
        if self.slot_arrivals_Z is None:
            self.slot_arrivals_Z = np.zeros(k)
        if self.slot_service_phi is None:
            self.slot_service_phi = np.zeros(k)


def arrivals(omega: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Bytes offloaded to each type queue: Z_k = sum_n omega_nk |D_nk|."""
    omega = np.asarray(omega, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    if omega.shape != sizes.shape:
        raise ValueError(f"shape mismatch: omega {omega.shape} vs sizes {sizes.shape}")
    return (omega * sizes).sum(axis=0)


def service(alpha: np.ndarray, fE: float, ck, dt: float = 1.0) -> np.ndarray:
    """Bytes served per type in one slot: (f_E sum_n alpha_nk / c_k) dt."""
    alpha = np.asarray(alpha, dtype=float)
    return fE * alpha.sum(axis=0) / np.asarray(ck, dtype=float) * dt


def step_queue(q, Z, phi) -> np.ndarray:
    return np.maximum(0.0, np.asarray(q, float) + np.asarray(Z, float) - np.asarray(phi, float))


def lyapunov_value(q) -> float:
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.dot(q, q))


def drift_sample(q_t, q_next) -> float:
    return lyapunov_value(q_next) - lyapunov_value(q_t)


def drift_upper(q_t, Z, phi) -> float:
    """Right-hand side of the exact one-slot bound on the Lyapunov drift."""
    d = np.asarray(Z, float) - np.asarray(phi, float)
    return 0.5 * float(np.dot(d, d)) + float(np.dot(np.asarray(q_t, float), d))


def drift_bound_B(zmax, fE: float, ck, dt: float = 1.0) -> float:
    """Closed-form constant B = 1/2 sum_k (Zmax_k^2 - (f_E dt / c_k)^2); may be negative."""
    zmax = np.asarray(zmax, dtype=float)
    cap = fE * dt / np.broadcast_to(np.asarray(ck, dtype=float), zmax.shape)
    return 0.5 * float(np.sum(zmax ** 2 - cap ** 2))


@dataclass
class BacklogHistory:
    """Per-slot record of backlog (start of slot), arrivals and service."""

    K: int
    q: list = field(default_factory=list)
    Z: list = field(default_factory=list)
    phi: list = field(default_factory=list)

    def append(self, q, Z, phi) -> None:
        self.q.append(np.asarray(q, float).copy())
        self.Z.append(np.asarray(Z, float).copy())
        self.phi.append(np.asarray(phi, float).copy())

    def __len__(self) -> int:
        return len(self.q)

    def arrays(self):
        if not self.q:
            empty = np.zeros((0, self.K))
            return empty, empty, empty
        return np.array(self.q), np.array(self.Z), np.array(self.phi)

    def to_csv(self, path) -> None:
        q, Z, phi = self.arrays()
        header = ["slot"] + [f"q_{k + 1}" for k in range(self.K)] \
            + [f"Z_{k + 1}" for k in range(self.K)] + [f"phi_{k + 1}" for k in range(self.K)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t in range(len(self)):
                w.writerow([t] + [repr(float(x)) for x in (*q[t], *Z[t], *phi[t])])

    @classmethod
    def from_csv(cls, path) -> "BacklogHistory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        K = sum(1 for h in header if h.startswith("q_"))
        hist = cls(K)
        for row in body:
            vals = [float(x) for x in row[1:]]
            hist.append(vals[:K], vals[K:2 * K], vals[2 * K:])
        return hist


@dataclass
class StabilityReport:
    time_avg_backlog: float
    tail_slope: float
    bound_B: float
    epsilon: float
    bound_B_over_eps: float
    mean_arrivals: float
    stable: bool
    status: str = "ok"

    @classmethod
    def insufficient(cls) -> "StabilityReport":
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, nan, False, "insufficient data")


MIN_HISTORY = 10


def tail_slope(total_backlog: np.ndarray) -> float:
    """Least-squares slope of the last half of a series (units per slot)."""
    y = np.asarray(total_backlog, dtype=float)
    tail = y[len(y) // 2:]
    x = np.arange(len(tail), dtype=float)
    x -= x.mean()
    denom = float(np.dot(x, x))
    if denom == 0:
        return 0.0
    return float(np.dot(x, tail - tail.mean()) / denom)


def stability_report(history: BacklogHistory, zmax=None, fE: float | None = None,
                     ck=None, dt: float = 1.0, rel_tol: float = 0.01) -> StabilityReport:
    """Finite-horizon stability diagnosis of a backlog history.

    STABLE when the tail slope of the total backlog is at most ``rel_tol``
    times the mean per-slot total arrivals. ``bound_B`` is only filled when
    ``zmax``, ``fE`` and ``ck`` are given.
    """
    if len(history) < MIN_HISTORY:
        raise InsufficientHistoryError(f"need at least {MIN_HISTORY} slots, got {len(history)}")
    q, Z, phi = history.arrays()
    total = q.sum(axis=1)
    slope = tail_slope(total)
    mean_arr = float(Z.sum(axis=1).mean())
    stable = slope <= rel_tol * mean_arr
    eps = float(np.mean(np.min(phi - Z, axis=1)))
    if zmax is not None and fE is not None and ck is not None:
        B = drift_bound_B(zmax, fE, ck, dt)
    else:
        B = float("nan")
    if math.isnan(B):
        b_over_eps = float("nan")
    elif eps > 0:
        b_over_eps = B / eps
    else:
        b_over_eps = float("inf")
    return StabilityReport(float(total.mean()), slope, B, eps, b_over_eps, mean_arr, bool(stable))


def read_backlog_csv(path: str | Path) -> BacklogHistory:
    return BacklogHistory.from_csv(path)

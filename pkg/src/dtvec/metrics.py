"""Per-slot delay, QoS and energy.

Sizes are bytes; only the transmission term converts to bits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularAllocationError(ArithmeticError):
    """Effective edge frequency alpha*f_E + df is not strictly positive."""


@dataclass
class SlotMetrics:
    local_delay: np.ndarray
    edge_delay: np.ndarray
    bias_delay: np.ndarray
    total_delay: np.ndarray
    qos_task: np.ndarray
    qos_vehicle: np.ndarray
    qos_system: float
    e_local: float
    e_edge: float
    e_system: float

    def summary(self) -> dict:
        return {
            "qos_system": self.qos_system,
            "mean_delay": float(self.total_delay.mean()),
            "e_local": self.e_local,
            "e_edge": self.e_edge,
            "e_system": self.e_system,
        }


def local_delay(omega, size_bytes, ck, fv):
    return (1.0 - np.asarray(omega, float)) * np.asarray(size_bytes, float) * np.asarray(ck, float) / fv


def bias_delay(omega, size, ck, alpha, fE, df):
    """Latency shift caused by the twin's frequency estimation error."""
    alloc = np.asarray(alpha, float) * fE
    df = np.asarray(df, float)
    if np.any(alloc <= 0) or np.any(alloc + df <= 0):
        raise SingularAllocationError("alpha*f_E and alpha*f_E + df must be positive")
    return -np.asarray(omega, float) * np.asarray(size, float) * np.asarray(ck, float) * df / (alloc * (df + alloc))


def transmission_delay(size, rate, omega=None):
    """8*|D|/r; if ``omega`` is given only the offloaded share is sent."""
    rate = np.asarray(rate, float)
    if np.any(rate <= 0):
        raise ZeroDivisionError("transmission rate must be positive")
    bits = 8.0 * np.asarray(size, float)
    if omega is not None:
        bits = bits * np.asarray(omega, float)
    return bits / rate


def edge_delay(size, rate, omega, ck, alpha, fE, df, tx_scaled_by_omega: bool = False):
    tx = transmission_delay(size, rate, omega if tx_scaled_by_omega else None)
    alloc = np.asarray(alpha, float) * fE
    if np.any(alloc <= 0):
        raise SingularAllocationError("alpha*f_E must be positive")
    proc = np.asarray(omega, float) * np.asarray(size, float) * np.asarray(ck, float) / alloc
    return tx + proc + bias_delay(omega, size, ck, alpha, fE, df)


def total_delay(local, edge):
    return np.asarray(local) + np.asarray(edge)


def qos_task(t, tmax):
    return 1.0 - np.asarray(t, float) / np.asarray(tmax, float)


def qos_vehicle(u):
    """Mean QoS over the task types of each vehicle (last axis)."""
    u = np.asarray(u, float)
    if u.size == 0:
        raise ValueError("empty QoS row")
    return u.mean(axis=-1)


def qos_system(u_ave) -> float:
    u_ave = np.asarray(u_ave, float)
    if u_ave.size == 0:
        raise ValueError("empty QoS vector")
    return float(u_ave.mean())


def local_energy(local_delays, fv: float, kve: float) -> float:
    return float(fv ** 3 * kve * np.sum(local_delays))


def edge_energy(alpha, fE: float, NE: int, kse: float, dt: float = 1.0) -> float:
    """Server CPU energy over one slot (the DVFS power model times dt)."""
    total = float(np.sum(alpha))
    return NE * kse * (fE * total / NE) ** 3 * dt


def system_energy(e_local: float, e_edge: float) -> float:
    return e_local + e_edge


def compute_slot_metrics(config, omega, alpha, sizes, rates, df) -> SlotMetrics:
    """All delay/QoS/energy quantities for one slot.

    ``rates`` is per vehicle (N,), ``df`` is the (N, K) estimation bias.
    """
    ck = np.asarray(config.cycles_per_byte_ck)
    tmax = np.asarray(config.max_delay_Tmax)
    rates_nk = np.asarray(rates, float)[:, None]
    t_loc = local_delay(omega, sizes, ck, config.vehicle_cpu_fv)
    t_bias = bias_delay(omega, sizes, ck, alpha, config.server_cpu_fE, df)
    t_edge = edge_delay(sizes, rates_nk, omega, ck, alpha, config.server_cpu_fE, df,
                        config.tx_scaled_by_omega)
    t_tot = total_delay(t_loc, t_edge)
    u = qos_task(t_tot, tmax)
    u_ave = qos_vehicle(u)
    e_loc = local_energy(t_loc, config.vehicle_cpu_fv, config.kappa_ve)
    e_edg = edge_energy(alpha, config.server_cpu_fE, config.n_cores_NE, config.kappa_se, config.slot_dt)
    return SlotMetrics(t_loc, t_edge, t_bias, t_tot, u, u_ave, qos_system(u_ave),
                       e_loc, e_edg, system_energy(e_loc, e_edg))

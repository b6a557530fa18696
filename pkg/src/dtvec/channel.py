"""Uplink channel: path loss, log-normal shadowing, Gauss-Markov fading, rate."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import LIGHT_SPEED


class ChannelDomainError(ValueError):
    pass


@dataclass
class ChannelSample:
    gain_g: np.ndarray
    large_scale_h: np.ndarray
    small_scale_s: np.ndarray
    rate_r: np.ndarray


def path_loss_db(distance_m):
    """128.1 + 37.6 log10(d) with d in kilometres."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(~(d > 0)):
        raise ChannelDomainError("distance must be strictly positive")
    out = 128.1 + 37.6 * np.log10(d / 1000.0)
    return float(out) if out.ndim == 0 else out


def sample_shadowing(rng: np.random.Generator, sigma_db: float = 8.0, size=None):
    if sigma_db == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.normal(0.0, sigma_db, size=size)


_SERIES_CUTOFF = 12.0


def _j0_series(x: float) -> float:
    # alternating series; terms peak near m ~ x/2 so 80 terms cover |x| <= 12
    half_sq = (x / 2.0) ** 2
    term = 1.0
    total = 1.0
    for m in range(1, 80):
        term *= -half_sq / (m * m)
        total += term
        if abs(term) < 1e-18:
            break
    return total


def _j0_asymptotic(x: float) -> float:
    # Hankel expansion; for x > 12 six terms give better than 1e-10
    x = abs(x)
    mu = 0.0
    p = 1.0
    q = 0.0
    a = 1.0
    z = 8.0 * x
    for k in range(1, 13):
        a *= (mu - (2 * k - 1) ** 2) / (k * z)
        if k % 2:
            q += a * (1 if (k // 2) % 2 == 0 else -1)
        else:
            p += a * (1 if (k // 2) % 2 == 0 else -1)
    chi = x - math.pi / 4.0
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - q * math.sin(chi))


def bessel_j0(x: float) -> float:
    """Zeroth-order Bessel function of the first kind."""
    x = abs(float(x))
    if not math.isfinite(x):
        raise ChannelDomainError("J0 argument must be finite")
    if x <= _SERIES_CUTOFF:
        return _j0_series(x)
    return _j0_asymptotic(x)


def doppler_frequency(v: float, fc: float) -> float:
    return v * fc / LIGHT_SPEED


def doppler_correlation(v: float, fc: float, dt: float) -> float:
    """Slot-to-slot fading correlation J0(2 pi f_d dt)."""
    return bessel_j0(2.0 * math.pi * doppler_frequency(v, fc) * dt)


def complex_gaussian(rng: np.random.Generator, variance=1.0, size=None):
    """Circularly symmetric complex Gaussian with the given total variance."""
    scale = np.sqrt(np.asarray(variance, dtype=float) / 2.0)
    re = rng.normal(size=size)
    im = rng.normal(size=size)
    return scale * (re + 1j * im)


def step_small_scale(s_prev, kappa, rng: np.random.Generator):
    """One Gauss-Markov update s = kappa s_prev + e, e ~ CN(0, 1 - kappa^2)."""
    kappa = np.asarray(kappa, dtype=float)
    if np.any(np.abs(kappa) > 1.0):
        raise ChannelDomainError("|kappa| must not exceed 1")
    s_prev = np.asarray(s_prev, dtype=complex)
    innovation = complex_gaussian(rng, 1.0 - kappa ** 2, size=s_prev.shape)
    out = kappa * s_prev + innovation
    return complex(out) if out.ndim == 0 else out


def large_scale_gain(path_loss, shadow_db):
    return 10.0 ** (-(np.asarray(path_loss) + np.asarray(shadow_db)) / 10.0)


def channel_gain(s, h):
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ChannelDomainError("large-scale gain must be nonnegative")
    out = np.abs(np.asarray(s)) ** 2 * h
    return float(out) if out.ndim == 0 else out


def transmission_rate(w: float, p: float, g, rho2: float):
    """Shannon rate in bits/s."""
    if w <= 0 or p < 0 or rho2 <= 0:
        raise ChannelDomainError("need w > 0, p >= 0, rho2 > 0")
    out = w * np.log2(1.0 + p * np.asarray(g, dtype=float) / rho2)
    return float(out) if np.ndim(out) == 0 else out


def distance_to_bs(position, bs_position: float, elevation: float):
    return np.hypot(np.asarray(position, dtype=float) - bs_position, elevation)

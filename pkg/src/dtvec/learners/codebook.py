"""Discrete per-vehicle action codebook over (omega, alpha) grids."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OMEGA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
ALPHA_GRID = (0.005, 0.02, 0.04, 0.06, 0.08, 0.1)


@dataclass(frozen=True)
class Codebook:
    """Cross product of per-type (omega, alpha) grid points.

    Index digits are base ``len(omega)*len(alpha)``, most significant digit
    first; within a digit the omega index varies slowest.
    """

    K: int
    omega: tuple = OMEGA_GRID
    alpha: tuple = ALPHA_GRID
    _pairs: int = field(init=False, repr=False, default=0)

    def __post_init__(self):
        object.__setattr__(self, "_pairs", len(self.omega) * len(self.alpha))

    @property
    def size(self) -> int:
        return self._pairs ** self.K

    def digits(self, index: int) -> list[int]:
        if not 0 <= index < self.size:
            raise IndexError(f"codebook index {index} out of range [0, {self.size})")
        out = []
        for _ in range(self.K):
            index, d = divmod(index, self._pairs)
            out.append(d)
        return out[::-1]

    def decode(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        """Return the (omega row, alpha row) of one vehicle."""
        na = len(self.alpha)
        ds = self.digits(int(index))
        w = np.array([self.omega[d // na] for d in ds])
        a = np.array([self.alpha[d % na] for d in ds])
        return w, a

    def encode(self, omega_row, alpha_row) -> int:
        na = len(self.alpha)
        index = 0
        for w, a in zip(omega_row, alpha_row):
            d = self.omega.index(float(w)) * na + self.alpha.index(float(a))
            index = index * self._pairs + d
        return index

    def features(self, index: int) -> np.ndarray:
        """Critic-side encoding: omega values then alpha scaled to [0, 1]."""
        w, a = self.decode(index)
        return np.concatenate([w, a / max(self.alpha)])

    @property
    def feature_dim(self) -> int:
        return 2 * self.K

    def feature_table(self) -> np.ndarray:
        return np.stack([self.features(i) for i in range(self.size)])

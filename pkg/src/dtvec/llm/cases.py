"""Case set: (state, action) exemplars persisted as line-delimited JSON."""
from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class StorageError(OSError):
    pass


@dataclass
class CaseRecord:
    state: np.ndarray  # N x (K + 3)
    action: np.ndarray  # N x 2K, omega columns then alpha columns
    outcome: dict | None = None
    ts: int = 0
    rendered: dict = field(default_factory=dict, repr=False, compare=False)  # prompt text cache

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float)
        self.action = np.asarray(self.action, dtype=float)
        if self.state.shape[0] != self.action.shape[0]:
            raise ValueError("state and action row counts differ")
        if np.any(self.action < 0) or np.any(self.action > 1):
            raise ValueError("action entries must lie in [0, 1]")

    def to_json(self) -> str:
        # repr-based floats round-trip exactly through json
        return json.dumps({
            "state": self.state.tolist(),
            "action": self.action.tolist(),
            "outcome": self.outcome,
            "ts": int(self.ts),
        })

    @classmethod
    def from_json(cls, line: str) -> "CaseRecord":
        d = json.loads(line)
        return cls(np.array(d["state"], dtype=float), np.array(d["action"], dtype=float),
                   d.get("outcome"), int(d.get("ts", 0)))


class CaseSet:
    """Bounded FIFO collection of cases; one writer, many readers.

    If ``path`` is set every append is also written through to disk.
    """

    def __init__(self, records=(), capacity: int = 10_000, path: str | Path | None = None):
        self.capacity = int(capacity)
        self._records: deque[CaseRecord] = deque(maxlen=self.capacity)
        self._lock = threading.Lock()
        self.path = Path(path) if path else None
        self._version = 0
        self._cache = None
        for r in records:
            self._records.append(r)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self.records())

    def __getitem__(self, i: int) -> CaseRecord:
        return self._records[i]

    def records(self) -> list[CaseRecord]:
        with self._lock:
            return list(self._records)

    def append(self, record: CaseRecord) -> "CaseSet":
        with self._lock:
            evicting = len(self._records) == self.capacity
            self._records.append(record)
            self._version += 1
            if self.path is not None:
                try:
                    if evicting:
                        self._rewrite()
                    else:
                        with open(self.path, "a") as fh:
                            fh.write(record.to_json() + "\n")
                except OSError as exc:
                    raise StorageError(f"cannot persist case set to {self.path}: {exc}") from exc
        return self

    def _rewrite(self) -> None:
        with open(self.path, "w") as fh:
            for r in self._records:
                fh.write(r.to_json() + "\n")

    def states_for(self, shape) -> tuple[np.ndarray, list[int]]:
        """Stacked states with the given shape plus their positions in the set."""
        cache = self._cache
        if cache is not None and cache[0] == self._version and cache[1] == tuple(shape):
            return cache[2], cache[3]
        recs = self.records()
        idx = [i for i, r in enumerate(recs) if r.state.shape == tuple(shape)]
        stacked = np.stack([recs[i].state for i in idx]) if idx else np.zeros((0, *shape))
        self._cache = (self._version, tuple(shape), stacked, idx)
        return stacked, idx

    def save(self, path: str | Path) -> None:
        try:
            with open(path, "w") as fh:
                for r in self.records():
                    fh.write(r.to_json() + "\n")
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path, capacity: int = 10_000) -> "CaseSet":
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise StorageError(f"cannot read {path}: {exc}") from exc
        return cls([CaseRecord.from_json(l) for l in lines if l.strip()], capacity)


def append_case(case_set: CaseSet, state, action, outcome=None, ts: int = 0) -> CaseSet:
    return case_set.append(CaseRecord(state, action, outcome, ts))

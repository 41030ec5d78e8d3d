"""Peak-memory accounting for the large arrays the engine allocates.

Every big buffer (activations, gather/scatter workspaces, image canvases,
parameters) is allocated through :func:`empty`/:func:`zeros` or registered
with :func:`track`. While a :func:`measure` block is active the live byte
count is maintained per category; deallocations are observed through
weakref finalizers, so the reported peak reflects what the process
actually held at once. Scratch memory inside BLAS is not counted.
"""

from __future__ import annotations

import weakref
from contextlib import contextmanager

import numpy as np

_active: list["MemoryTracker"] = []


class MemoryTracker:
    """Live/peak byte counters, total and per allocation kind."""

    def __init__(self):
        self.live = 0
        self.peak = 0
        self.live_by_kind: dict[str, int] = {}
        self.peak_by_kind: dict[str, int] = {}

    def add(self, nbytes: int, kind: str):
        self.live += nbytes
        self.peak = max(self.peak, self.live)
        self.live_by_kind[kind] = self.live_by_kind.get(kind, 0) + nbytes
        self.peak_by_kind[kind] = max(
            self.peak_by_kind.get(kind, 0), self.live_by_kind[kind]
        )

    def remove(self, nbytes: int, kind: str):
        self.live -= nbytes
        self.live_by_kind[kind] = self.live_by_kind.get(kind, 0) - nbytes

    def working_peak(self) -> int:
        """Peak of activations plus workspaces (the network working set)."""
        return self.peak_by_kind.get("activation", 0) + self.peak_by_kind.get(
            "workspace", 0
        )


def track(arr: np.ndarray, kind: str = "activation") -> np.ndarray:
    """Register an existing array with every active tracker."""
    if _active:
        nbytes = arr.nbytes
        for tracker in list(_active):
            tracker.add(nbytes, kind)
            weakref.finalize(arr, tracker.remove, nbytes, kind)
    return arr


def empty(shape, dtype, kind: str = "activation") -> np.ndarray:
    return track(np.empty(shape, dtype=dtype), kind)


def zeros(shape, dtype, kind: str = "activation") -> np.ndarray:
    return track(np.zeros(shape, dtype=dtype), kind)


@contextmanager
def measure():
    """Track allocations made inside the block; yields the tracker."""
    tracker = MemoryTracker()
    _active.append(tracker)
    try:
        yield tracker
    finally:
        _active.remove(tracker)

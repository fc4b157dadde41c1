from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    """Per-slot record of a simulation run.

    State columns hold the value at the *end* of each slot; ``initial`` holds
    the state before slot 0.  Event columns hold the draws realized in the slot.
    """

    columns: dict[str, np.ndarray]
    initial: dict[str, int] = field(default_factory=dict)
    slot0: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def with_initial(self, name: str) -> np.ndarray:
        """State column with the initial value prepended (length T + 1)."""
        return np.concatenate([[self.initial[name]], self.columns[name]])

    @classmethod
    def from_array(cls, arr: np.ndarray, names, initial=None, slot0=0) -> "Trajectory":
        cols = {n: arr[:, k].copy() for k, n in enumerate(names)}
        return cls(cols, dict(initial or {}), slot0)

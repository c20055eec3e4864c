from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FunctionalEstimate:
    value: float
    stderr: float
    samples: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("estimate is not finite")
        if not self.stderr >= 0:
            raise ValueError("standard error must be non-negative")

    @classmethod
    def from_samples(cls, values, **meta) -> "FunctionalEstimate":
        v = np.asarray(values, dtype=float)
        n = v.size
        se = float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(np.mean(v)), se, n, meta)

    def within(self, target: float, n_se: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.value - target) <= max(n_se * self.stderr, floor)

"""Per-batch learning-rate schedules for scaling-factor optimization.

Three kinds: constant, linear decay to lr_min over total_steps, and cosine
annealing with warm restarts (one cosine cycle of steps_per_cycle batches,
restarted externally at the start of each main training epoch).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

KINDS = ("constant", "linear", "cawr")


@dataclass
class Schedule:
    kind: str = "cawr"
    lr_max: float = 1e-3
    lr_min: float = 0.0
    total_steps: int = 1
    steps_per_cycle: int = 1
    step_count: int = field(default=0, init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.lr_max <= 0:
            raise ValueError("lr_max must be positive")
        if self.lr_min < 0 or self.lr_min > self.lr_max:
            raise ValueError("lr_min must lie in [0, lr_max]")
        if self.kind == "linear" and self.total_steps <= 0:
            raise ValueError("total_steps must be positive for the linear schedule")
        if self.kind == "cawr" and self.steps_per_cycle <= 0:
            raise ValueError("steps_per_cycle must be positive for cawr")

    def lr_at(self, step: int) -> float:
        if step < 0:
            raise ValueError("step must be non-negative")
        if self.kind == "constant":
            return self.lr_max
        if self.kind == "linear":
            frac = min(step / self.total_steps, 1.0)
            return self.lr_max - (self.lr_max - self.lr_min) * frac
        phase = (step % self.steps_per_cycle) / self.steps_per_cycle
        return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + math.cos(math.pi * phase))

    def next_lr(self) -> float:
        """Learning rate for the current step, then advance the counter."""
        lr = self.lr_at(self.step_count)
        self.step_count += 1
        return lr

    def restart(self):
        """Warm restart: reset the counter so the next rate is lr_max."""
        self.step_count = 0

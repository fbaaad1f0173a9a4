from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ImuBias:
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).copy())
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float).copy())


@dataclass(frozen=True)
class NavState:
    """Keyframe state: attitude (body to world), position, velocity, biases."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def __post_init__(self):
        for name in ("R", "p", "v", "ba", "bg"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).copy())

    @property
    def bias(self) -> ImuBias:
        return ImuBias(self.ba, self.bg)

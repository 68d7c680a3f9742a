"""One-euro filtering of fused model poses.

Translation components are filtered independently. The rotation is filtered on
quaternion components after aligning each sample to the previous output's
hemisphere, then renormalized; inter-frame rotations are small, so this stays
close to filtering on the manifold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import NonMonotonicTimestamps
from .geometry import RigidTransform
from .markers import FusedPose


def smoothing_factor(dt: float, cutoff: np.ndarray | float) -> np.ndarray | float:
    tau = 1.0 / (2.0 * math.pi * cutoff)
    return 1.0 / (1.0 + tau / dt)


@dataclass
class OneEuroState:
    """Mutable filter state; owned by exactly one consumer."""

    min_cutoff: float = 1.0
    beta: float = 0.05
    d_cutoff: float = 1.0
    value: Optional[np.ndarray] = None  # [tx, ty, tz, qw, qx, qy, qz]
    derivative: np.ndarray = field(default_factory=lambda: np.zeros(7))
    last_timestamp: Optional[float] = None

    def __post_init__(self) -> None:
        if not (self.min_cutoff > 0 and self.d_cutoff > 0):
            raise ValueError("cutoff frequencies must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    def reset(self) -> None:
        self.value = None
        self.derivative = np.zeros(7)
        self.last_timestamp = None


def one_euro_vector(state: OneEuroState, timestamp: float, x: np.ndarray) -> np.ndarray:
    """Advance the per-channel one-euro recurrence by one sample and return the output."""
    x = np.asarray(x, dtype=float)
    if state.value is None:
        state.value = x.copy()
        state.derivative = np.zeros_like(x)
        state.last_timestamp = timestamp
        return x.copy()
    if not timestamp > state.last_timestamp:
        raise NonMonotonicTimestamps(
            f"sample at {timestamp} does not follow {state.last_timestamp}"
        )
    dt = timestamp - state.last_timestamp
    raw_derivative = (x - state.value) / dt
    a_d = smoothing_factor(dt, state.d_cutoff)
    state.derivative = a_d * raw_derivative + (1.0 - a_d) * state.derivative
    cutoff = state.min_cutoff + state.beta * np.abs(state.derivative)
    a = smoothing_factor(dt, cutoff)
    state.value = a * x + (1.0 - a) * state.value
    state.last_timestamp = timestamp
    return state.value.copy()


def one_euro_step(state: OneEuroState, sample: FusedPose) -> tuple[OneEuroState, FusedPose]:
    q = np.asarray(sample.pose.q, dtype=float)
    if state.value is not None and q @ state.value[3:] < 0.0:
        q = -q
    out = one_euro_vector(state, sample.timestamp, np.concatenate([sample.pose.t, q]))
    pose = RigidTransform(out[3:], out[:3])
    return state, replace(sample, pose=pose, filtered=True)


def filter_track(
    track: list[Optional[FusedPose]], state: Optional[OneEuroState] = None
) -> list[Optional[FusedPose]]:
    """Filter a per-frame track; lost frames stay ``None`` and do not advance the filter."""
    state = state or OneEuroState()
    out: list[Optional[FusedPose]] = []
    for sample in track:
        if sample is None:
            out.append(None)
            continue
        state, filtered = one_euro_step(state, sample)
        out.append(filtered)
    return out

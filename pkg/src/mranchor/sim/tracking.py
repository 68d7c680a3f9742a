from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

from ..markers import FusedPose, MarkerRig, try_fuse
from ..smoothing import OneEuroState, one_euro_step
from .scenarios import Frame


@dataclass(frozen=True)
class TrackingRun:
    raw: list[Optional[FusedPose]]
    filtered: list[Optional[FusedPose]]
    durations: list[float]  # seconds per frame, detection log to filtered pose


def track_frames(
    frames: Sequence[Frame], rig: MarkerRig, state: Optional[OneEuroState] = None
) -> TrackingRun:
    """Fuse and filter every frame; the timed span is the tracking loop only."""
    state = state or OneEuroState()
    raw, filtered, durations = [], [], []
    for frame in frames:
        start = time.perf_counter()
        fused = try_fuse(frame.observations, rig)
        smooth = None
        if fused is not None:
            state, smooth = one_euro_step(state, fused)
        durations.append(time.perf_counter() - start)
        raw.append(fused)
        filtered.append(smooth)
    return TrackingRun(raw, filtered, durations)

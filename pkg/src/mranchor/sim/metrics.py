"""Absolute pose error, jitter-frame statistics and throughput of a tracked run."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import EmptyTrack, StreamMismatch
from ..geometry import RigidTransform, TimedPose, pose_error
from ..markers import FusedPose, JitterStats, jitter_stats

TIMESTAMP_TOLERANCE = 1e-6


@dataclass(frozen=True)
class MeanStd:
    mean: float
    std: float  # population standard deviation

    @classmethod
    def of(cls, values: np.ndarray) -> MeanStd:
        return cls(float(np.mean(values)), float(np.std(values)))


@dataclass(frozen=True)
class MetricsReport:
    ape_translation: MeanStd  # mm
    ape_rotation: MeanStd  # degrees
    jfp: JitterStats
    throughput: Optional[float]  # frames per second, None without timing
    frames_evaluated: int

    def to_dict(self, include_throughput: bool = True) -> dict:
        """Report numbers in mm / degrees / percent, two decimals."""
        d = {
            "ape_translation_mm": {"mean": _r(self.ape_translation.mean), "std": _r(self.ape_translation.std)},
            "ape_rotation_deg": {"mean": _r(self.ape_rotation.mean), "std": _r(self.ape_rotation.std)},
            "jfp": {
                "marker_loss_pct": _r(100 * self.jfp.marker_loss_rate),
                "pose_jitter_pct": _r(100 * self.jfp.pose_jitter_rate),
                "frames_total": self.jfp.frames_total,
                "lost_frames": self.jfp.lost_frames,
                "jitter_transitions": self.jfp.jitter_transitions,
                "detected_transitions": self.jfp.detected_transitions,
            },
            "frames_evaluated": self.frames_evaluated,
        }
        if include_throughput:
            d["throughput_fps"] = None if self.throughput is None else _r(self.throughput)
        return d


def _r(x: float) -> float:
    return round(float(x), 2)


def _pose(sample) -> Optional[RigidTransform]:
    if sample is None:
        return None
    if isinstance(sample, (FusedPose, TimedPose)):
        return sample.pose
    return sample


def compute_metrics(
    estimated: Sequence,
    truth: Sequence[TimedPose],
    timing: Optional[Sequence[float]] = None,
) -> MetricsReport:
    """APE over detected frames, JFP over the whole track, throughput from per-frame durations.

    ``estimated`` holds one entry per truth frame: a FusedPose, TimedPose,
    RigidTransform, or ``None`` for a frame with no detection. Entries that carry
    a timestamp must match the truth timestamp.
    """
    if len(estimated) != len(truth):
        raise StreamMismatch(f"track lengths differ: {len(estimated)} vs {len(truth)}")
    if timing is not None and len(timing) != len(truth):
        raise StreamMismatch(f"{len(timing)} timings for {len(truth)} frames")
    t_err, r_err = [], []
    fused: list[Optional[FusedPose]] = []
    for i, (est, tru) in enumerate(zip(estimated, truth)):
        ts = getattr(est, "timestamp", None)
        if ts is not None and abs(ts - tru.timestamp) > TIMESTAMP_TOLERANCE:
            raise StreamMismatch(f"frame {i}: timestamp {ts} vs truth {tru.timestamp}")
        pose = _pose(est)
        if pose is None:
            fused.append(None)
            continue
        err = pose_error(pose, tru.pose)
        t_err.append(err.translation_mm)
        r_err.append(err.rotation_deg)
        fused.append(est if isinstance(est, FusedPose) else FusedPose(tru.timestamp, pose, ()))
    if not t_err:
        raise EmptyTrack("no frame has an estimate")
    throughput = None
    if timing is not None:
        total = math.fsum(timing)
        throughput = len(timing) / total if total > 0 else None
    return MetricsReport(
        MeanStd.of(np.array(t_err)),
        MeanStd.of(np.array(r_err)),
        jitter_stats(fused),
        throughput,
        len(t_err),
    )

"""Depth-assisted fiducial marker tracking of the maternal manikin.

Each detected marker contributes four corners whose 3D positions come from the
aligned depth image. A rigid fit of the known square to those corners gives the
marker pose in the camera frame; chaining with the rig's fixed marker-to-model
offset gives one candidate model pose per marker. Candidates are fused with
weights proportional to ``1 / d^2`` (``d`` the camera-to-marker-center distance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateCorners,
    EmptyTrack,
    InvalidDepth,
    NoKnownMarkers,
    TooFewCorners,
)
from .geometry import RigidTransform, compose, pose_error

JITTER_TRANSLATION = 0.005  # m
JITTER_ROTATION = math.radians(5.0)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def contains(self, pixel: Sequence[float]) -> bool:
        u, v = pixel
        return 0.0 <= u <= self.width and 0.0 <= v <= self.height

    def project(self, points: np.ndarray) -> np.ndarray:
        """Pinhole projection of ``(N, 3)`` camera-frame points to pixels."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        u = self.fx * p[:, 0] / p[:, 2] + self.cx
        v = self.fy * p[:, 1] / p[:, 2] + self.cy
        return np.column_stack([u, v])

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> CameraIntrinsics:
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class MarkerObservation:
    """One fiducial detection.

    Corners follow the detector winding: top-left, top-right, bottom-right,
    bottom-left as seen when facing the marker. ``corners_3d`` rows are NaN
    wherever ``valid_depth`` is false.
    """

    marker_id: int
    timestamp: float
    corners_2d: np.ndarray
    corners_3d: np.ndarray
    valid_depth: tuple[bool, bool, bool, bool]

    def __post_init__(self) -> None:
        c2 = np.asarray(self.corners_2d, dtype=float).reshape(4, 2)
        c3 = np.array(
            [np.full(3, np.nan) if c is None else c for c in self.corners_3d], dtype=float
        ).reshape(4, 3)
        valid = tuple(bool(v) for v in self.valid_depth)
        if len(valid) != 4:
            raise ValueError("valid_depth needs four flags")
        c3[~np.array(valid)] = np.nan
        object.__setattr__(self, "corners_2d", c2)
        object.__setattr__(self, "corners_3d", c3)
        object.__setattr__(self, "valid_depth", valid)

    @property
    def valid_corners(self) -> np.ndarray:
        return self.corners_3d[np.array(self.valid_depth)]

    def center_distance(self) -> float:
        return float(np.linalg.norm(self.valid_corners.mean(axis=0)))


@dataclass(frozen=True)
class MarkerRig:
    """Marker size and fixed model pose in each marker frame (``T^{F_i}_M``)."""

    marker_size: float
    offsets: Mapping[int, RigidTransform]

    def __post_init__(self) -> None:
        if self.marker_size <= 0:
            raise ValueError("marker_size must be positive")
        if not self.offsets:
            raise ValueError("rig needs at least one marker")

    def to_dict(self) -> dict:
        return {
            "marker_size": self.marker_size,
            "offsets": {str(k): v.to_dict() for k, v in sorted(self.offsets.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> MarkerRig:
        return cls(
            float(d["marker_size"]),
            {int(k): RigidTransform.from_dict(v) for k, v in d["offsets"].items()},
        )


@dataclass(frozen=True)
class FusedPose:
    timestamp: float
    pose: RigidTransform  # model pose in the camera frame
    contributing_markers: tuple[tuple[int, float], ...]  # (marker id, normalized weight)
    filtered: bool = False


@dataclass(frozen=True)
class JitterStats:
    marker_loss_rate: float
    pose_jitter_rate: float
    frames_total: int
    lost_frames: int = 0
    jitter_transitions: int = 0
    detected_transitions: int = 0


def backproject_corner(pixel: Sequence[float], depth: float, k: CameraIntrinsics) -> np.ndarray:
    if not (math.isfinite(depth) and depth > 0):
        raise InvalidDepth(f"depth must be positive and finite, got {depth}")
    u, v = pixel
    return np.array([(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth])


def canonical_corners(marker_size: float) -> np.ndarray:
    h = marker_size / 2.0
    return np.array([[-h, h, 0.0], [h, h, 0.0], [h, -h, 0.0], [-h, -h, 0.0]])


def kabsch(src: np.ndarray, dst: np.ndarray, weights: np.ndarray | None = None) -> RigidTransform:
    """Least-squares rigid transform (no scale) mapping ``src`` rows onto ``dst`` rows."""
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    h = (src - mu_s).T @ ((dst - mu_d) * w[:, None])
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform.from_matrix(np.block([[r, (mu_d - r @ mu_s)[:, None]], [np.zeros((1, 3)), 1.0]]))


def fit_marker_pose(obs: MarkerObservation, marker_size: float) -> RigidTransform:
    """Marker pose in the camera frame from its depth-backprojected corners."""
    mask = np.array(obs.valid_depth)
    if mask.sum() < 3:
        raise TooFewCorners(f"marker {obs.marker_id}: {int(mask.sum())} corners with valid depth")
    dst = obs.corners_3d[mask]
    centered = dst - dst.mean(axis=0)
    if np.linalg.svd(centered, compute_uv=False)[1] < 1e-6:
        raise DegenerateCorners(f"marker {obs.marker_id}: corners are collinear")
    return kabsch(canonical_corners(marker_size)[mask], dst)


def weighted_quaternion_mean(quats: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Normalized weighted sum of quaternions aligned to the heaviest one's hemisphere."""
    quats = np.asarray(quats, dtype=float)
    ref = quats[int(np.argmax(weights))]
    signs = np.where(quats @ ref < 0.0, -1.0, 1.0)
    s = (weights * signs) @ quats
    return s / np.linalg.norm(s)


def fuse_marker_poses(observations: Sequence[MarkerObservation], rig: MarkerRig) -> FusedPose:
    """Distance-weighted fusion of per-marker model-pose candidates.

    Markers unknown to the rig or with fewer than three usable corners are skipped.
    """
    candidates: list[RigidTransform] = []
    ids: list[int] = []
    raw_weights: list[float] = []
    for obs in observations:
        offset = rig.offsets.get(obs.marker_id)
        if offset is None:
            continue
        try:
            marker_pose = fit_marker_pose(obs, rig.marker_size)
        except (TooFewCorners, DegenerateCorners):
            continue
        candidates.append(compose(marker_pose, offset))
        ids.append(obs.marker_id)
        raw_weights.append(1.0 / obs.center_distance() ** 2)
    if not candidates:
        raise NoKnownMarkers("no usable observation of a rig marker")

    w = np.array(raw_weights)
    w = w / w.sum()
    ts = {o.timestamp for o in observations}
    timestamp = min(ts)
    if len(candidates) == 1:
        pose = candidates[0]
    else:
        t = w @ np.array([c.t for c in candidates])
        q = weighted_quaternion_mean(np.array([c.q for c in candidates]), w)
        pose = RigidTransform(q, t)
    return FusedPose(timestamp, pose, tuple(zip(ids, (float(x) for x in w))))


def try_fuse(observations: Sequence[MarkerObservation], rig: MarkerRig) -> Optional[FusedPose]:
    """:func:`fuse_marker_poses`, returning ``None`` for a frame with no usable marker."""
    if not observations:
        return None
    try:
        return fuse_marker_poses(observations, rig)
    except NoKnownMarkers:
        return None


def is_jitter(a: RigidTransform, b: RigidTransform) -> bool:
    err = pose_error(b, a)
    return err.translation_error > JITTER_TRANSLATION or err.rotation_error > JITTER_ROTATION


def jitter_stats(raw_track: Sequence[Optional[FusedPose]]) -> JitterStats:
    """Marker-loss and pose-jitter rates of a per-frame track (``None`` = nothing detected).

    Jitter is counted over successive detections, skipping lost frames.
    """
    n = len(raw_track)
    if n < 2:
        raise EmptyTrack(f"need at least 2 frames, got {n}")
    detected = [f for f in raw_track if f is not None]
    lost = n - len(detected)
    transitions = len(detected) - 1
    jumps = sum(is_jitter(p.pose, c.pose) for p, c in zip(detected, detected[1:]))
    return JitterStats(
        marker_loss_rate=lost / n,
        pose_jitter_rate=jumps / transitions if transitions > 0 else 0.0,
        frames_total=n,
        lost_frames=lost,
        jitter_transitions=jumps,
        detected_transitions=max(transitions, 0),
    )


__all__ = [
    "CameraIntrinsics",
    "FusedPose",
    "JitterStats",
    "MarkerObservation",
    "MarkerRig",
    "backproject_corner",
    "canonical_corners",
    "fit_marker_pose",
    "fuse_marker_poses",
    "jitter_stats",
    "kabsch",
    "try_fuse",
    "weighted_quaternion_mean",
]

"""Eye-to-hand calibration of the headset-to-camera transform.

The headset reports the controller pose ``H_U(t)``; the head-mounted camera
reports the pose of a marker fixed to that controller, ``C_F(t)``. With the
unknown mount ``X`` (camera pose in the headset frame), relative motions of the
two streams satisfy ``A @ X = X @ B`` where ``A = H_U(t_j) H_U(t_i)^-1`` and
``B = C_F(t_j) C_F(t_i)^-1``. ``X`` is recovered with the two-step Tsai-Lenz
method: rotation from a modified-Rodrigues linear system, then translation by
linear least squares.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateMotion,
    InsufficientMotion,
    InsufficientPairs,
    StreamMismatch,
)
from .geometry import (
    PoseError,
    RigidTransform,
    TimedPose,
    compose,
    inverse,
    pose_error,
    relative_motion,
)

DEFAULT_MIN_ROTATION = math.radians(5.0)
DEFAULT_MAX_ANGLE_GAP = math.radians(5.0)
SYNC_TOLERANCE = 0.005  # seconds
PARALLEL_AXIS_TOL = math.radians(1.0)
ILL_CONDITIONED = 1e8


@dataclass(frozen=True)
class MotionPair:
    a: RigidTransform  # headset-side relative motion
    b: RigidTransform  # camera-side relative motion

    @property
    def rotation_angle(self) -> float:
        return self.a.angle


@dataclass(frozen=True)
class CalibrationResult:
    x: RigidTransform
    rotation_residual: float
    translation_residual: float
    pairs_used: int


def align_streams(
    headset_stream: Sequence[TimedPose],
    marker_stream: Sequence[TimedPose],
    tolerance: float = SYNC_TOLERANCE,
) -> tuple[list[TimedPose], list[TimedPose]]:
    """Match each headset sample to the nearest marker sample in time.

    Headset samples with no marker sample within ``tolerance`` are dropped;
    a marker sample is used at most once.
    """
    if not marker_stream:
        raise StreamMismatch("marker stream is empty")
    mt = np.array([p.timestamp for p in marker_stream])
    out_h: list[TimedPose] = []
    out_m: list[TimedPose] = []
    used: set[int] = set()
    for h in headset_stream:
        k = int(np.searchsorted(mt, h.timestamp))
        best = min(
            (j for j in (k - 1, k) if 0 <= j < len(mt)),
            key=lambda j: abs(mt[j] - h.timestamp),
        )
        if abs(mt[best] - h.timestamp) <= tolerance and best not in used:
            used.add(best)
            out_h.append(h)
            out_m.append(marker_stream[best])
    return out_h, out_m


def _check_aligned(s1: Sequence[TimedPose], s2: Sequence[TimedPose], tolerance: float) -> None:
    if len(s1) != len(s2):
        raise StreamMismatch(f"stream lengths differ: {len(s1)} vs {len(s2)}")
    for i, (p, q) in enumerate(zip(s1, s2)):
        if abs(p.timestamp - q.timestamp) > tolerance:
            raise StreamMismatch(
                f"sample {i}: timestamps {p.timestamp:.6f} and {q.timestamp:.6f} "
                f"differ by more than {tolerance * 1e3:.1f} ms"
            )


def build_motion_pairs(
    headset_stream: Sequence[TimedPose],
    marker_stream: Sequence[TimedPose],
    min_rotation: float = DEFAULT_MIN_ROTATION,
    *,
    pairing: str = "consecutive",
    max_angle_gap: float | None = DEFAULT_MAX_ANGLE_GAP,
    tolerance: float = SYNC_TOLERANCE,
) -> list[MotionPair]:
    """Relative-motion pairs from two time-aligned pose streams.

    ``pairing="consecutive"`` uses adjacent frames only; ``"all"`` uses every
    ordered pair ``i < j`` (quadratic in stream length). Pairs whose headset
    rotation is below ``min_rotation``, or whose two rotation angles differ by
    more than ``max_angle_gap`` (similar transforms share their angle), are
    discarded.
    """
    if min_rotation < 0:
        raise ValueError("min_rotation must be non-negative")
    _check_aligned(headset_stream, marker_stream, tolerance)
    n = len(headset_stream)
    if pairing == "consecutive":
        index_pairs = [(i, i + 1) for i in range(n - 1)]
    elif pairing == "all":
        index_pairs = list(itertools.combinations(range(n), 2))
    else:
        raise ValueError(f"unknown pairing {pairing!r}")

    pairs = []
    for i, j in index_pairs:
        a = relative_motion(headset_stream[i], headset_stream[j])
        b = relative_motion(marker_stream[i], marker_stream[j])
        if a.angle < min_rotation:
            continue
        if max_angle_gap is not None and abs(a.angle - b.angle) > max_angle_gap:
            continue
        pairs.append(MotionPair(a, b))
    if len(pairs) < 2:
        raise InsufficientMotion(
            f"only {len(pairs)} motion pair(s) rotate by at least "
            f"{math.degrees(min_rotation):.2f} deg"
        )
    return pairs


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _rodrigues_vector(t: RigidTransform) -> np.ndarray:
    # 2 sin(theta/2) * axis, i.e. twice the quaternion vector part (w >= 0).
    return 2.0 * np.asarray(t.q[1:])


def _max_axis_spread(pairs: Sequence[MotionPair]) -> float:
    axes = []
    for p in pairs:
        v = np.asarray(p.a.q[1:])
        n = np.linalg.norm(v)
        if n > 1e-12:
            axes.append(v / n)
    if len(axes) < 2:
        return 0.0
    axes = np.array(axes)
    cos = np.clip(np.abs(axes @ axes.T), 0.0, 1.0)
    return float(np.arccos(cos.min()))


def _solve_linear(m: np.ndarray, y: np.ndarray) -> np.ndarray:
    normal = m.T @ m
    if np.linalg.cond(normal) > ILL_CONDITIONED:
        return np.linalg.lstsq(m, y, rcond=None)[0]
    return np.linalg.solve(normal, m.T @ y)


def solve_hand_eye(pairs: Sequence[MotionPair]) -> CalibrationResult:
    """Tsai-Lenz solution of ``A_i X = X B_i`` over all pairs."""
    if len(pairs) < 2:
        raise InsufficientPairs(f"need at least 2 motion pairs, got {len(pairs)}")
    if _max_axis_spread(pairs) <= PARALLEL_AXIS_TOL:
        raise DegenerateMotion("all rotation axes are parallel within 1 deg")

    # Rotation: skew(P_a + P_b) P' = P_b - P_a with P' = tan(theta_x / 2) * axis_x.
    m = np.vstack([_skew(_rodrigues_vector(p.a) + _rodrigues_vector(p.b)) for p in pairs])
    y = np.concatenate([_rodrigues_vector(p.b) - _rodrigues_vector(p.a) for p in pairs])
    p_prime = _solve_linear(m, y)
    half = math.atan(float(np.linalg.norm(p_prime)))
    norm = np.linalg.norm(p_prime)
    axis = p_prime / norm if norm > 0 else np.zeros(3)
    rx = RigidTransform(np.concatenate([[math.cos(half)], math.sin(half) * axis]))
    r_x = rx.rotation_matrix

    # Translation: (R_a - I) t_x = R_x t_b - t_a.
    c = np.vstack([p.a.rotation_matrix - np.eye(3) for p in pairs])
    d = np.concatenate([r_x @ p.b.t - p.a.t for p in pairs])
    t_x = _solve_linear(c, d)

    x = RigidTransform(rx.q, t_x)
    res = calibration_residual(x, pairs)
    return CalibrationResult(x, res.rotation_error, res.translation_error, len(pairs))


def calibration_residual(x: RigidTransform, pairs: Sequence[MotionPair]) -> PoseError:
    """RMS over pairs of the discrepancy between ``A X`` and ``X B``."""
    if not pairs:
        return PoseError(0.0, 0.0)
    errs = [pose_error(compose(p.a, x), compose(x, p.b)) for p in pairs]
    rot = math.sqrt(sum(e.rotation_error**2 for e in errs) / len(errs))
    trans = math.sqrt(sum(e.translation_error**2 for e in errs) / len(errs))
    return PoseError(trans, rot)


def corrected_trajectory_rmse(
    x: RigidTransform,
    camera_track: Sequence[TimedPose],
    headset_track: Sequence[TimedPose],
    tolerance: float = SYNC_TOLERANCE,
) -> float:
    """Point RMSE (m) between the camera track mapped through ``x`` and the headset track.

    Pass ``x = identity`` to get the uncorrected error.
    """
    _check_aligned(camera_track, headset_track, tolerance)
    if not camera_track:
        raise StreamMismatch("tracks are empty")
    cam = np.array([c.pose.t for c in camera_track])
    head = np.array([h.pose.t for h in headset_track])
    corrected = x.apply(cam)
    return float(np.sqrt(np.mean(np.sum((corrected - head) ** 2, axis=1))))


def similarity_transform_pairs(pairs: Sequence[MotionPair], y: RigidTransform) -> list[MotionPair]:
    """Replace each ``b`` by ``Y b Y^-1``; the solution becomes ``X Y^-1``."""
    y_inv = inverse(y)
    return [MotionPair(p.a, compose(compose(y, p.b), y_inv)) for p in pairs]

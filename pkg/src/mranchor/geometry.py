"""SE(3) transform algebra and pose-error metrics.

Conventions:
    * A transform ``T_ab`` maps points from frame ``b`` into frame ``a``:
      ``p_a = R_ab @ p_b + t_ab``.
    * ``compose(a, b)`` is the homogeneous product ``a @ b`` ("a then b" in the
      chain sense, i.e. ``T_ac = compose(T_ab, T_bc)``).
    * Quaternions are stored scalar-first ``(w, x, y, z)`` and canonicalized to
      ``w >= 0``.
    * Units are meters, seconds and radians throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NonMonotonicTimestamps

IDENTITY_TOL = 1e-9


def _canonical_quaternion(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("quaternion must be finite and non-zero")
    q = q / n
    # Hemisphere convention: w >= 0; ties broken on the first non-zero vector component.
    if q[0] < 0.0 or (q[0] == 0.0 and q[np.flatnonzero(q[1:])[0] + 1] < 0.0):
        q = -q
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two scalar-first quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle in [0, pi] of a unit quaternion (sign-agnostic)."""
    return 2.0 * math.atan2(float(np.linalg.norm(q[1:])), abs(float(q[0])))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Immutable rigid transform: unit quaternion ``q`` (w, x, y, z) and translation ``t``."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        q = _canonical_quaternion(self.q)
        t = np.array(self.t, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        xyzw = Rotation.from_matrix(m[:3, :3]).as_quat()
        return cls(np.roll(xyzw, 1), m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float], t: Sequence[float] = (0.0, 0.0, 0.0)) -> RigidTransform:
        xyzw = Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_quat()
        return cls(np.roll(xyzw, 1), t)

    @classmethod
    def from_rotation(cls, rot: Rotation, t: Sequence[float] = (0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(np.roll(rot.as_quat(), 1), t)

    @classmethod
    def random(cls, rng: np.random.Generator, translation_scale: float = 1.0) -> RigidTransform:
        q = rng.normal(size=4)
        return cls(q, rng.uniform(-translation_scale, translation_scale, size=3))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    @property
    def angle(self) -> float:
        return quat_angle(self.q)

    def rotvec(self) -> np.ndarray:
        return Rotation.from_quat(np.roll(self.q, -1)).as_rotvec()

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.t
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an ``(3,)`` point or ``(N, 3)`` array of points."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation_matrix.T + self.t

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation_matrix.T

    def inverse(self) -> RigidTransform:
        return inverse(self)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def is_close(self, other: RigidTransform, tol: float = IDENTITY_TOL) -> bool:
        err = pose_error(self, other)
        return err.translation_error <= tol and err.rotation_error <= tol

    def to_dict(self) -> dict:
        return {"q": [float(v) for v in self.q], "p": [float(v) for v in self.t]}

    @classmethod
    def from_dict(cls, d: dict) -> RigidTransform:
        return cls(d["q"], d["p"])

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.6g}" for v in self.q)
        t = ", ".join(f"{v:.6g}" for v in self.t)
        return f"RigidTransform(q=[{q}], t=[{t}])"


@dataclass(frozen=True)
class TimedPose:
    timestamp: float
    pose: RigidTransform


@dataclass(frozen=True)
class PoseError:
    translation_error: float  # meters
    rotation_error: float  # radians, in [0, pi]

    @property
    def translation_mm(self) -> float:
        return self.translation_error * 1e3

    @property
    def rotation_deg(self) -> float:
        return math.degrees(self.rotation_error)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Homogeneous product ``a @ b``."""
    q = quat_multiply(a.q, b.q)
    t = quat_to_matrix(a.q) @ b.t + a.t
    return RigidTransform(q, t)


def compose_all(transforms: Iterable[RigidTransform]) -> RigidTransform:
    out = RigidTransform.identity()
    for tr in transforms:
        out = compose(out, tr)
    return out


def inverse(t: RigidTransform) -> RigidTransform:
    q_inv = np.array([t.q[0], -t.q[1], -t.q[2], -t.q[3]])
    return RigidTransform(q_inv, -(quat_to_matrix(q_inv) @ t.t))


def relative_motion(earlier: TimedPose, later: TimedPose) -> RigidTransform:
    """Motion between two samples of one stream: ``T(t_j) @ T(t_i)^-1``."""
    if not later.timestamp > earlier.timestamp:
        raise NonMonotonicTimestamps(
            f"later timestamp {later.timestamp} does not follow {earlier.timestamp}"
        )
    return compose(later.pose, inverse(earlier.pose))


def rotation_distance(a: RigidTransform, b: RigidTransform) -> float:
    """Geodesic angle between the rotations of ``a`` and ``b``.

    Chord form: exactly zero for equal quaternions and well conditioned near 0 and pi.
    """
    qa = np.asarray(a.q)
    qb = np.asarray(b.q) if float(qa @ b.q) >= 0.0 else -np.asarray(b.q)
    return 4.0 * math.atan2(float(np.linalg.norm(qa - qb)), float(np.linalg.norm(qa + qb)))


def pose_error(estimate: RigidTransform, truth: RigidTransform) -> PoseError:
    return PoseError(
        float(np.linalg.norm(estimate.t - truth.t)),
        rotation_distance(estimate, truth),
    )


def check_monotonic(stream: Sequence[TimedPose]) -> None:
    for prev, cur in zip(stream, stream[1:]):
        if not cur.timestamp > prev.timestamp:
            raise NonMonotonicTimestamps(
                f"timestamp {cur.timestamp} does not follow {prev.timestamp}"
            )

"""Synthetic neonatal-head template and head scenes with ground truth."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..geometry import RigidTransform
from ..registration.cloud import PointCloud, RegionOfInterest, estimate_normals, orient_normals_outward

# Semi-axes of the 120 x 100 x 90 mm ellipsoid (x: face direction, z: crown).
HEAD_SEMI_AXES = (0.060, 0.050, 0.045)

# (direction, amplitude m, angular width rad). Only the left/right mirror
# symmetry of a real head remains, and a mirror is not a rigid motion.
_BUMPS = (
    ((1.0, 0.0, -0.1), 0.012, 0.18),  # nose
    ((0.8, 0.0, -0.6), 0.008, 0.25),  # chin
    ((0.0, 1.0, -0.05), 0.008, 0.20),  # ears
    ((0.0, -1.0, -0.05), 0.008, 0.20),
    ((-1.0, 0.0, 0.3), 0.010, 0.60),  # occiput
    ((0.0, 0.0, -1.0), -0.010, 0.50),  # neck
)


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def head_template(n_points: int = 20000, neighbors: int = 30) -> PointCloud:
    """Dense head-like cloud centered near the origin, with outward normals."""
    dirs = _fibonacci_sphere(n_points)
    a, b, c = HEAD_SEMI_AXES
    radius = 1.0 / np.sqrt((dirs[:, 0] / a) ** 2 + (dirs[:, 1] / b) ** 2 + (dirs[:, 2] / c) ** 2)
    for direction, amplitude, width in _BUMPS:
        d = np.asarray(direction) / np.linalg.norm(direction)
        ang = np.arccos(np.clip(dirs @ d, -1.0, 1.0))
        radius = radius + amplitude * np.exp(-0.5 * (ang / width) ** 2)
    points = dirs * radius[:, None]
    cloud = estimate_normals(PointCloud(points), neighbors)
    return orient_normals_outward(cloud, center=np.zeros(3))


def visible_part(cloud: PointCloud, visibility: float, camera=(0.0, 0.0, 0.0)) -> PointCloud:
    """Keep the ``visibility`` fraction of points whose normals face the camera most."""
    if not 0.0 < visibility <= 1.0:
        raise ValueError("visibility must be in (0, 1]")
    if visibility >= 1.0:
        return cloud
    view = np.asarray(camera, dtype=float) - cloud.points
    view /= np.linalg.norm(view, axis=1, keepdims=True)
    score = np.einsum("ij,ij->i", cloud.normals, view)
    keep = np.sort(np.argsort(-score, kind="stable")[: int(round(visibility * len(cloud)))])
    return cloud.select(keep)


def background_plane(center, normal, size: float, spacing: float) -> np.ndarray:
    normal = np.array(normal, dtype=float)
    normal /= np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    g = np.arange(-size / 2, size / 2 + 1e-12, spacing)
    gu, gv = np.meshgrid(g, g, indexing="ij")
    return np.asarray(center) + gu.reshape(-1, 1) * u + gv.reshape(-1, 1) * v


def default_roi(center_pose: RigidTransform, size: float = 0.3) -> RegionOfInterest:
    h = size / 2.0
    return RegionOfInterest(center_pose, (h, h, h))


def gen_head_scene(
    template: PointCloud,
    t_true: RigidTransform,
    *,
    visibility: float = 0.6,
    cloud_sigma: float = 0.001,
    clutter: bool = False,
    include_head: bool = True,
    roi: Optional[RegionOfInterest] = None,
    rng: Optional[np.random.Generator] = None,
) -> PointCloud:
    """Scene cloud (no normals) in the camera frame, camera at the origin.

    Clutter is a background plane 0.25 m behind the head plus a scattered box
    of points, all removed from inside ``roi`` when one is given.
    """
    rng = rng or np.random.default_rng(0)
    parts = []
    if include_head:
        parts.append(visible_part(template.transformed(t_true), visibility).points)
    if clutter:
        behind = t_true.t + 0.25 * t_true.t / np.linalg.norm(t_true.t)
        clutter_pts = np.vstack([
            background_plane(behind, t_true.t, 0.8, 0.004),
            t_true.t + rng.uniform(-0.4, 0.4, size=(3000, 3)),
        ])
        if roi is not None:
            clutter_pts = clutter_pts[~roi.contains(clutter_pts)]
        parts.append(clutter_pts)
    points = np.vstack(parts) if parts else np.zeros((0, 3))
    if cloud_sigma > 0:
        points = points + rng.normal(scale=cloud_sigma, size=points.shape)
    return PointCloud(points)

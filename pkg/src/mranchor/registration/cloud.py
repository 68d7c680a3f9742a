from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..errors import TooSparse
from ..geometry import RigidTransform, inverse


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``(N, 3)`` points in meters with optional unit normals, one per point."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ValueError("normals must align one-per-point")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must be unit length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def transformed(self, t: RigidTransform) -> PointCloud:
        normals = None if self.normals is None else t.rotate(self.normals)
        return PointCloud(t.apply(self.points), normals)

    def select(self, mask_or_index: np.ndarray) -> PointCloud:
        normals = None if self.normals is None else self.normals[mask_or_index]
        return PointCloud(self.points[mask_or_index], normals)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def diameter(self) -> float:
        """Diagonal of the axis-aligned bounding box."""
        if len(self.points) == 0:
            return 0.0
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))

    @staticmethod
    def concatenate(clouds: list[PointCloud]) -> PointCloud:
        pts = np.vstack([c.points for c in clouds])
        if all(c.has_normals for c in clouds):
            return PointCloud(pts, np.vstack([c.normals for c in clouds]))
        return PointCloud(pts)


@dataclass(frozen=True)
class RegionOfInterest:
    """Oriented box: ``center`` is the box pose, ``half_extents`` its half side lengths."""

    center: RigidTransform
    half_extents: tuple[float, float, float]

    def __post_init__(self) -> None:
        he = tuple(float(v) for v in self.half_extents)
        if len(he) != 3 or min(he) <= 0:
            raise ValueError("half_extents must be three positive lengths")
        object.__setattr__(self, "half_extents", he)

    def contains(self, points: np.ndarray) -> np.ndarray:
        local = inverse(self.center).apply(np.atleast_2d(points))
        return np.all(np.abs(local) <= np.array(self.half_extents), axis=1)

    def transformed(self, y: RigidTransform) -> RegionOfInterest:
        return RegionOfInterest(y @ self.center, self.half_extents)

    def to_dict(self) -> dict:
        return {"center": self.center.to_dict(), "half_extents": list(self.half_extents)}

    @classmethod
    def from_dict(cls, d: dict) -> RegionOfInterest:
        return cls(RigidTransform.from_dict(d["center"]), tuple(d["half_extents"]))


def crop_roi(cloud: PointCloud, roi: RegionOfInterest) -> PointCloud:
    if len(cloud) == 0:
        return cloud
    return cloud.select(roi.contains(cloud.points))


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """Replace the points of each occupied voxel by their centroid.

    Output order follows the lexicographic order of voxel indices, so it is
    independent of input order.
    """
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inv, cloud.points)
    points = sums / counts[:, None]
    normals = None
    if cloud.normals is not None:
        nsum = np.zeros((len(counts), 3))
        np.add.at(nsum, inv, cloud.normals)
        norm = np.linalg.norm(nsum, axis=1, keepdims=True)
        # Opposing normals in one voxel: fall back to the first member's normal.
        first = np.zeros(len(counts), dtype=np.int64)
        first[inv[::-1]] = np.arange(len(inv))[::-1]
        degenerate = norm[:, 0] < 1e-9
        norm[degenerate] = 1.0
        normals = nsum / norm
        normals[degenerate] = cloud.normals[first[degenerate]]
    return PointCloud(points, normals)


def estimate_normals(cloud: PointCloud, neighbors: int = 30, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """PCA normals over the ``neighbors`` nearest points, oriented toward ``viewpoint``."""
    if neighbors < 3:
        raise ValueError("neighbors must be at least 3")
    n = len(cloud)
    if n < neighbors:
        raise TooSparse(f"cloud has {n} points, fewer than {neighbors} neighbors")
    pts = cloud.points
    _, idx = cKDTree(pts).query(pts, k=neighbors)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    to_view = np.asarray(viewpoint, dtype=float) - pts
    flip = np.einsum("ij,ij->i", normals, to_view) < 0.0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals)


def orient_normals_outward(cloud: PointCloud, center=None) -> PointCloud:
    """Flip normals to point away from ``center`` (default: the centroid)."""
    if cloud.normals is None:
        raise ValueError("cloud has no normals")
    c = cloud.centroid() if center is None else np.asarray(center, dtype=float)
    normals = cloud.normals.copy()
    flip = np.einsum("ij,ij->i", normals, cloud.points - c) < 0.0
    normals[flip] *= -1.0
    return PointCloud(cloud.points, normals)

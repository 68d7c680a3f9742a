from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..geometry import RigidTransform
from .cloud import PointCloud


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform  # maps source into the target frame
    fitness: float
    inlier_rmse: float
    iterations: int
    converged: bool
    correspondences: int = 0
    objective_history: tuple[float, ...] = field(default=(), repr=False)
    coarse: Optional["RegistrationResult"] = field(default=None, repr=False)


def evaluate_alignment(
    source: PointCloud, target: PointCloud, transform: RigidTransform, max_distance: float,
    tree: Optional[cKDTree] = None,
) -> tuple[float, float]:
    """Fitness (inlier fraction of source) and RMSE of inlier nearest-neighbor distances."""
    if len(source) == 0 or len(target) == 0:
        return 0.0, 0.0
    tree = tree or cKDTree(target.points)
    d, _ = tree.query(transform.apply(source.points), k=1, distance_upper_bound=max_distance)
    inl = np.isfinite(d)
    if not inl.any():
        return 0.0, 0.0
    return float(inl.mean()), float(np.sqrt(np.mean(d[inl] ** 2)))

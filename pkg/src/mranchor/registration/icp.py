from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import NoCorrespondences
from ..geometry import RigidTransform
from .cloud import PointCloud
from .results import RegistrationResult

MIN_CORRESPONDENCES = 6
MAX_BACKTRACK = 5


@dataclass(frozen=True)
class IcpParams:
    max_distance: float = 0.006
    max_iterations: int = 50
    relative_fitness: float = 1e-6
    relative_rmse: float = 1e-6


def _correspond(tree: cKDTree, moved: np.ndarray, max_distance: float):
    d, idx = tree.query(moved, k=1, distance_upper_bound=max_distance)
    inl = np.isfinite(d)
    return inl, idx, d


def _objective(moved, target, inl, idx, max_distance) -> float:
    """Truncated point-to-plane cost: squared plane distance for inliers, cap for the rest."""
    n = target.normals[idx[inl]]
    res = np.einsum("ij,ij->i", moved[inl] - target.points[idx[inl]], n)
    return float((np.sum(res**2) + (len(moved) - inl.sum()) * max_distance**2) / len(moved))


def refine_icp(
    source: PointCloud, target: PointCloud, init: RigidTransform, params: IcpParams = IcpParams()
) -> RegistrationResult:
    """Point-to-plane ICP from ``init``.

    A step is accepted only if it does not raise the truncated point-to-plane
    cost (halving it up to ``MAX_BACKTRACK`` times otherwise), so the recorded
    objective history is non-increasing. Iteration stops at ``max_iterations``,
    when no acceptable step is found, or when both fitness and inlier RMSE
    change by less than the relative tolerances.
    """
    if target.normals is None:
        raise ValueError("point-to-plane ICP needs target normals")
    tree = cKDTree(target.points)
    md = params.max_distance
    src = source.points

    transform = init
    moved = transform.apply(src)
    inl, idx, d = _correspond(tree, moved, md)
    if inl.sum() < MIN_CORRESPONDENCES:
        raise NoCorrespondences(f"{int(inl.sum())} correspondences within {md} m at init")
    fitness = float(inl.mean())
    rmse = float(np.sqrt(np.mean(d[inl] ** 2)))
    history = [_objective(moved, target, inl, idx, md)]
    converged = rmse < 1e-12
    iterations = 0

    while not converged and iterations < params.max_iterations:
        p = moved[inl]
        q = target.points[idx[inl]]
        n = target.normals[idx[inl]]
        a = np.hstack([np.cross(p, n), n])
        b = np.einsum("ij,ij->i", q - p, n)
        xi, *_ = np.linalg.lstsq(a, b, rcond=None)
        # Backtrack on the linearized step until the truncated cost does not increase.
        for _ in range(MAX_BACKTRACK):
            candidate = RigidTransform.from_rotvec(xi[:3], xi[3:]) @ transform
            c_moved = candidate.apply(src)
            c_inl, c_idx, c_d = _correspond(tree, c_moved, md)
            obj = (_objective(c_moved, target, c_inl, c_idx, md)
                   if c_inl.sum() >= MIN_CORRESPONDENCES else np.inf)
            if obj <= history[-1]:
                break
            xi = 0.5 * xi
        else:
            converged = True  # no descent step left at this correspondence radius
            break
        iterations += 1
        transform, moved, inl, idx = candidate, c_moved, c_inl, c_idx
        history.append(obj)
        new_fitness = float(inl.mean())
        new_rmse = float(np.sqrt(np.mean(c_d[inl] ** 2)))
        df = abs(new_fitness - fitness) / max(fitness, 1e-12)
        dr = abs(new_rmse - rmse) / max(rmse, 1e-12)
        fitness, rmse = new_fitness, new_rmse
        if (df < params.relative_fitness and dr < params.relative_rmse) or rmse < 1e-12:
            converged = True

    return RegistrationResult(
        transform, fitness, rmse, iterations, converged, int(inl.sum()), tuple(history)
    )

"""Two-stage neonatal head localization inside the delivery ROI.

The coarse stage runs feature-based global registration on a sparse grid
(``feature_voxel``) and keeps several pose hypotheses. Each hypothesis is then
refined by a short point-to-plane ICP run on the finer ``voxel`` grid at the
first radius of ``icp_schedule``; the one with the lowest truncated cost is
then run to convergence there and refined further at the remaining radii.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyROI, NoCorrespondences, TooSparse
from ..geometry import RigidTransform
from .cloud import (
    PointCloud,
    RegionOfInterest,
    crop_roi,
    estimate_normals,
    orient_normals_outward,
    voxel_downsample,
)
from .features import compute_fpfh
from .fgr import FgrParams, fgr_candidates
from .icp import IcpParams, refine_icp
from .results import RegistrationResult, evaluate_alignment


@dataclass(frozen=True)
class HeadLocatorParams:
    voxel: float = 0.003
    normal_neighbors: int = 30
    feature_voxel: float = 0.005
    feature_normal_neighbors: int = 60
    icp_schedule: tuple[float, ...] = (0.006, 0.003, 0.002)
    icp_iterations: int = 50
    screen_iterations: int = 10  # per-hypothesis budget before the best is picked
    fitness_floor: float = 0.3
    viewpoint: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0
    fgr: FgrParams = field(default=None)  # FgrParams(seed=seed) when None

    def __post_init__(self) -> None:
        if self.fgr is None:
            object.__setattr__(self, "fgr", FgrParams(seed=self.seed))
        if not self.icp_schedule:
            raise ValueError("icp_schedule needs at least one distance")

    @property
    def fitness_distance(self) -> float:
        return self.icp_schedule[0]


@dataclass(frozen=True)
class PreparedTemplate:
    """Template resampled at both grids, with features; reusable across calls."""

    fine: PointCloud
    coarse: PointCloud
    features: np.ndarray
    voxel: float
    feature_voxel: float


def _outward(cloud: PointCloud, voxel: float, k: int) -> PointCloud:
    down = voxel_downsample(PointCloud(cloud.points), voxel)
    return orient_normals_outward(estimate_normals(down, k))


def prepare_template(template: PointCloud, params: HeadLocatorParams = HeadLocatorParams()) -> PreparedTemplate:
    if len(template) == 0:
        raise ValueError("template is empty")
    coarse = _outward(template, params.feature_voxel, params.feature_normal_neighbors)
    return PreparedTemplate(
        fine=_outward(template, params.voxel, params.normal_neighbors),
        coarse=coarse,
        features=compute_fpfh(coarse, params.fgr.feature_radius, params.fgr.feature_max_nn),
        voxel=params.voxel,
        feature_voxel=params.feature_voxel,
    )


def prepare_scene(scene: PointCloud, voxel: float, neighbors: int, viewpoint) -> PointCloud:
    return estimate_normals(voxel_downsample(PointCloud(scene.points), voxel), neighbors, viewpoint)


def _failure(iterations: int = 0, coarse=None) -> RegistrationResult:
    return RegistrationResult(RigidTransform.identity(), 0.0, 0.0, iterations, False, coarse=coarse)


def refine_schedule(
    source: PointCloud, target: PointCloud, init: RigidTransform, schedule, max_iterations: int = 50
) -> RegistrationResult:
    """ICP passes with shrinking correspondence radius; histories are concatenated per pass."""
    result = None
    transform = init
    history: list[float] = []
    iterations = 0
    for distance in schedule:
        result = refine_icp(source, target, transform, IcpParams(distance, max_iterations))
        transform = result.transform
        history.extend(result.objective_history)
        iterations += result.iterations
    return RegistrationResult(
        transform, result.fitness, result.inlier_rmse, iterations, result.converged,
        result.correspondences, tuple(history),
    )


def locate_head(
    template: PointCloud | PreparedTemplate,
    scene: PointCloud,
    roi: RegionOfInterest,
    params: HeadLocatorParams = HeadLocatorParams(),
) -> RegistrationResult:
    """Template pose in the scene frame (``T_b``).

    ``converged`` is false when the refined fitness (at the first ICP radius)
    falls below ``params.fitness_floor`` or when either stage finds no usable
    correspondences. ``coarse`` holds the global-stage estimate that the
    returned pose was refined from.
    """
    if isinstance(template, PreparedTemplate):
        if template.voxel != params.voxel or template.feature_voxel != params.feature_voxel:
            raise ValueError("template was prepared with different voxel sizes")
        prepared = template
    else:
        prepared = prepare_template(template, params)
    cropped = crop_roi(scene, roi)
    if len(cropped) == 0:
        raise EmptyROI("no scene points inside the ROI")

    try:
        tgt_coarse = prepare_scene(cropped, params.feature_voxel, params.feature_normal_neighbors,
                                   params.viewpoint)
        tgt_fine = prepare_scene(cropped, params.voxel, params.normal_neighbors, params.viewpoint)
    except TooSparse:
        return _failure()
    try:
        candidates = fgr_candidates(prepared.coarse, tgt_coarse, params.fgr, prepared.features)
    except NoCorrespondences:
        return _failure()

    # Every hypothesis gets a short pass at the widest radius; only the best continues.
    first = params.icp_schedule[:1]
    best, best_coarse = None, None
    for cand in candidates:
        try:
            fine = refine_schedule(prepared.fine, tgt_fine, cand.transform, first,
                                   min(params.screen_iterations, params.icp_iterations))
        except NoCorrespondences:
            continue
        if best is None or fine.objective_history[-1] < best.objective_history[-1]:
            best, best_coarse = fine, cand
    if best is None:
        return _failure(coarse=candidates[0])
    remaining = params.icp_schedule if not best.converged else params.icp_schedule[1:]
    if remaining:
        rest = refine_schedule(prepared.fine, tgt_fine, best.transform, remaining, params.icp_iterations)
        best = RegistrationResult(
            rest.transform, rest.fitness, rest.inlier_rmse, best.iterations + rest.iterations,
            rest.converged, rest.correspondences, best.objective_history + rest.objective_history,
        )

    fitness, rmse = evaluate_alignment(prepared.fine, tgt_fine, best.transform, params.fitness_distance)
    return RegistrationResult(
        best.transform,
        fitness,
        rmse,
        best.iterations,
        fitness >= params.fitness_floor,
        best.correspondences,
        best.objective_history,
        best_coarse,
    )

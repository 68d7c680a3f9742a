"""Feature-based global rigid registration (no initial guess).

Correspondences come from nearest neighbors in FPFH space in both directions,
filtered by a reciprocity check and a random tuple test on edge-length ratios.
The transform is then found by minimizing a scaled Geman-McClure robust cost
with graduated non-convexity: the scale ``mu`` starts at the normalized cloud
extent squared and is divided by ``division_factor`` every four iterations
until it reaches the squared maximum correspondence distance. Each iteration
is one Gauss-Newton step on the line-process-weighted least-squares problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import NoCorrespondences
from ..geometry import RigidTransform
from .cloud import PointCloud
from .features import compute_fpfh
from .results import RegistrationResult, evaluate_alignment

MIN_CORRESPONDENCES = 4


@dataclass(frozen=True)
class FgrParams:
    feature_radius: float = 0.04
    feature_max_nn: int = 300
    max_correspondence_distance: float = 0.015
    tuple_scale: float = 0.9
    max_tuple_count: int = 1000
    iterations: int = 64
    division_factor: float = 1.4
    reciprocal: bool = True
    hypotheses: int = 5
    verify_distance: float = 0.006  # inlier radius used to rank hypotheses
    seed: int = 0


def match_features(src_feat: np.ndarray, tgt_feat: np.ndarray, reciprocal: bool = True) -> np.ndarray:
    """``(K, 2)`` array of (source index, target index) feature matches."""
    _, s2t = cKDTree(tgt_feat).query(src_feat, k=1)
    _, t2s = cKDTree(src_feat).query(tgt_feat, k=1)
    if reciprocal:
        src_idx = np.arange(len(src_feat))
        mutual = t2s[s2t] == src_idx
        pairs = np.column_stack([src_idx[mutual], s2t[mutual]])
        if len(pairs) >= MIN_CORRESPONDENCES * 3:
            return pairs
    forward = np.column_stack([np.arange(len(src_feat)), s2t])
    backward = np.column_stack([t2s, np.arange(len(tgt_feat))])
    return np.unique(np.vstack([forward, backward]), axis=0)


def tuple_test(
    src: np.ndarray, tgt: np.ndarray, corr: np.ndarray, scale: float, max_tuples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Keep correspondences that appear in random triples with consistent edge lengths."""
    m = len(corr)
    if m < 3:
        return corr[:0]
    trials = 100 * m
    picks = rng.integers(0, m, size=(trials, 3))
    ps = src[corr[picks, 0]]
    pt = tgt[corr[picks, 1]]
    ok = np.ones(trials, dtype=bool)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        ls = np.linalg.norm(ps[:, a] - ps[:, b], axis=1)
        lt = np.linalg.norm(pt[:, a] - pt[:, b], axis=1)
        ok &= (ls * scale < lt) & (lt < ls / scale)
    accepted = picks[ok][:max_tuples]
    return corr[accepted.reshape(-1)]


def _exp_se3(xi: np.ndarray) -> RigidTransform:
    return RigidTransform.from_rotvec(xi[:3], xi[3:])


def optimize_pairwise(
    src: np.ndarray, tgt: np.ndarray, max_corr: float, iterations: int, division_factor: float,
    start_scale: float = 1.0,
) -> RigidTransform:
    """Robust alignment of matched rows ``src[k] -> tgt[k]`` (normalized coordinates)."""
    mu = start_scale
    trans = RigidTransform.identity()
    moved = src.copy()
    for it in range(iterations):
        if it % 4 == 0 and mu > max_corr**2:
            mu /= division_factor
        r = tgt - moved
        s = (mu / (np.einsum("ij,ij->i", r, r) + mu)) ** 2
        # Residual r = p - (q + w x q + dt); d r / d(w, dt) = [[q]x, -I].
        j = np.zeros((len(moved), 3, 6))
        qx, qy, qz = moved[:, 0], moved[:, 1], moved[:, 2]
        j[:, 0, 1], j[:, 0, 2] = -qz, qy
        j[:, 1, 0], j[:, 1, 2] = qz, -qx
        j[:, 2, 0], j[:, 2, 1] = -qy, qx
        j[:, 0, 3] = j[:, 1, 4] = j[:, 2, 5] = -1.0
        jtj = np.einsum("n,nki,nkj->ij", s, j, j)
        jtr = np.einsum("n,nki,nk->i", s, j, r)
        try:
            xi = -np.linalg.solve(jtj, jtr)
        except np.linalg.LinAlgError:
            break
        delta = _exp_se3(xi)
        trans = delta @ trans
        moved = delta.apply(moved)
    return trans


def _to_world(t_n: RigidTransform, mean_s, mean_t, scale) -> RigidTransform:
    r = t_n.rotation_matrix
    return RigidTransform(t_n.q, mean_t + scale * t_n.t - r @ mean_s)


def extract_hypotheses(
    src_pts: np.ndarray, tgt_pts: np.ndarray, corr: np.ndarray, params: FgrParams
) -> list[tuple[RigidTransform, int]]:
    """Robustly fit a transform, drop its inliers, refit on the rest; repeat.

    Symmetric shapes produce correspondence clusters consistent with a wrong
    (e.g. 180-degree flipped) pose; sequential extraction surfaces each cluster
    as a separate candidate. Returns ``(transform, inlier count)`` pairs.
    """
    mean_s = src_pts.mean(axis=0)
    mean_t = tgt_pts.mean(axis=0)
    scale = max(
        np.linalg.norm(src_pts - mean_s, axis=1).max(),
        np.linalg.norm(tgt_pts - mean_t, axis=1).max(),
    )
    out = []
    remaining = corr
    for _ in range(max(1, params.hypotheses)):
        if len(np.unique(remaining, axis=0)) < MIN_CORRESPONDENCES:
            break
        src_n = (src_pts[remaining[:, 0]] - mean_s) / scale
        tgt_n = (tgt_pts[remaining[:, 1]] - mean_t) / scale
        t_n = optimize_pairwise(src_n, tgt_n, params.max_correspondence_distance / scale,
                                params.iterations, params.division_factor)
        transform = _to_world(t_n, mean_s, mean_t, scale)
        resid = np.linalg.norm(
            transform.apply(src_pts[remaining[:, 0]]) - tgt_pts[remaining[:, 1]], axis=1)
        inliers = resid < params.max_correspondence_distance
        out.append((transform, int(inliers.sum())))
        remaining = remaining[~inliers]
    return out


def fgr_candidates(
    source: PointCloud,
    target: PointCloud,
    params: FgrParams = FgrParams(),
    source_features: np.ndarray | None = None,
    target_features: np.ndarray | None = None,
) -> list[RegistrationResult]:
    """All robustly fitted pose hypotheses, strongest correspondence cluster first."""
    if source.normals is None or target.normals is None:
        raise ValueError("coarse registration needs normals on both clouds")
    if len(source) == 0 or len(target) == 0:
        raise NoCorrespondences("empty cloud")
    fs = source_features if source_features is not None else compute_fpfh(
        source, params.feature_radius, params.feature_max_nn)
    ft = target_features if target_features is not None else compute_fpfh(
        target, params.feature_radius, params.feature_max_nn)

    corr = match_features(fs, ft, params.reciprocal)
    rng = np.random.default_rng(params.seed)
    corr = tuple_test(source.points, target.points, corr, params.tuple_scale,
                      params.max_tuple_count, rng)
    if len(np.unique(corr, axis=0)) < MIN_CORRESPONDENCES:
        raise NoCorrespondences(f"only {len(corr)} consistent feature matches")

    results = []
    for transform, n_inl in extract_hypotheses(source.points, target.points, corr, params):
        fitness, rmse = evaluate_alignment(
            source, target, transform, params.max_correspondence_distance)
        results.append(RegistrationResult(transform, fitness, rmse, params.iterations, True, n_inl))
    return results


def coarse_register(
    source: PointCloud,
    target: PointCloud,
    params: FgrParams = FgrParams(),
    source_features: np.ndarray | None = None,
    target_features: np.ndarray | None = None,
) -> RegistrationResult:
    """Global alignment of ``source`` onto ``target``.

    Candidates are ranked by inlier fraction at ``verify_distance`` (ties by RMSE);
    a tight radius rewards the hypothesis that lands on the surface rather than
    one that merely overlaps it.
    """
    candidates = fgr_candidates(source, target, params, source_features, target_features)
    tree = cKDTree(target.points)
    scores = []
    for c in candidates:
        fitness, rmse = evaluate_alignment(source, target, c.transform, params.verify_distance, tree)
        scores.append((-fitness, rmse))
    return candidates[min(range(len(candidates)), key=scores.__getitem__)]

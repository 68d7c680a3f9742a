"""Fast Point Feature Histograms (33 bins: three 11-bin angle histograms)."""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .cloud import PointCloud

BINS = 11


def _neighbor_pairs(points: np.ndarray, radius: float, max_nn: int):
    k = min(max_nn + 1, len(points))
    dist, idx = cKDTree(points).query(points, k=k, distance_upper_bound=radius)
    dist = dist.reshape(len(points), k)
    idx = idx.reshape(len(points), k)
    rows = np.repeat(np.arange(len(points)), k)
    cols = idx.reshape(-1)
    d = dist.reshape(-1)
    keep = np.isfinite(d) & (cols != rows) & (d > 0.0)
    return rows[keep], cols[keep], d[keep]


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Row-wise cross product; np.cross is several times slower on (N, 3) inputs.
    return np.column_stack([
        a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
        a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
        a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0],
    ])


def _pair_features(p1, n1, p2, n2):
    """Darboux-frame angles (theta, alpha, phi) for point pairs, vectorized."""
    dp = p2 - p1
    dist = np.linalg.norm(dp, axis=1)
    dpn = dp / dist[:, None]
    a1 = np.einsum("ij,ij->i", n1, dpn)
    a2 = np.einsum("ij,ij->i", n2, dpn)
    # Use as source the point whose normal is closer to the connecting line.
    swap = np.abs(a1) < np.abs(a2)
    u = np.where(swap[:, None], n2, n1)
    nt = np.where(swap[:, None], n1, n2)
    dpn = np.where(swap[:, None], -dpn, dpn)
    phi = np.where(swap, -a2, a1)
    v = _cross(dpn, u)
    vn = np.linalg.norm(v, axis=1)
    ok = vn > 0
    v[ok] /= vn[ok, None]
    w = _cross(u, v)
    alpha = np.einsum("ij,ij->i", v, nt)
    theta = np.arctan2(np.einsum("ij,ij->i", w, nt), np.einsum("ij,ij->i", u, nt))
    theta[~ok] = 0.0
    alpha[~ok] = 0.0
    phi[~ok] = 0.0
    return theta, alpha, phi


def _bin(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    b = np.floor(BINS * (values - lo) / (hi - lo)).astype(np.int64)
    return np.clip(b, 0, BINS - 1)


def compute_fpfh(cloud: PointCloud, radius: float, max_nn: int = 100) -> np.ndarray:
    """``(N, 33)`` FPFH descriptors; the cloud must carry normals."""
    if cloud.normals is None:
        raise ValueError("FPFH needs normals")
    pts, nrm = cloud.points, cloud.normals
    n = len(pts)
    rows, cols, dist = _neighbor_pairs(pts, radius, max_nn)
    theta, alpha, phi = _pair_features(pts[rows], nrm[rows], pts[cols], nrm[cols])

    counts = np.bincount(rows, minlength=n).astype(float)
    incr = np.where(counts[rows] > 0, 100.0 / np.maximum(counts[rows], 1), 0.0)
    spfh = np.zeros((n, 3 * BINS))
    for block, (vals, lo, hi) in enumerate(
        ((theta, -np.pi, np.pi), (alpha, -1.0, 1.0), (phi, -1.0, 1.0))
    ):
        flat = rows * (3 * BINS) + block * BINS + _bin(vals, lo, hi)
        spfh += np.bincount(flat, weights=incr, minlength=n * 3 * BINS).reshape(n, 3 * BINS)

    weights = sparse.csr_matrix((1.0 / dist**2, (rows, cols)), shape=(n, n))
    neighbor_sum = np.asarray(weights @ spfh)
    for block in range(3):
        sl = slice(block * BINS, (block + 1) * BINS)
        total = neighbor_sum[:, sl].sum(axis=1, keepdims=True)
        scale = np.divide(100.0, total, out=np.zeros_like(total), where=total != 0)
        neighbor_sum[:, sl] *= scale
    return neighbor_sum + spfh

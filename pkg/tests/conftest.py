"""Shared independent oracles: plain 4x4 matrix algebra, no library transform code."""

from __future__ import annotations

import math

import numpy as np
import pytest

from mranchor.geometry import RigidTransform

# Lines collected by tests/test_acceptance.py, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def rodrigues(rotvec) -> np.ndarray:
    """Rotation matrix from a rotation vector via the Rodrigues formula."""
    v = np.asarray(rotvec, dtype=float)
    theta = float(np.linalg.norm(v))
    if theta == 0.0:
        return np.eye(3)
    k = v / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(theta) * kx + (1.0 - math.cos(theta)) * kx @ kx


def hom(r: np.ndarray, t) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = t
    return m


def matrix_angle(r: np.ndarray) -> float:
    """Rotation angle of a 3x3 rotation matrix, atan2 form (stable near 0 and pi)."""
    s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    c = 0.5 * (np.trace(r) - 1.0)
    return math.atan2(s, c)


def random_pair(rng: np.random.Generator, max_angle: float = math.pi, scale: float = 1.0):
    """A RigidTransform and its independently built homogeneous matrix."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    rotvec = axis * rng.uniform(0.0, max_angle)
    t = rng.uniform(-scale, scale, 3)
    return RigidTransform.from_rotvec(rotvec, t), hom(rodrigues(rotvec), t)


def assert_matrix_close(tr: RigidTransform, m: np.ndarray, tol: float = 1e-9) -> None:
    assert np.max(np.abs(tr.as_matrix() - m)) <= tol


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

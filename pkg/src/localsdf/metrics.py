"""Surface-sample metrics: Chamfer distance, normal consistency, F-score.

Conventions: CD is the mean of unsquared nearest-neighbor distances in
each direction, averaged over both directions. NC averages the absolute
dot product of nearest-neighbor normals, symmetrically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadNormals, DegenerateMesh, EmptySet
from .pointcloud import SpatialIndex

DEFAULT_THRESHOLD = 0.005
DEFAULT_SAMPLES = 100_000


@dataclass
class MetricReport:
    cd: float
    nc: float
    fscore: float
    threshold: float
    sample_count: int

    HEADER = ("cd", "nc", "fscore", "threshold", "sample_count")

    def as_row(self):
        return [self.cd, self.nc, self.fscore, self.threshold, self.sample_count]


def sample_mesh_surface(vertices, triangles, count: int, seed: int = 0):
    """Area-uniform surface samples and their (unit) face normals."""
    V = np.asarray(vertices, dtype=np.float64)
    T = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(T) == 0:
        raise DegenerateMesh("mesh has no triangles")
    a, b, c = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    cross = np.cross(b - a, c - a)
    area2 = np.sqrt((cross ** 2).sum(axis=1))
    if not np.any(area2 > 0):
        raise DegenerateMesh("mesh has zero total area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(T), size=count, p=area2 / area2.sum())
    u, v = rng.random(count), rng.random(count)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    pts = a[tri] + u[:, None] * (b[tri] - a[tri]) + v[:, None] * (c[tri] - a[tri])
    normals = cross[tri] / area2[tri, None]
    return pts, normals


def _nn(src, dst):
    """Nearest point of ``dst`` for each point of ``src``: (distance, index)."""
    return SpatialIndex(dst).nearest(src)


def _check(A, B):
    A = np.asarray(A, dtype=np.float64).reshape(-1, 3)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 3)
    if len(A) == 0 or len(B) == 0:
        raise EmptySet("metric inputs must be nonempty")
    return A, B


def chamfer_distance(A, B) -> float:
    A, B = _check(A, B)
    return 0.5 * (float(_nn(A, B)[0].mean()) + float(_nn(B, A)[0].mean()))


def normal_consistency(A, nA, B, nB) -> float:
    A, B = _check(A, B)
    nA = np.asarray(nA, dtype=np.float64).reshape(-1, 3)
    nB = np.asarray(nB, dtype=np.float64).reshape(-1, 3)
    for n in (nA, nB):
        if np.any(np.abs(np.sqrt((n ** 2).sum(axis=1)) - 1) > 1e-6):
            raise BadNormals("normals must be unit length")
    _, ia = _nn(A, B)
    _, ib = _nn(B, A)
    ab = np.abs((nA * nB[ia]).sum(axis=1)).mean()
    ba = np.abs((nB * nA[ib]).sum(axis=1)).mean()
    return 0.5 * float(ab + ba)


def f_score(A, B, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Harmonic mean of precision (A near B) and recall (B near A)."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    A, B = _check(A, B)
    precision = float((_nn(A, B)[0] <= threshold).mean())
    recall = float((_nn(B, A)[0] <= threshold).mean())
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def compare_samples(A, nA, B, nB, threshold: float = DEFAULT_THRESHOLD) -> MetricReport:
    return MetricReport(chamfer_distance(A, B), normal_consistency(A, nA, B, nB),
                        f_score(A, B, threshold), threshold, len(A))


def compare_meshes(mesh_a, mesh_b, threshold: float = DEFAULT_THRESHOLD,
                   samples: int = DEFAULT_SAMPLES, seed: int = 0) -> MetricReport:
    """Metrics between two meshes given as objects with ``vertices``/``triangles``."""
    A, nA = sample_mesh_surface(mesh_a.vertices, mesh_a.triangles, samples, seed)
    B, nB = sample_mesh_surface(mesh_b.vertices, mesh_b.triangles, samples, seed)
    return compare_samples(A, nA, B, nB, threshold)

"""Point-cloud normalization, nearest-neighbor queries, FPS and synthetic shapes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import BadShapeParam, CountOutOfRange, DegenerateCloud, EmptyCloud
from .fileio import load_points  # noqa: F401  (re-exported)

SHAPES = ("sphere", "torus", "box")


def as_cloud(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        pts = pts.reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCloud("point cloud is empty")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud has non-finite coordinates")
    return pts


@dataclass(frozen=True)
class GlobalTransform:
    """Maps world coordinates to the unit-sphere frame: ``(x - offset) * scale``."""

    offset: np.ndarray
    scale: float

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) - self.offset) * self.scale

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) / self.scale + self.offset

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), 1.0)


def normalize_to_unit_sphere(points) -> tuple[np.ndarray, GlobalTransform]:
    """Center the cloud on its centroid and scale its farthest point to norm 1."""
    pts = as_cloud(points)
    if len(pts) < 2:
        raise DegenerateCloud("need at least two points to normalize")
    offset = pts.mean(axis=0)
    radius = np.sqrt(((pts - offset) ** 2).sum(axis=1)).max()
    if radius < 1e-9:
        raise DegenerateCloud(f"bounding radius {radius:.3g} is below 1e-9")
    tf = GlobalTransform(offset, 1.0 / radius)
    return tf.apply(pts), tf


class SpatialIndex:
    """Immutable nearest-neighbor index over a point cloud.

    Distances are bitwise equal to a brute-force scan; among equidistant
    points the lowest index wins.
    """

    def __init__(self, points):
        self.points = as_cloud(points)
        self.points.setflags(write=False)
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def nearest(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(distance, index)`` of the nearest cloud point per query."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(q) == 0:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        k = min(2, len(self.points))
        _, idx = self._tree.query(q, k=k)
        idx = idx.reshape(len(q), k)
        # recompute in the brute-force operation order so results match exactly
        dist = np.sqrt(((q[:, None, :] - self.points[idx]) ** 2).sum(axis=2))
        best = idx[:, 0].copy()
        d = dist[:, 0].copy()
        if k == 2:
            swap = (dist[:, 1] < d) | ((dist[:, 1] == d) & (idx[:, 1] < best))
            best[swap] = idx[swap, 1]
            d[swap] = dist[swap, 1]
            ties = np.flatnonzero(dist[:, 0] == dist[:, 1])
            for t in ties:
                # more than two equidistant points: fall back to an exact ball scan
                cand = np.asarray(self._tree.query_ball_point(q[t], d[t] * (1 + 1e-12) + 1e-300))
                cd = np.sqrt(((q[t] - self.points[cand]) ** 2).sum(axis=1))
                m = cd.min()
                best[t] = cand[cd == m].min()
                d[t] = m
        return d, best

    def distance(self, queries) -> np.ndarray:
        return self.nearest(queries)[0]

    def knn_distance(self, k: int) -> np.ndarray:
        """Distance from every cloud point to its k-th nearest other point."""
        n = len(self.points)
        k = min(k, n - 1)
        if k < 1:
            return np.zeros(n)
        dist, _ = self._tree.query(self.points, k=k + 1)
        return dist[:, k]


def nearest_distance(index: SpatialIndex, q) -> float | np.ndarray:
    """Unsigned distance from ``q`` (one point or an (m, 3) batch) to the cloud."""
    q = np.asarray(q, dtype=np.float64)
    d = index.distance(q)
    return float(d[0]) if q.ndim == 1 else d


def farthest_point_sampling(points, count: int) -> np.ndarray:
    """Greedy farthest point sampling seeded at index 0 (lowest index wins ties)."""
    pts = as_cloud(points)
    n = len(pts)
    if count < 1 or count > n:
        raise CountOutOfRange(f"count {count} outside [1, {n}]")
    picks = np.empty(count, dtype=np.int64)
    picks[0] = 0
    mind = np.sqrt(((pts - pts[0]) ** 2).sum(axis=1))
    for k in range(1, count):
        nxt = int(np.argmax(mind))  # argmax returns the first maximizer
        picks[k] = nxt
        np.minimum(mind, np.sqrt(((pts - pts[nxt]) ** 2).sum(axis=1)), out=mind)
    return picks


def _parse_params(shape: str, params) -> tuple[float, ...]:
    params = tuple(float(v) for v in np.atleast_1d(params))
    expected = {"sphere": (1,), "torus": (2,), "box": (1, 3)}
    if shape not in expected:
        raise BadShapeParam(f"unknown shape {shape!r}; choose from {SHAPES}")
    if len(params) not in expected[shape]:
        raise BadShapeParam(f"{shape} takes {expected[shape]} parameter(s), got {len(params)}")
    if not all(np.isfinite(p) and p > 0 for p in params):
        raise BadShapeParam(f"{shape} parameters must be positive, got {params}")
    if shape == "torus" and params[1] >= params[0]:
        raise BadShapeParam("torus minor radius must be smaller than the major radius")
    if shape == "box" and len(params) == 1:
        params = params * 3
    return params


def sample_synthetic(shape: str, params, n: int, noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    """Area-uniform samples on an analytic surface plus optional Gaussian noise.

    Shapes: ``sphere(r)``, ``torus(R_major, r_minor)`` around the z axis, and
    ``box(hx, hy, hz)`` given by half-extents. Noise is i.i.d. per coordinate,
    in the same units as the shape parameters.
    """
    params = _parse_params(shape, params)
    if n < 1:
        raise BadShapeParam("n must be positive")
    if noise_sigma < 0:
        raise BadShapeParam("noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    if shape == "sphere":
        v = rng.normal(size=(n, 3))
        v /= np.sqrt((v ** 2).sum(axis=1, keepdims=True))
        pts = params[0] * v
    elif shape == "torus":
        big, small = params
        u = rng.uniform(0, 2 * np.pi, n)
        # tube angle with density proportional to the area element (big + small cos v)
        v = np.empty(n)
        filled = 0
        while filled < n:
            cand = rng.uniform(0, 2 * np.pi, 2 * (n - filled))
            keep = cand[rng.uniform(0, big + small, cand.size) < big + small * np.cos(cand)]
            take = keep[: n - filled]
            v[filled:filled + take.size] = take
            filled += take.size
        ring = big + small * np.cos(v)
        pts = np.stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)], axis=1)
    else:
        h = np.array(params)
        areas = 4 * np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        axis = rng.choice(3, size=n, p=areas / areas.sum())
        side = rng.choice([-1.0, 1.0], size=n)
        pts = rng.uniform(-1, 1, size=(n, 3)) * h
        pts[np.arange(n), axis] = side * h[axis]
    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, size=pts.shape)
    return pts


def analytic_sdf(shape: str, params, q) -> np.ndarray:
    """Exact signed distance of the synthetic shapes (negative inside)."""
    params = _parse_params(shape, params)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if shape == "sphere":
        return np.sqrt((q ** 2).sum(axis=1)) - params[0]
    if shape == "torus":
        ring = np.sqrt(q[:, 0] ** 2 + q[:, 1] ** 2) - params[0]
        return np.sqrt(ring ** 2 + q[:, 2] ** 2) - params[1]
    d = np.abs(q) - np.array(params)
    outside = np.sqrt((np.maximum(d, 0) ** 2).sum(axis=1))
    return outside + np.minimum(d.max(axis=1), 0)

"""Overlapping cubic subfields: placement, membership, local frames and query sampling.

A subfield is the axis-aligned cube ``{x : max_k |x_k - c_k| <= a}``; ``a``
is a half-extent. Only ``max(a, 0)`` is used geometrically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (AlphaTooSmall, CountOutOfRange, EmptySubfield, NonpositiveExtent,
                     NonpositiveRadius, SingularFit)
from .pointcloud import SpatialIndex, as_cloud, farthest_point_sampling
from .spherefit import fit_sphere_capped

REDRAW_ATTEMPTS = 4


@dataclass
class Subfield:
    """Read-only view of one subfield."""

    center: np.ndarray
    extent: float
    latent: np.ndarray
    sphere_center: np.ndarray
    sphere_radius: float
    sign: int
    members: np.ndarray | None = None


@dataclass
class SubfieldSet:
    """Struct-of-arrays storage for N subfields (what the optimizer updates)."""

    centers: np.ndarray          # (N, 3)
    extents: np.ndarray          # (N,)
    latents: np.ndarray          # (N, d)
    sphere_centers: np.ndarray   # (N, 3), in each subfield's normalized frame
    sphere_radii: np.ndarray     # (N,)
    signs: np.ndarray = field(default=None)  # (N,) of +1/-1

    def __post_init__(self):
        if self.signs is None:
            self.signs = np.ones(len(self.centers), dtype=np.int64)

    def __len__(self):
        return len(self.centers)

    def __getitem__(self, i) -> Subfield:
        return Subfield(self.centers[i], float(self.extents[i]), self.latents[i],
                        self.sphere_centers[i], float(self.sphere_radii[i]), int(self.signs[i]))

    @property
    def effective_extents(self) -> np.ndarray:
        return np.maximum(self.extents, 0.0)

    def copy(self) -> "SubfieldSet":
        return SubfieldSet(self.centers.copy(), self.extents.copy(), self.latents.copy(),
                           self.sphere_centers.copy(), self.sphere_radii.copy(), self.signs.copy())


def chebyshev_distance(points, centers) -> np.ndarray:
    """(n, N) matrix of ``max_k |p_k - c_k|``."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    return np.abs(points[:, None, :] - centers[None, :, :]).max(axis=2)


def membership(points, centers, extents, chunk: int = 65536) -> np.ndarray:
    """(n, N) boolean matrix: point inside cube (boundary inclusive)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    eff = np.maximum(np.asarray(extents, dtype=np.float64), 0.0)
    out = np.empty((len(points), len(eff)), dtype=bool)
    for s in range(0, len(points), chunk):
        out[s:s + chunk] = chebyshev_distance(points[s:s + chunk], centers) <= eff
    return out


def init_subfields(points, count: int, alpha: float, latent_dim: int = 0) -> SubfieldSet:
    """Place ``count`` cubes on FPS picks with half-extent ``alpha`` times the
    distance to the nearest other center, inflating uniformly if any point is
    left uncovered."""
    pts = as_cloud(points)
    if alpha < 1:
        raise AlphaTooSmall(f"alpha must be >= 1, got {alpha}")
    if count < 2 or count > len(pts):
        raise CountOutOfRange(f"subfield count {count} outside [2, {len(pts)}]")
    centers = pts[farthest_point_sampling(pts, count)].copy()
    dist = np.sqrt(((centers[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    extents = alpha * dist.min(axis=1)
    if np.any(extents <= 0):
        raise CountOutOfRange("duplicate subfield centers; cloud has too few distinct points")
    ratio = (chebyshev_distance(pts, centers) / extents).min(axis=1).max()
    if ratio > 1:
        extents = extents * ratio
        while not membership(pts, centers, extents).any(axis=1).all():
            extents = extents * (1 + 1e-12)
    return SubfieldSet(
        centers=centers, extents=extents, latents=np.zeros((count, latent_dim)),
        sphere_centers=np.zeros((count, 3)), sphere_radii=np.ones(count),
    )


def local_normalize(p, c, a):
    """Map world points into a subfield's frame: ``(p - c) / a``."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(a <= 0):
        raise NonpositiveExtent(f"extent must be positive, got {a}")
    return (np.asarray(p, dtype=np.float64) - c) / a


def sphere_transform(qbar, sphere_center, sphere_radius, R):
    """``R (qbar - t) / r``: puts the fitted sphere onto the radius-R sphere at the origin."""
    if np.any(np.asarray(sphere_radius) <= 0):
        raise NonpositiveRadius(f"sphere radius must be positive, got {sphere_radius}")
    if R <= 0:
        raise NonpositiveRadius(f"R must be positive, got {R}")
    return R * (np.asarray(qbar, dtype=np.float64) - sphere_center) / sphere_radius


def world_to_model(sfs: SubfieldSet, i, q, R: float):
    """Model-frame coordinates of world points ``q`` for subfield(s) ``i``."""
    i = np.asarray(i)
    a = sfs.extents[i]
    if i.ndim:
        a = a[:, None]
        r = sfs.sphere_radii[i][:, None]
    else:
        r = sfs.sphere_radii[i]
    return R * ((q - sfs.centers[i]) / a - sfs.sphere_centers[i]) / r


def model_to_world_scale(sfs: SubfieldSet, i, R: float):
    """Factor converting model-frame distances of subfield(s) ``i`` to world units."""
    return sfs.sphere_radii[i] * sfs.extents[i] / R


def fit_local_spheres(sfs: SubfieldSet, points, members=None, min_points: int = 4) -> np.ndarray:
    """Refit each subfield's sphere to its member points in the normalized frame.

    Subfields with too few members or a failed fit keep their previous
    sphere. Returns a boolean mask of refitted subfields.
    """
    pts = as_cloud(points)
    if members is None:
        members = membership(pts, sfs.centers, sfs.extents)
    refit = np.zeros(len(sfs), dtype=bool)
    for i in range(len(sfs)):
        idx = np.flatnonzero(members[:, i])
        if len(idx) < min_points or sfs.extents[i] <= 0:
            continue
        local = (pts[idx] - sfs.centers[i]) / sfs.extents[i]
        try:
            fit = fit_sphere_capped(local)
        except SingularFit:
            continue
        sfs.sphere_centers[i] = fit.center
        sfs.sphere_radii[i] = fit.radius
        refit[i] = True
    return refit


@dataclass
class QueryBatch:
    """Query points with their owning subfield and world-unit unsigned targets."""

    q: np.ndarray       # (m, 3) world points
    owner: np.ndarray   # (m,) subfield index
    s: np.ndarray       # (m,) unsigned distance to the cloud, world units

    def __len__(self):
        return len(self.q)

    def transformed(self, sfs: SubfieldSet, R: float) -> np.ndarray:
        return world_to_model(sfs, self.owner, self.q, R)

    def scaled_targets(self, sfs: SubfieldSet, R: float) -> np.ndarray:
        """``s(q) R / (r a)``, the target in each owner's model frame."""
        return self.s * R / (sfs.sphere_radii[self.owner] * sfs.extents[self.owner])

    @classmethod
    def concat(cls, batches) -> "QueryBatch":
        batches = list(batches)
        if not batches:
            return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0))
        return cls(np.concatenate([b.q for b in batches]),
                   np.concatenate([b.owner for b in batches]),
                   np.concatenate([b.s for b in batches]))


def _draw_inside(rng, anchors, sigma, center, extent):
    q = anchors + rng.normal(size=anchors.shape) * sigma[:, None]
    ok = np.abs(q - center).max(axis=1) <= extent
    for _ in range(REDRAW_ATTEMPTS):
        bad = np.flatnonzero(~ok)
        if len(bad) == 0:
            break
        q[bad] = anchors[bad] + rng.normal(size=(len(bad), 3)) * sigma[bad, None]
        ok[bad] = np.abs(q[bad] - center).max(axis=1) <= extent
    return q[ok]


def draw_subfield_queries(sfs: SubfieldSet, i: int, points, member_idx, sigma, per_point: int,
                          rng, max_points: int | None = None) -> np.ndarray:
    """World query points for subfield ``i`` (no distances attached)."""
    member_idx = np.asarray(member_idx, dtype=np.int64)
    if len(member_idx) == 0:
        raise EmptySubfield(f"subfield {i} has no member points")
    if max_points is not None and len(member_idx) > max_points:
        member_idx = rng.choice(member_idx, size=max_points, replace=False)
    anchors = np.repeat(points[member_idx], per_point, axis=0)
    sig = np.repeat(np.asarray(sigma)[member_idx], per_point)
    return _draw_inside(rng, anchors, sig, sfs.centers[i], max(sfs.extents[i], 0.0))


def sample_queries(sfs: SubfieldSet, i: int, index: SpatialIndex, sigma, per_point: int = 8,
                   rng=None, members=None, max_points: int | None = None) -> QueryBatch:
    """Gaussian queries around subfield ``i``'s member points.

    ``sigma`` holds one standard deviation per cloud point (usually its
    k-th neighbor distance). Queries leaving the cube are redrawn a few
    times and then dropped.
    """
    rng = rng if rng is not None else np.random.default_rng()
    pts = index.points
    if members is None:
        members = np.flatnonzero(membership(pts, sfs.centers[i:i + 1], sfs.extents[i:i + 1])[:, 0])
    q = draw_subfield_queries(sfs, i, pts, members, sigma, per_point, rng, max_points)
    return QueryBatch(q, np.full(len(q), i, dtype=np.int64), index.distance(q))


def sample_all_queries(sfs: SubfieldSet, index: SpatialIndex, sigma, members, per_point: int,
                       rng, max_points: int | None = None, active=None) -> QueryBatch:
    """Queries for every active subfield, with one batched distance lookup."""
    qs, owners = [], []
    for i in range(len(sfs)):
        if active is not None and not active[i]:
            continue
        idx = np.flatnonzero(members[:, i])
        if len(idx) == 0:
            continue
        q = draw_subfield_queries(sfs, i, index.points, idx, sigma, per_point, rng, max_points)
        qs.append(q)
        owners.append(np.full(len(q), i, dtype=np.int64))
    if not qs:
        return QueryBatch.concat([])
    q = np.concatenate(qs)
    return QueryBatch(q, np.concatenate(owners), index.distance(q))

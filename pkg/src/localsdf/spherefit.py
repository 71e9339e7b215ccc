"""Algebraic least-squares sphere fitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularFit

MAX_CONDITION = 1e12
RADIUS_CAP = 100.0


@dataclass(frozen=True)
class SphereFit:
    center: np.ndarray
    radius: float


def fit_sphere(points) -> SphereFit:
    """Fit a sphere by linear least squares on ``2 p . t + (r^2 - |t|^2) = |p|^2``.

    The design matrix rows are ``[2p, 1]``; the solve goes through a
    rank-revealing least-squares routine instead of forming the inverse
    of the normal matrix. Raises SingularFit for degenerate (coplanar,
    collinear, too few) inputs.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 4:
        raise SingularFit(f"need at least 4 points, got {len(pts)}")
    # fit in a centered, unit-scaled frame for conditioning, then map back
    mean = pts.mean(axis=0)
    scale = np.sqrt(((pts - mean) ** 2).sum(axis=1)).max()
    if scale == 0:
        raise SingularFit("all points coincide")
    local = (pts - mean) / scale
    A = np.hstack([2.0 * local, np.ones((len(local), 1))])
    y = (local ** 2).sum(axis=1)
    sv = np.linalg.svd(A, compute_uv=False)
    # cond(A^T A) = cond(A)^2
    if sv[-1] == 0 or (sv[0] / sv[-1]) ** 2 > MAX_CONDITION:
        raise SingularFit("design matrix is rank deficient (coplanar or collinear points)")
    b, *_ = np.linalg.lstsq(A, y, rcond=None)
    radicand = b[3] + b[:3] @ b[:3]
    if radicand <= 0:
        raise SingularFit("fitted radius is not real")
    return SphereFit(center=mean + scale * b[:3], radius=float(scale * np.sqrt(radicand)))


def fit_sphere_capped(points, cap: float = RADIUS_CAP) -> SphereFit:
    """Sphere fit that stays usable on flat or degenerate patches.

    The radius is capped at ``cap`` times the patch's bounding radius; a
    capped or planar patch gets a sphere of the capped radius whose center
    lies along the fitted direction (or the plane normal) from the centroid.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    mean = pts.mean(axis=0)
    extent = np.sqrt(((pts - mean) ** 2).sum(axis=1)).max() if len(pts) else 0.0
    if extent == 0:
        raise SingularFit("patch has zero extent")
    limit = cap * extent
    try:
        fit = fit_sphere(pts)
    except SingularFit:
        fit = None
    if fit is not None and fit.radius <= limit:
        return fit
    if fit is not None:
        direction = fit.center - mean
    else:
        # planar or collinear patch: use the least-variance direction
        _, _, vt = np.linalg.svd(pts - mean, full_matrices=True)
        direction = vt[-1]
    norm = np.sqrt(direction @ direction)
    direction = direction / norm if norm > 0 else np.array([0.0, 0.0, 1.0])
    return SphereFit(center=mean + limit * direction, radius=float(limit))

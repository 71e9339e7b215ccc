"""Training objective terms and their gradients.

All terms return ``(value, gradient(s))``. Where a hard min/max picks an
element, the lowest index wins ties and only that element gets gradient;
``|x|`` and ``max(x, 0)`` use subgradient 0 at the kink.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatch, EmptySet, ZeroLatent
from .mlp import MlpParams, backward, forward, param_grads
from .subfields import QueryBatch, SubfieldSet

SV_EPS = 1e-10


@dataclass
class LossWeights:
    nuclear: float = 1e-2
    volume: float = 3e-4
    placing: float = 1.0
    covering: float = 1.0


@dataclass
class LossBreakdown:
    modeling: float
    nuclear: float
    volume: float
    placing: float
    covering: float
    total: float

    FIELDS = ("modeling", "nuclear", "volume", "placing", "covering", "total")

    def as_row(self) -> list[float]:
        return [getattr(self, k) for k in self.FIELDS]


@dataclass
class Gradients:
    theta: dict[str, np.ndarray]
    z: np.ndarray  # (N, d)
    c: np.ndarray  # (N, 3)
    a: np.ndarray  # (N,)

    def global_norm(self) -> float:
        sq = sum(float((g ** 2).sum()) for g in self.theta.values())
        sq += float((self.z ** 2).sum() + (self.c ** 2).sum() + (self.a ** 2).sum())
        return float(np.sqrt(sq))

    def scale(self, k: float) -> None:
        for g in self.theta.values():
            g *= k
        self.z *= k
        self.c *= k
        self.a *= k


def _per_owner(values, owner, n):
    return np.bincount(owner, weights=values, minlength=n)


def modeling_residual(params: MlpParams, sfs: SubfieldSet, batch: QueryBatch, R: float = 1.0):
    """Sign-agnostic data term ``sum | |f(q~, z_owner)| - s(q~) |``.

    Gradients flow into the network, the latents and, through the local
    frame and the rescaled target, into each owner's center and extent.
    Returns ``(value, Gradients)``.
    """
    if len(batch) == 0:
        raise EmptyBatch("no query samples")
    N = len(sfs)
    own = batch.owner
    a = sfs.extents[own]
    r = sfs.sphere_radii[own]
    k = R / (r * a)
    qbar = (batch.q - sfs.centers[own]) / a[:, None]
    qt = R * (qbar - sfs.sphere_centers[own]) / r[:, None]
    st = batch.s * k
    f, tape = forward(params, qt, sfs.latents, owner=own)
    res = np.abs(f) - st
    value = float(np.abs(res).sum())
    sres = np.sign(res)
    g_f = sres * np.sign(f)
    grads = backward(tape, g_f)
    gq = grads["p"]
    # dq~/dc = -k I ; dq~/da = -k qbar ; ds~/da = -k s / a
    dc = -k[:, None] * gq
    da = -k * ((gq * qbar).sum(axis=1) - sres * batch.s / a)
    gc = np.stack([_per_owner(dc[:, j], own, N) for j in range(3)], axis=1)
    ga = _per_owner(da, own, N)
    return value, Gradients(theta=param_grads(grads), z=grads["z"], c=gc, a=ga)


def nuclear_norm(latents):
    """Sum of singular values of the row-normalized latent matrix, with subgradient."""
    Z = np.asarray(latents, dtype=np.float64)
    norms = np.sqrt((Z ** 2).sum(axis=1))
    if np.any(norms <= 1e-12):
        raise ZeroLatent("latent code with (near-)zero norm")
    Y = Z / norms[:, None]
    U, S, Vt = np.linalg.svd(Y, full_matrices=False)
    keep = S > SV_EPS
    G = U[:, keep] @ Vt[keep]
    # d(y)/d(z) = (I - y y^T) / |z|
    grad = (G - (G * Y).sum(axis=1, keepdims=True) * Y) / norms[:, None]
    return float(S.sum()), grad


def volume_loss(extents):
    a = np.asarray(extents, dtype=np.float64)
    return float(np.maximum(a, 0.0).sum()), (a > 0).astype(np.float64)


def _sq_dist(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def placing_loss(centers, points, chunk: int = 16384):
    """Symmetric squared Chamfer distance between cloud and centers; gradient wrt centers."""
    C = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(C) == 0 or len(P) == 0:
        raise EmptySet("placing loss needs nonempty cloud and centers")
    N = len(C)
    value = 0.0
    grad = np.zeros_like(C)
    best_d = np.full(N, np.inf)
    best_p = np.zeros(N, dtype=np.int64)
    for s in range(0, len(P), chunk):
        Pc = P[s:s + chunk]
        d2 = _sq_dist(Pc, C)
        j = d2.argmin(axis=1)
        value += float(d2[np.arange(len(Pc)), j].sum())
        for ax in range(3):
            grad[:, ax] += 2.0 * (np.bincount(j, minlength=N) * C[:, ax]
                                  - np.bincount(j, weights=Pc[:, ax], minlength=N))
        i = d2.argmin(axis=0)
        di = d2[i, np.arange(N)]
        better = di < best_d
        best_d[better] = di[better]
        best_p[better] = s + i[better]
    value += float(best_d.sum())
    grad += 2.0 * (C - P[best_p])
    return value, grad


def covering_loss(centers, extents, points, chunk: int = 16384):
    """Exterior distance of uncovered points to their nearest cube.

    Returns ``(value, grad_centers, grad_extents)``.
    """
    C = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    A = np.asarray(extents, dtype=np.float64)
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    N = len(C)
    eff = np.maximum(A, 0.0)
    value = 0.0
    gc = np.zeros_like(C)
    ga = np.zeros(N)
    for s in range(0, len(P), chunk):
        diff = P[s:s + chunk, None, :] - C[None, :, :]
        absd = np.abs(diff)
        covered = (absd.max(axis=2) <= eff).any(axis=1)
        out = np.flatnonzero(~covered)
        if len(out) == 0:
            continue
        m = np.maximum(absd[out] - eff[None, :, None], 0.0)
        e = (m ** 2).sum(axis=2)
        i = e.argmin(axis=1)
        rows = np.arange(len(out))
        dist = np.sqrt(e[rows, i])
        value += float(dist.sum())
        mi = m[rows, i]
        sgn = np.sign(diff[out][rows, i])
        dci = -(mi * sgn) / dist[:, None]
        dai = -mi.sum(axis=1) / dist * (A[i] > 0)
        for ax in range(3):
            gc[:, ax] += np.bincount(i, weights=dci[:, ax], minlength=N)
        ga += np.bincount(i, weights=dai, minlength=N)
    return value, gc, ga


def combined_loss(params: MlpParams, sfs: SubfieldSet, points, batch: QueryBatch,
                  weights: LossWeights, R: float = 1.0):
    """Weighted objective ``modeling + nuclear + volume + placing + covering``.

    Returns ``(LossBreakdown, Gradients)`` covering the network, every latent,
    center and extent. An empty batch contributes a zero modeling term.
    """
    N, d = sfs.latents.shape
    if len(batch):
        modeling, grads = modeling_residual(params, sfs, batch, R)
    else:
        modeling = 0.0
        grads = Gradients(theta={k: np.zeros_like(v) for k, v in params.arrays().items()},
                          z=np.zeros((N, d)), c=np.zeros((N, 3)), a=np.zeros(N))
    nuc = 0.0
    if weights.nuclear:
        nuc, gz = nuclear_norm(sfs.latents)
        grads.z += weights.nuclear * gz
    vol, gvol = volume_loss(sfs.extents)
    place, gplace = placing_loss(sfs.centers, points)
    cover, gcc, gca = covering_loss(sfs.centers, sfs.extents, points)
    grads.a += weights.volume * gvol + weights.covering * gca
    grads.c += weights.placing * gplace + weights.covering * gcc
    total = (modeling + weights.nuclear * nuc + weights.volume * vol
             + weights.placing * place + weights.covering * cover)
    return LossBreakdown(modeling, nuc, vol, place, cover, total), grads

"""Shared implicit model: a plain ReLU MLP ``f(p, z) -> R`` with hand-written backprop.

Layout: ``h1 = relu(Wp p + Wz z + b1)``, ``h_k = relu(W_k h_{k-1} + b_k)`` for
the remaining hidden layers, and ``f = w . h_l + c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadArchitecture, BadRadius, ShapeMismatch, TapeConsumed


@dataclass
class MlpParams:
    Wp: np.ndarray
    Wz: np.ndarray
    b1: np.ndarray
    W: list[np.ndarray]
    b: list[np.ndarray]
    w: np.ndarray
    c: np.ndarray  # 0-d array so it can be updated in place

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.Wp.shape[0],) + tuple(Wk.shape[0] for Wk in self.W)

    @property
    def latent_dim(self) -> int:
        return self.Wz.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        """Name -> array view of every parameter, in a fixed order."""
        out = {"Wp": self.Wp, "Wz": self.Wz, "b1": self.b1}
        for k, (Wk, bk) in enumerate(zip(self.W, self.b), start=2):
            out[f"W{k}"] = Wk
            out[f"b{k}"] = bk
        out["w"] = self.w
        out["c"] = self.c
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "MlpParams":
        n_hidden = sum(1 for k in arrays if k.startswith("W") and k[1:].isdigit())
        return cls(
            Wp=arrays["Wp"], Wz=arrays["Wz"], b1=arrays["b1"],
            W=[arrays[f"W{k}"] for k in range(2, n_hidden + 2)],
            b=[arrays[f"b{k}"] for k in range(2, n_hidden + 2)],
            w=arrays["w"], c=np.asarray(arrays["c"], dtype=np.float64).reshape(()),
        )

    def copy(self) -> "MlpParams":
        return MlpParams.from_arrays({k: v.copy() for k, v in self.arrays().items()})


def mlp_new(widths, latent_dim: int, seed: int = 0) -> MlpParams:
    """Allocate an MLP with hidden layer sizes ``widths`` (the linear head is extra).

    Weights get a deterministic He-style placeholder draw; call
    geometric_init before training.
    """
    widths = tuple(int(v) for v in widths)
    if len(widths) < 1 or any(v < 1 for v in widths):
        raise BadArchitecture(f"invalid widths {widths}")
    if widths[0] < 3:
        raise BadArchitecture(f"first hidden width must be >= 3, got {widths[0]}")
    if latent_dim < 1:
        raise BadArchitecture("latent dimension must be positive")
    rng = np.random.default_rng(seed)
    d1 = widths[0]
    Wp = rng.normal(0.0, np.sqrt(2.0 / 3.0), (d1, 3))
    Wz = rng.normal(0.0, np.sqrt(2.0 / (3 + latent_dim)), (d1, latent_dim))
    W = [rng.normal(0.0, np.sqrt(2.0 / widths[k - 1]), (widths[k], widths[k - 1]))
         for k in range(1, len(widths))]
    return MlpParams(
        Wp=Wp, Wz=Wz, b1=np.zeros(d1), W=W, b=[np.zeros(v) for v in widths[1:]],
        w=rng.normal(0.0, np.sqrt(1.0 / widths[-1]), widths[-1]), c=np.array(0.0),
    )


def geometric_init(params: MlpParams, radius: float, center=(0.0, 0.0, 0.0), seed: int = 0) -> MlpParams:
    """Initialize so that ``f(p, z) ~ |p - center| - radius`` for small ``z``.

    Hidden weights are i.i.d. N(0, 2/d_out) keyed to each layer's own output
    size, hidden biases vanish, the latent weights copy the first three
    columns of the point weights and the head is ``sqrt(pi/d_l) * 1`` with
    bias ``-radius``.
    """
    if not radius > 0:
        raise BadRadius(f"radius must be positive, got {radius}")
    center = np.asarray(center, dtype=np.float64).reshape(3)
    widths = params.widths
    d = params.latent_dim
    rng = np.random.default_rng(seed)
    d1 = widths[0]
    Wp = rng.normal(0.0, np.sqrt(2.0 / d1), (d1, 3))
    Wz = np.zeros((d1, d))
    k = min(3, d)
    Wz[:, :k] = Wp[:, :k]
    W = [rng.normal(0.0, np.sqrt(2.0 / widths[i]), (widths[i], widths[i - 1]))
         for i in range(1, len(widths))]
    return MlpParams(
        Wp=Wp, Wz=Wz, b1=-(Wp @ center), W=W, b=[np.zeros(v) for v in widths[1:]],
        w=np.full(widths[-1], np.sqrt(np.pi / widths[-1])), c=np.array(-float(radius)),
    )


@dataclass
class ForwardTape:
    p: np.ndarray
    z: np.ndarray
    owner: np.ndarray | None
    pre: list[np.ndarray]
    act: list[np.ndarray]
    params: MlpParams
    single: bool
    consumed: bool = field(default=False)


def forward(params: MlpParams, p, z, owner=None):
    """Evaluate the model on a batch.

    ``p`` is (B, 3) or a single 3-vector. ``z`` is either one latent (d,),
    a per-sample batch (B, d), or, when ``owner`` is given, a table (N, d)
    indexed per sample by ``owner``. Returns ``(values, tape)``; values is a
    float for single-point input.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p2 = p.reshape(-1, 3)
    z = np.asarray(z, dtype=np.float64)
    d = params.latent_dim
    if z.shape[-1] != d:
        raise ShapeMismatch(f"latent has size {z.shape[-1]}, model expects {d}")
    if owner is not None:
        owner = np.asarray(owner, dtype=np.int64)
        if owner.shape != (len(p2),) or z.ndim != 2:
            raise ShapeMismatch("owner needs one entry per point and a 2-d latent table")
        zproj = (z @ params.Wz.T)[owner]
    else:
        if z.ndim == 2 and len(z) != len(p2):
            raise ShapeMismatch(f"{len(z)} latents for {len(p2)} points")
        zproj = z @ params.Wz.T
    pre = [p2 @ params.Wp.T + zproj + params.b1]
    act = [np.maximum(pre[0], 0.0)]
    for Wk, bk in zip(params.W, params.b):
        pre.append(act[-1] @ Wk.T + bk)
        act.append(np.maximum(pre[-1], 0.0))
    out = act[-1] @ params.w + params.c
    tape = ForwardTape(p=p2, z=z, owner=owner, pre=pre, act=act, params=params, single=single)
    return (float(out[0]) if single else out), tape


def backward(tape: ForwardTape, upstream) -> dict[str, np.ndarray]:
    """Reverse pass. Returns parameter gradients keyed like ``MlpParams.arrays``
    plus ``"p"`` and ``"z"`` input gradients (``"z"`` has the shape of the
    latent argument given to forward)."""
    if tape.consumed:
        raise TapeConsumed("tape already used for a backward pass")
    tape.consumed = True
    prm = tape.params
    B = len(tape.p)
    g = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (B,))
    grads: dict[str, np.ndarray] = {}
    grads["c"] = np.array(g.sum())
    grads["w"] = tape.act[-1].T @ g
    delta = np.outer(g, prm.w)
    delta *= tape.pre[-1] > 0
    for k in range(len(prm.W), 0, -1):
        grads[f"W{k + 1}"] = delta.T @ tape.act[k - 1]
        grads[f"b{k + 1}"] = delta.sum(axis=0)
        delta = delta @ prm.W[k - 1]
        delta *= tape.pre[k - 1] > 0
    grads["Wp"] = delta.T @ tape.p
    grads["b1"] = delta.sum(axis=0)
    grads["p"] = delta @ prm.Wp
    if tape.owner is not None:
        n_lat = len(tape.z)
        onehot = np.zeros((B, n_lat))
        onehot[np.arange(B), tape.owner] = 1.0
        dzproj = onehot.T @ delta
        grads["Wz"] = dzproj.T @ tape.z
        grads["z"] = dzproj @ prm.Wz
    elif tape.z.ndim == 1:
        grads["Wz"] = np.outer(delta.sum(axis=0), tape.z)
        grads["z"] = delta.sum(axis=0) @ prm.Wz
    else:
        grads["Wz"] = delta.T @ tape.z
        grads["z"] = delta @ prm.Wz
    if tape.single:
        grads["p"] = grads["p"][0]
    return grads


def param_grads(grads: dict) -> dict[str, np.ndarray]:
    return {k: v for k, v in grads.items() if k not in ("p", "z")}


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **kw) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()}, **kw)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
    """One bias-corrected Adam update, applied in place to ``params``."""
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if set(params) != set(state.m):
        raise ShapeMismatch("parameter names do not match optimizer state")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, x in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != x.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {x.shape}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x -= lr * mhat / (np.sqrt(vhat) + state.eps)
    return params, state


def sample_ball(n: int, radius: float, rng) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    v /= np.sqrt((v ** 2).sum(axis=1, keepdims=True))
    return v * radius * rng.random((n, 1)) ** (1.0 / 3.0)


def init_deviation(widths, latent_dim: int, radius: float, center=(0.0, 0.0, 0.0), trials: int = 1000,
                   seed: int = 0, sigma_z: float = 1e-3, ball_radius: float = 2.0) -> dict:
    """How far a freshly initialized model is from the sphere distance ``|p - t| - r``.

    Draws the network with ``seed``, one latent from N(0, sigma_z^2) and
    ``trials`` points uniformly in the ball of radius ``ball_radius``.
    Also reports ``f(t, 0)``, which equals ``-r`` by construction.
    """
    center = np.asarray(center, dtype=np.float64).reshape(3)
    params = geometric_init(mlp_new(widths, latent_dim, seed), radius, center, seed)
    rng = np.random.default_rng([seed, 1])
    z = rng.normal(0.0, sigma_z, latent_dim)
    p = sample_ball(trials, ball_radius, rng)
    f, _ = forward(params, p, z)
    dist = np.sqrt(((p - center) ** 2).sum(axis=1))
    err = np.abs(f - (dist - radius))
    center_value, _ = forward(params, center, np.zeros(latent_dim))
    return {"mean": float(err.mean()), "max": float(err.max()), "distance": dist, "error": err,
            "center_value": center_value, "center_error": abs(center_value + radius)}

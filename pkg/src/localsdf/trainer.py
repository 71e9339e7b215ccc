"""Optimization loop, training configuration and the FieldModel artifact."""

from __future__ import annotations

import ast
import configparser
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import read_archive, write_archive
from .errors import CountOutOfRange, NonFiniteLoss, VersionMismatch
from .losses import LossBreakdown, LossWeights, combined_loss
from .mlp import AdamState, MlpParams, adam_step, forward, geometric_init, mlp_new
from .pointcloud import GlobalTransform, SpatialIndex, normalize_to_unit_sphere
from .subfields import (SubfieldSet, fit_local_spheres, init_subfields, membership,
                        sample_all_queries, world_to_model)

log = logging.getLogger(__name__)

FULL_SCALE_DECAYS = (20000, 30000, 35000, 38000)


@dataclass
class TrainingConfig:
    n_subfields: int = 32
    latent_dim: int = 64
    widths: tuple[int, ...] = (128,) * 5
    R: float = 1.0
    alpha: float = 1.2
    iterations: int = 3000
    lr_theta_z: float = 1e-3
    lr_c_a: float = 3e-4
    decay_factor: float = 0.2
    decay_iters: tuple[int, ...] = (1500, 2250, 2625, 2850)
    nuclear_weight: float = 1e-2
    volume_weight: float = 3e-4
    placing_weight: float = 1.0
    covering_weight: float = 1.0
    sigma_z_init: float = 1e-3
    per_point: int = 8
    points_per_subfield: int = 8
    knn_k: int = 50
    seed: int = 0
    refit_interval: int = 500
    clip_norm: float = 10.0
    log_interval: int = 10

    def __post_init__(self):
        self.widths = tuple(int(v) for v in self.widths)
        self.decay_iters = tuple(int(v) for v in self.decay_iters)
        if any(b <= a for a, b in zip(self.decay_iters, self.decay_iters[1:])):
            raise ValueError("decay_iters must be strictly increasing")
        if self.decay_iters and self.decay_iters[-1] > self.iterations:
            raise ValueError("decay_iters must not exceed iterations")
        if not (self.lr_theta_z > 0 and self.lr_c_a > 0):
            raise ValueError("learning rates must be positive")

    @classmethod
    def desk(cls, **overrides) -> "TrainingConfig":
        """Minutes-on-one-core defaults; the decay schedule sits at the full-scale fractions."""
        cfg = cls()
        return cfg.replace(**overrides) if overrides else cfg

    @classmethod
    def paper(cls, **overrides) -> "TrainingConfig":
        """Full-scale run: 40k iterations, width 256, decays at 20k/30k/35k/38k."""
        cfg = cls(widths=(256,) * 5, iterations=40000, decay_iters=FULL_SCALE_DECAYS)
        return cfg.replace(**overrides) if overrides else cfg

    def replace(self, **changes) -> "TrainingConfig":
        if "iterations" in changes and "decay_iters" not in changes:
            # keep the schedule at the same fractions of the run
            frac = [d / self.iterations for d in self.decay_iters] if self.iterations else []
            changes["decay_iters"] = tuple(dict.fromkeys(
                int(round(f * changes["iterations"])) for f in frac if f * changes["iterations"] >= 1))
        return dataclasses.replace(self, **changes)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.nuclear_weight, self.volume_weight,
                           self.placing_weight, self.covering_weight)

    def lr_scale(self, iteration: int) -> float:
        """Multiplier on the initial learning rates at a 0-based iteration."""
        return self.decay_factor ** sum(1 for d in self.decay_iters if iteration >= d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        d["decay_iters"] = list(self.decay_iters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def coerce_field(cfg_cls, key: str, value):
    """Convert a parsed override to the type of ``cfg_cls.key``."""
    fields = {f.name: f for f in dataclasses.fields(cfg_cls)}
    if key not in fields:
        raise KeyError(f"unknown setting {key!r}")
    default = getattr(cfg_cls(), key)
    if isinstance(default, tuple):
        return tuple(np.atleast_1d(value).tolist())
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int):
        if float(value) != int(value):
            raise ValueError(f"{key} must be an integer")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def read_config_file(path) -> dict[str, dict]:
    """Read an INI-style file (``[train]`` / ``[grid]`` sections of key = value)."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    return {sec: {k: parse_value(v) for k, v in parser.items(sec)} for sec in parser.sections()}


@dataclass
class TrainState:
    iteration: int
    adam_tz: AdamState
    adam_ca: AdamState
    rng_state: dict


@dataclass
class FieldModel:
    """Trained artifact. Geometry lives in the unit-sphere frame given by ``transform``."""

    params: MlpParams
    subfields: SubfieldSet
    transform: GlobalTransform
    config: TrainingConfig
    state: TrainState | None = None

    # the duck-typed interface used by signflip and reconstruct
    @property
    def centers(self):
        return self.subfields.centers

    @property
    def extents(self):
        return self.subfields.extents

    @property
    def signs(self):
        return self.subfields.signs

    def local_field(self, i: int, q) -> np.ndarray:
        """Unsigned-convention field of subfield ``i`` at ``q`` in frame units: ``(r a / R) f(q~, z_i)``."""
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        R = self.config.R
        qt = world_to_model(self.subfields, i, q, R)
        f, _ = forward(self.params, qt, self.subfields.latents[i])
        return self.subfields.sphere_radii[i] * self.subfields.extents[i] / R * f


def _theta_z(params: MlpParams, sfs: SubfieldSet) -> dict[str, np.ndarray]:
    out = dict(params.arrays())
    out["z"] = sfs.latents
    return out


def _c_a(sfs: SubfieldSet) -> dict[str, np.ndarray]:
    return {"c": sfs.centers, "a": sfs.extents}


def initialize(points, config: TrainingConfig):
    """Normalize the cloud and build the iteration-0 model."""
    pts, tf = normalize_to_unit_sphere(points)
    if not 2 <= config.n_subfields <= len(pts):
        raise CountOutOfRange(f"need 2 <= n_subfields <= {len(pts)}")
    rng = np.random.default_rng(config.seed)
    sfs = init_subfields(pts, config.n_subfields, config.alpha, config.latent_dim)
    fit_local_spheres(sfs, pts)
    params = geometric_init(mlp_new(config.widths, config.latent_dim, config.seed),
                            config.R, np.zeros(3), seed=config.seed)
    sfs.latents[:] = rng.normal(0.0, config.sigma_z_init, sfs.latents.shape)
    state = TrainState(0, AdamState.zeros_like(_theta_z(params, sfs)),
                       AdamState.zeros_like(_c_a(sfs)), rng.bit_generator.state)
    return FieldModel(params, sfs, tf, config, state), pts


def train(points, config: TrainingConfig | None = None, progress=None, resume: FieldModel | None = None,
          stop_at: int | None = None) -> FieldModel:
    """Fit the local implicit model to a raw point cloud.

    ``progress(iteration, breakdown)`` is called every ``log_interval``
    iterations and at the last one. ``resume`` continues a checkpointed
    run (its own config wins); ``stop_at`` ends early at that iteration,
    leaving a resumable state.
    """
    if resume is not None:
        model = resume
        config = model.config
        pts = model.transform.apply(points)
    else:
        config = config or TrainingConfig()
        model, pts = initialize(points, config)
    params, sfs, st = model.params, model.subfields, model.state
    rng = np.random.default_rng()
    rng.bit_generator.state = st.rng_state
    index = SpatialIndex(pts)
    sigma = index.knn_distance(config.knn_k)
    weights = config.weights
    end = config.iterations if stop_at is None else min(stop_at, config.iterations)

    for it in range(st.iteration, end):
        members = membership(pts, sfs.centers, sfs.extents)
        batch = sample_all_queries(sfs, index, sigma, members, config.per_point, rng,
                                   max_points=config.points_per_subfield)
        breakdown, grads = combined_loss(params, sfs, pts, batch, weights, config.R)
        if not np.isfinite(breakdown.total):
            raise NonFiniteLoss(it)
        norm = grads.global_norm()
        if not np.isfinite(norm):
            raise NonFiniteLoss(it)
        if config.clip_norm and norm > config.clip_norm:
            grads.scale(config.clip_norm / norm)
        scale = config.lr_scale(it)
        gtz = dict(grads.theta)
        gtz["z"] = grads.z
        adam_step(st.adam_tz, _theta_z(params, sfs), gtz, config.lr_theta_z * scale)
        adam_step(st.adam_ca, _c_a(sfs), {"c": grads.c, "a": grads.a}, config.lr_c_a * scale)
        if progress is not None and (it % config.log_interval == 0 or it == config.iterations - 1):
            progress(it, breakdown)
        if config.refit_interval and (it + 1) % config.refit_interval == 0 and it + 1 < config.iterations:
            fit_local_spheres(sfs, pts)
        st.iteration = it + 1
    st.rng_state = rng.bit_generator.state
    return model


def evaluate_loss(model: FieldModel, points, seed: int = 0) -> LossBreakdown:
    """Objective of ``model`` on one freshly sampled batch (no update)."""
    cfg = model.config
    pts = model.transform.apply(points)
    index = SpatialIndex(pts)
    sigma = index.knn_distance(cfg.knn_k)
    rng = np.random.default_rng(seed)
    members = membership(pts, model.centers, model.extents)
    batch = sample_all_queries(model.subfields, index, sigma, members, cfg.per_point, rng,
                               max_points=cfg.points_per_subfield)
    return combined_loss(model.params, model.subfields, pts, batch, cfg.weights, cfg.R)[0]


def save_model(model: FieldModel, path) -> None:
    arrays = {f"theta/{k}": v for k, v in model.params.arrays().items()}
    sfs = model.subfields
    for name in ("centers", "extents", "latents", "sphere_centers", "sphere_radii", "signs"):
        arrays[f"subfields/{name}"] = getattr(sfs, name)
    arrays["transform/offset"] = np.asarray(model.transform.offset, dtype=np.float64)
    arrays["transform/scale"] = np.asarray(model.transform.scale, dtype=np.float64)
    meta = {"kind": "field-model", "config": model.config.to_dict()}
    if model.state is not None:
        st = model.state
        for tag, adam in (("adam_tz", st.adam_tz), ("adam_ca", st.adam_ca)):
            for k in adam.m:
                arrays[f"{tag}/m/{k}"] = adam.m[k]
                arrays[f"{tag}/v/{k}"] = adam.v[k]
        meta["state"] = {
            "iteration": st.iteration,
            "rng_state": st.rng_state,
            "adam": {tag: {"step": a.step, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps}
                     for tag, a in (("adam_tz", st.adam_tz), ("adam_ca", st.adam_ca))},
        }
    write_archive(path, arrays, meta)


def load_model(path) -> FieldModel:
    arrays, meta = read_archive(path)
    if meta.get("kind") != "field-model":
        raise VersionMismatch(f"{path} does not hold a field model")
    params = MlpParams.from_arrays({k.split("/", 1)[1]: v for k, v in arrays.items()
                                    if k.startswith("theta/")})
    sfs = SubfieldSet(*(arrays[f"subfields/{n}"] for n in
                        ("centers", "extents", "latents", "sphere_centers", "sphere_radii", "signs")))
    tf = GlobalTransform(arrays["transform/offset"], float(arrays["transform/scale"]))
    config = TrainingConfig.from_dict(meta["config"])
    state = None
    if "state" in meta:
        sm = meta["state"]
        adams = {}
        for tag, info in sm["adam"].items():
            m = {k.split("/", 2)[2]: v for k, v in arrays.items() if k.startswith(f"{tag}/m/")}
            v = {k.split("/", 2)[2]: v for k, v in arrays.items() if k.startswith(f"{tag}/v/")}
            adams[tag] = AdamState(m=m, v=v, step=info["step"], beta1=info["beta1"],
                                   beta2=info["beta2"], eps=info["eps"])
        state = TrainState(sm["iteration"], adams["adam_tz"], adams["adam_ca"], sm["rng_state"])
    return FieldModel(params, sfs, tf, config, state)

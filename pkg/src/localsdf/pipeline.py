"""End-to-end reconstruction: train, fix signs, extract, map back to world units."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .reconstruct import TriMesh, extract_mesh
from .signflip import SignGraph, flip_signs
from .trainer import FieldModel, TrainingConfig, train


@dataclass
class Reconstruction:
    model: FieldModel
    graph: SignGraph
    mesh: TriMesh  # world coordinates


def mesh_from_model(model: FieldModel, resolution=128, sign_samples: int = 128,
                    pad: float = 0.05) -> tuple[SignGraph, TriMesh]:
    """Assign subfield signs on ``model`` and extract its surface in world units."""
    graph = flip_signs(model, sample_count=sign_samples, seed=model.config.seed)
    mesh = extract_mesh(model, resolution, pad)
    return graph, mesh.transformed(model.transform.invert)


def reconstruct_points(points, config: TrainingConfig | None = None, resolution=128,
                       sign_samples: int = 128, progress=None) -> Reconstruction:
    model = train(np.asarray(points, dtype=np.float64), config, progress)
    graph, mesh = mesh_from_model(model, resolution, sign_samples)
    return Reconstruction(model, graph, mesh)

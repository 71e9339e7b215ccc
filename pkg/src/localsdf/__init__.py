"""Local implicit signed distance fields for surface reconstruction from
un-oriented point clouds."""

from .errors import LocalSDFError
from .pipeline import Reconstruction, mesh_from_model, reconstruct_points
from .trainer import FieldModel, TrainingConfig, load_model, save_model, train

__version__ = "0.1.0"

__all__ = [
    "FieldModel", "LocalSDFError", "Reconstruction", "TrainingConfig", "load_model",
    "mesh_from_model", "reconstruct_points", "save_model", "train",
]

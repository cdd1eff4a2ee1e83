"""
Architetture concrete di refiner e discriminatore, costruzione dei parametri e checkpoint
"""

from app.nets.params import NetParams, frozen, he_normal
from app.nets.refiner import build_refiner, refine, refine_array, refiner_param_count
from app.nets.discriminator import (
    build_discriminator,
    discriminate,
    discriminate_array,
    patch_grid,
    receptive_field,
    receptive_field_ratio,
)
from app.nets.checkpoint import load_checkpoint, load_checkpoint_with_manifest, save_checkpoint

__all__ = [
    "NetParams",
    "frozen",
    "he_normal",
    "build_refiner",
    "refine",
    "refine_array",
    "refiner_param_count",
    "build_discriminator",
    "discriminate",
    "discriminate_array",
    "patch_grid",
    "receptive_field",
    "receptive_field_ratio",
    "load_checkpoint",
    "load_checkpoint_with_manifest",
    "save_checkpoint",
]

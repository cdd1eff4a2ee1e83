"""
Mondo procedurale: simulatore annotato, corruzione "reale" nascosta, oracoli
"""

from app.toyworld.dataset import (
    AnnotatedImage,
    Annotation,
    LabeledSet,
    Role,
    UnlabeledSet,
    load_dataset,
    load_manifest,
    save_dataset,
)
from app.toyworld.render import EyeParams, held_out_truth, realize, render_eye, simulate
from app.toyworld.oracle import otsu_threshold, pupil_center_oracle, translate

__all__ = [
    "AnnotatedImage",
    "Annotation",
    "LabeledSet",
    "Role",
    "UnlabeledSet",
    "load_dataset",
    "load_manifest",
    "save_dataset",
    "EyeParams",
    "held_out_truth",
    "realize",
    "render_eye",
    "simulate",
    "otsu_threshold",
    "pupil_center_oracle",
    "translate",
]

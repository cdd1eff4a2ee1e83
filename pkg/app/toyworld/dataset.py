"""
Contenitori di immagini del mondo giocattolo e loro persistenza su disco

Le immagini reali (UnlabeledSet) non espongono alcuna annotazione: la verità
generativa resta nel generatore ed è ricostruibile solo dall'harness.

Directory di un dataset:
    manifest.json     conteggi, ruolo, seed, echo della WorldConfig
    images.tns        stack N x 1 x H x W
    annotations.csv   pupil_cx, pupil_cy, gaze_x, gaze_y (solo set etichettati)
"""
import csv
import io
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from app.autograd import read_tns, write_tns
from app.errors import FirewallError, TensorFormatError
from app.models import WorldConfig
from app.paths import atomic_write_json, atomic_write_text, read_json

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
IMAGES_FILE = "images.tns"
ANNOTATIONS_FILE = "annotations.csv"
ANNOTATION_HEADER = ["pupil_cx", "pupil_cy", "gaze_x", "gaze_y"]


class Role(str, Enum):
    SYNTHETIC = "synthetic"
    REFINED = "refined"
    REAL = "real"


@dataclass(frozen=True)
class Annotation:
    """Centro della pupilla (px) e direzione dello sguardo (vettore unitario nel piano immagine)"""
    pupil_cx: float
    pupil_cy: float
    gaze_x: float
    gaze_y: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.pupil_cx, self.pupil_cy, self.gaze_x, self.gaze_y], dtype=np.float64)


@dataclass(frozen=True)
class AnnotatedImage:
    pixels: np.ndarray  # 1 x H x W in [0, 1]
    annotation: Annotation
    role: Role


def _check_pixels(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.ndim != 4 or pixels.shape[0] == 0:
        raise ValueError(f"Attese immagini N x C x H x W (N >= 1), ricevute {pixels.shape}")
    return pixels


class LabeledSet:
    """
    Immagini con annotazioni: sintetiche o raffinate

    Le raffinate ereditano le annotazioni delle sintetiche da cui provengono.
    """

    def __init__(self, pixels: np.ndarray, annotations: np.ndarray, role: Union[Role, str] = Role.SYNTHETIC):
        self.role = Role(role)
        if self.role == Role.REAL:
            raise FirewallError("Un set di immagini reali non può portare annotazioni")
        self.pixels = _check_pixels(pixels)
        self.annotations = np.asarray(annotations, dtype=np.float64)
        if self.annotations.shape != (self.pixels.shape[0], 4):
            raise ValueError(
                f"Annotazioni {self.annotations.shape} incoerenti con {self.pixels.shape[0]} immagini"
            )

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def __getitem__(self, index: int) -> AnnotatedImage:
        return AnnotatedImage(self.pixels[index].copy(), Annotation(*map(float, self.annotations[index])), self.role)

    @property
    def image_shape(self):
        return self.pixels.shape[1:]

    @property
    def pupil_centers(self) -> np.ndarray:
        return self.annotations[:, :2]

    @property
    def gazes(self) -> np.ndarray:
        return self.annotations[:, 2:]

    def with_pixels(self, pixels: np.ndarray, role: Union[Role, str] = Role.REFINED) -> "LabeledSet":
        """Stesse annotazioni, pixel nuovi (es. uscita del refiner)"""
        pixels = _check_pixels(pixels)
        if pixels.shape != self.pixels.shape:
            raise ValueError(f"Pixel {pixels.shape} incompatibili con il set {self.pixels.shape}")
        return LabeledSet(pixels, self.annotations.copy(), role)

    def subset(self, indices: Sequence[int]) -> "LabeledSet":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledSet(self.pixels[idx], self.annotations[idx], self.role)

    def __repr__(self) -> str:
        return f"LabeledSet(role={self.role.value}, n={len(self)}, shape={tuple(self.image_shape)})"


class UnlabeledSet:
    """Immagini reali: solo pixel, nessun accessor per le annotazioni"""

    __slots__ = ("_pixels",)

    def __init__(self, pixels: np.ndarray):
        self._pixels = _check_pixels(pixels)

    @property
    def role(self) -> Role:
        return Role.REAL

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def image_shape(self):
        return self._pixels.shape[1:]

    def __len__(self) -> int:
        return self._pixels.shape[0]

    def __getitem__(self, index: int) -> np.ndarray:
        return self._pixels[index].copy()

    def __repr__(self) -> str:
        return f"UnlabeledSet(n={len(self)}, shape={tuple(self.image_shape)})"


ImageSet = Union[LabeledSet, UnlabeledSet]


def _annotations_csv(annotations: np.ndarray) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(ANNOTATION_HEADER)
    for row in annotations:
        writer.writerow([repr(float(v)) for v in row])
    return buffer.getvalue()


def save_dataset(directory: Path, dataset: ImageSet, world: WorldConfig, seed: int,
                 split: str = "") -> Path:
    """Scrive manifest, stack di immagini e (solo se etichettato) CSV delle annotazioni"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tns(directory / IMAGES_FILE, dataset.pixels)
    labeled = isinstance(dataset, LabeledSet)
    if labeled:
        atomic_write_text(directory / ANNOTATIONS_FILE, _annotations_csv(dataset.annotations))
    manifest: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "split": split or directory.name,
        "role": dataset.role.value,
        "count": len(dataset),
        "shape": list(dataset.image_shape),
        "seed": seed,
        "labeled": labeled,
        "world": world.model_dump(mode="json"),
    }
    atomic_write_json(directory / MANIFEST, manifest)
    logger.info(f"💾 [WORLD] Dataset salvato: {directory} ({dataset!r})")
    return directory


def load_manifest(directory: Path) -> Dict[str, Any]:
    try:
        return read_json(Path(directory) / MANIFEST)
    except FileNotFoundError as e:
        raise ValueError(f"Manifest del dataset mancante: {directory}") from e


def load_dataset(directory: Path) -> ImageSet:
    """
    Rilegge un dataset salvato con save_dataset

    Raises:
        ValueError: manifest mancante, conteggi incoerenti, CSV non valido
        TensorFormatError: stack di immagini corrotto
    """
    directory = Path(directory)
    manifest = load_manifest(directory)
    pixels = read_tns(directory / IMAGES_FILE)
    if pixels.shape[0] != manifest["count"]:
        raise TensorFormatError(
            f"Dataset {directory}: {pixels.shape[0]} immagini, manifest ne dichiara {manifest['count']}"
        )
    role = Role(manifest["role"])
    if role == Role.REAL:
        return UnlabeledSet(pixels)
    with open(directory / ANNOTATIONS_FILE, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ANNOTATION_HEADER:
            raise ValueError(f"Header delle annotazioni non valido in {directory}: {header}")
        annotations = np.array([[float(v) for v in row] for row in reader if row], dtype=np.float64)
    return LabeledSet(pixels, annotations.reshape(-1, 4), role)


def dataset_world(directory: Path) -> Optional[WorldConfig]:
    """WorldConfig salvata nel manifest (None se assente)"""
    world = load_manifest(directory).get("world")
    return WorldConfig.model_validate(world) if world else None

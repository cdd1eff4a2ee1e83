"""
Supporto allo studio percettivo reale vs raffinato

Matrice di confusione 2x2 (righe: verità reale/sintetica, colonne: scelta
reale/sintetica) in CSV, griglie di immagini appaiate in PNG e PGM e una
pagina HTML per lo studio manuale.
"""
import csv
import io
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader, select_autoescape
from PIL import Image

from app.paths import atomic_write_text, ensure_dir

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).parent / "templates"
STUDY_TEMPLATE = "study.html"
ROW_LABELS = ("real", "synthetic")
CONFUSION_HEADER = ["ground_truth", "selected_real", "selected_synthetic"]


def confusion_accuracy(matrix: Sequence[Sequence[int]]) -> float:
    """
    Accuratezza = diagonale / totale

    Raises:
        ValueError: matrice non 2x2, conteggi negativi o non interi, totale nullo
    """
    m = np.asarray(matrix)
    if m.shape != (2, 2):
        raise ValueError(f"Matrice di confusione 2x2 attesa, ricevuta shape {m.shape}")
    if not np.all(np.equal(np.mod(m, 1), 0)) or np.any(m < 0):
        raise ValueError(f"Conteggi non validi (interi >= 0 richiesti): {m.tolist()}")
    total = m.sum()
    if total == 0:
        raise ValueError("Accuratezza indefinita: matrice di confusione tutta a zero")
    return float((m[0, 0] + m[1, 1]) / total)


def image_grid(images: np.ndarray, columns: int = 8, pad: int = 1) -> np.ndarray:
    """Affianca N immagini 1 x H x W (o H x W) in una griglia uint8"""
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim == 4:
        imgs = imgs.mean(axis=1)
    n, h, w = imgs.shape
    columns = max(1, min(columns, n))
    rows = (n + columns - 1) // columns
    grid = np.ones((rows * (h + pad) + pad, columns * (w + pad) + pad), dtype=np.float64)
    for i in range(n):
        r, c = divmod(i, columns)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        grid[y:y + h, x:x + w] = imgs[i]
    return (np.clip(grid, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def paired_grid(real: np.ndarray, refined: np.ndarray, columns: int = 8) -> np.ndarray:
    """Due blocchi uno sotto l'altro: reali in alto, raffinate in basso"""
    top = image_grid(real, columns)
    bottom = image_grid(refined, columns)
    width = max(top.shape[1], bottom.shape[1])

    def widen(g: np.ndarray) -> np.ndarray:
        return np.pad(g, ((0, 0), (0, width - g.shape[1])), constant_values=255)

    separator = np.full((3, width), 128, dtype=np.uint8)
    return np.vstack([widen(top), separator, widen(bottom)])


def save_grid(grid: np.ndarray, path: Path) -> Path:
    """Salva una griglia uint8 in scala di grigi (formato dall'estensione: .png, .pgm)"""
    path = Path(path)
    ensure_dir(path.parent)
    Image.fromarray(np.ascontiguousarray(grid, dtype=np.uint8)).save(path)
    logger.debug(f"💾 [HARNESS] Griglia salvata: {path}")
    return path


def render_study_page(context: Dict) -> str:
    env = Environment(loader=FileSystemLoader(str(TEMPLATES_DIR)), autoescape=select_autoescape(["html"]))
    return env.get_template(STUDY_TEMPLATE).render(**context)


def export_confusion(
    matrix: Sequence[Sequence[int]],
    path: Path,
    real_images: Optional[np.ndarray] = None,
    refined_images: Optional[np.ndarray] = None,
    columns: int = 8,
) -> float:
    """
    Scrive la matrice di confusione in CSV e, se date, le griglie appaiate e la pagina HTML

    Returns:
        Accuratezza di classificazione

    Raises:
        ValueError: matrice non valida o tutta a zero
    """
    accuracy = confusion_accuracy(matrix)
    m = np.asarray(matrix, dtype=np.int64)
    path = Path(path)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CONFUSION_HEADER)
    for label, row in zip(ROW_LABELS, m):
        writer.writerow([label, int(row[0]), int(row[1])])
    atomic_write_text(path, buffer.getvalue())

    grids = {}
    if real_images is not None and refined_images is not None:
        grid = paired_grid(real_images, refined_images, columns)
        for suffix in ("png", "pgm"):
            grids[suffix] = save_grid(grid, path.with_name(f"{path.stem}_grid.{suffix}")).name
        html = render_study_page({
            "matrix": m.tolist(),
            "row_labels": ROW_LABELS,
            "accuracy": accuracy,
            "total": int(m.sum()),
            "grid_png": grids["png"],
            "n_real": int(np.asarray(real_images).shape[0]),
            "n_refined": int(np.asarray(refined_images).shape[0]),
        })
        atomic_write_text(path.with_name(f"{path.stem}_study.html"), html)

    logger.info(f"💾 [HARNESS] Matrice di confusione salvata: {path} (accuratezza {accuracy:.1%})")
    return accuracy

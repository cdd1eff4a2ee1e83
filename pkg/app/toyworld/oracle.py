"""
Oracolo del centro della pupilla e trasformazioni geometriche di supporto
"""
from typing import Tuple

import numpy as np

from app.errors import PupilNotFoundError

OTSU_BINS = 256


def otsu_threshold(image: np.ndarray, bins: int = OTSU_BINS) -> float:
    """Soglia che massimizza la varianza tra le due classi (istogramma su [0, 1])"""
    values = np.clip(np.asarray(image, dtype=np.float64).ravel(), 0.0, 1.0)
    hist, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    centers = (edges[:-1] + edges[1:]) / 2.0
    weight_low = np.cumsum(hist)
    weight_high = weight_low[-1] - weight_low
    sum_low = np.cumsum(hist * centers)
    total = sum_low[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mean_low = sum_low / weight_low
        mean_high = (total - sum_low) / weight_high
        between = weight_low * weight_high * (mean_low - mean_high) ** 2
    between = np.nan_to_num(between, nan=-1.0)
    if between.max() <= 0:
        # immagine a un solo livello
        return float(values.min())
    return float(edges[int(np.argmax(between)) + 1])


def pupil_center_oracle(image: np.ndarray) -> Tuple[float, float]:
    """
    Centro (cx, cy) sub-pixel: centroide pesato (soglia - valore) dei pixel sotto soglia di Otsu

    Raises:
        PupilNotFoundError: nessun pixel sotto soglia ("no pupil found")
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=0)
    if img.ndim != 2:
        raise ValueError(f"pupil_center_oracle: attesa immagine H x W o C x H x W, ricevuta {img.shape}")
    threshold = otsu_threshold(img)
    weights = np.where(img < threshold, threshold - img, 0.0)
    total = weights.sum()
    if total <= 0:
        raise PupilNotFoundError("no pupil found: nessun pixel sotto la soglia adattiva")
    yy, xx = np.mgrid[0:img.shape[0], 0:img.shape[1]]
    return float((weights * xx).sum() / total), float((weights * yy).sum() / total)


def translate(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Traslazione intera sugli ultimi due assi con bordo replicato"""
    img = np.asarray(image)
    h, w = img.shape[-2:]
    pad_x, pad_y = abs(int(dx)), abs(int(dy))
    lead = [(0, 0)] * (img.ndim - 2)
    padded = np.pad(img, lead + [(pad_y, pad_y), (pad_x, pad_x)], mode="edge")
    top = pad_y - int(dy)
    left = pad_x - int(dx)
    return padded[..., top:top + h, left:left + w].copy()

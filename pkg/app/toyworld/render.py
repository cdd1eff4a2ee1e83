"""
Simulatore procedurale di immagini dell'occhio e processo di corruzione "reale" nascosto

Ogni immagine dipende solo da (seed, indice): i parametri generativi sono
estratti da default_rng([seed, indice]); la corruzione usa un generatore
separato default_rng([seed, indice, 1]).
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from app.models import WorldConfig
from app.toyworld.dataset import LabeledSet, Role, UnlabeledSet

logger = logging.getLogger(__name__)

# Intensità della sclera: centro e calo radiale fino agli angoli
SCLERA_CENTER = 0.9
SCLERA_FALLOFF = 0.15
IRIS_RANGE = (0.38, 0.5)
PUPIL_RANGE = (0.06, 0.12)
# Rapporto minimo tra asse lungo lo sguardo e asse trasverso (pupilla molto decentrata)
MIN_FORESHORTENING = 0.65
# Armoniche del contorno della pupilla usate dal jitter
JITTER_HARMONICS = (2, 3, 5)
PIXEL_RANGE = (0.05, 0.95)


@dataclass(frozen=True)
class EyeParams:
    """Parametri generativi di un'immagine (l'annotazione è centro + sguardo)"""
    center: Tuple[float, float]
    gaze: Tuple[float, float]
    pupil_radius: float
    foreshortening: float
    iris_value: float
    pupil_value: float


def sample_params(cfg: WorldConfig, rng: np.random.Generator) -> EyeParams:
    """Estrae i parametri di un occhio; la pupilla resta sempre dentro l'immagine"""
    angle = rng.uniform(0.0, 2.0 * np.pi)
    gaze = (float(np.cos(angle)), float(np.sin(angle)))
    max_offset = cfg.max_gaze_offset * min(cfg.height, cfg.width)
    rho = rng.uniform(0.2, 1.0) * max_offset
    cx = (cfg.width - 1) / 2.0 + rho * gaze[0]
    cy = (cfg.height - 1) / 2.0 + rho * gaze[1]
    radius = rng.uniform(cfg.pupil_radius_min, cfg.pupil_radius_max)
    ratio = rho / max_offset if max_offset > 0 else 0.0
    return EyeParams(
        center=(float(cx), float(cy)),
        gaze=gaze,
        pupil_radius=float(radius),
        foreshortening=float(1.0 - (1.0 - MIN_FORESHORTENING) * ratio),
        iris_value=float(rng.uniform(*IRIS_RANGE)),
        pupil_value=float(rng.uniform(*PUPIL_RANGE)),
    )


def _coverage(cfg: WorldConfig, params: EyeParams, radius: float,
              jitter: Optional[np.ndarray] = None) -> np.ndarray:
    """Copertura antialiasata [0,1] di un'ellisse centrata in params.center, compressa lungo lo sguardo"""
    yy, xx = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    dx, dy = xx - params.center[0], yy - params.center[1]
    gx, gy = params.gaze
    along = dx * gx + dy * gy
    across = -dx * gy + dy * gx
    local_radius = np.full_like(dx, radius)
    if jitter is not None:
        phi = np.arctan2(across, along)
        for (amp, phase), harmonic in zip(jitter, JITTER_HARMONICS):
            local_radius = local_radius + amp * np.cos(harmonic * phi + phase)
    norm = np.sqrt((along / params.foreshortening) ** 2 + across ** 2)
    return np.clip(0.5 - (norm - local_radius), 0.0, 1.0)


def render_eye(cfg: WorldConfig, params: EyeParams, jitter: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Rende un occhio 1 x H x W: sclera a gradiente radiale, anello dell'iride, pupilla scura

    Args:
        jitter: Coppie (ampiezza px, fase) per armonica, deformano il solo bordo della pupilla
    """
    yy, xx = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    cy, cx = (cfg.height - 1) / 2.0, (cfg.width - 1) / 2.0
    r2 = ((xx - cx) / max(cx, 1.0)) ** 2 + ((yy - cy) / max(cy, 1.0)) ** 2
    image = SCLERA_CENTER - SCLERA_FALLOFF * r2 / 2.0

    iris = _coverage(cfg, params, params.pupil_radius * cfg.iris_ratio)
    image = image * (1.0 - iris) + params.iris_value * iris
    pupil = _coverage(cfg, params, params.pupil_radius, jitter)
    image = image * (1.0 - pupil) + params.pupil_value * pupil
    return np.clip(image, *PIXEL_RANGE)[None].astype(np.float32)


def _annotation(params: EyeParams) -> np.ndarray:
    return np.array([*params.center, *params.gaze], dtype=np.float64)


def simulate(cfg: WorldConfig, n: int, seed: int, start: int = 0) -> LabeledSet:
    """
    n rendering puliti con annotazione = parametri generativi esatti

    Deterministico per (seed, indice): l'immagine i dipende solo da (seed, start + i).
    """
    if n < 1:
        raise ValueError(f"simulate: n deve essere >= 1, ricevuto: {n}")
    pixels = np.empty((n, 1, cfg.height, cfg.width), dtype=np.float32)
    annotations = np.empty((n, 4), dtype=np.float64)
    for i in range(n):
        params = sample_params(cfg, np.random.default_rng([seed, start + i]))
        pixels[i] = render_eye(cfg, params)
        annotations[i] = _annotation(params)
    logger.debug(f"[WORLD] Simulate: {n} immagini {cfg.height}x{cfg.width} (seed={seed})")
    return LabeledSet(pixels, annotations, Role.SYNTHETIC)


def held_out_truth(cfg: WorldConfig, n: int, seed: int, start: int = 0) -> np.ndarray:
    """
    Annotazioni generative (N x 4) di uno split: solo per la valutazione dell'harness

    Ripete le stesse estrazioni di simulate/realize senza rendere le immagini.
    """
    return np.stack([
        _annotation(sample_params(cfg, np.random.default_rng([seed, start + i])))
        for i in range(n)
    ])


def binomial_blur(image: np.ndarray, radius: int) -> np.ndarray:
    """Blur separabile binomiale (2*radius+1 tap) sugli ultimi due assi, bordo replicato; raggio 0 = identità"""
    if radius <= 0:
        return image
    kernel = np.array([1.0])
    for _ in range(2 * radius):
        kernel = np.convolve(kernel, [0.5, 0.5])
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2:]
    padded = np.pad(image, [(0, 0)] * (image.ndim - 2) + [(radius, radius), (radius, radius)], mode="edge")
    rows = sum(k * padded[..., :, i:i + w] for i, k in enumerate(kernel))
    return sum(k * rows[..., i:i + h, :] for i, k in enumerate(kernel))


def corrupt(cfg: WorldConfig, params: EyeParams, rng: np.random.Generator) -> np.ndarray:
    """Rendering con jitter del bordo, blur, guadagno/offset per immagine e rumore di sensore"""
    jitter = None
    if cfg.jitter_amplitude > 0:
        jitter = np.stack([
            rng.uniform(0.0, cfg.jitter_amplitude, size=len(JITTER_HARMONICS)),
            rng.uniform(0.0, 2.0 * np.pi, size=len(JITTER_HARMONICS)),
        ], axis=1)
    image = render_eye(cfg, params, jitter).astype(np.float64)
    image = binomial_blur(image, cfg.blur_radius)
    gain = rng.uniform(cfg.gain_min, cfg.gain_max)
    bias = rng.uniform(cfg.bias_min, cfg.bias_max)
    if gain != 1.0 or bias != 0.0:
        image = image * gain + bias
    if cfg.noise_sigma > 0:
        image = image + rng.normal(0.0, cfg.noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def realize(cfg: WorldConfig, n: int, seed: int, start: int = 0) -> UnlabeledSet:
    """
    n immagini "reali": stessi parametri generativi di simulate più la corruzione nascosta

    Le annotazioni non escono da qui: l'harness le ricostruisce con held_out_truth.
    Con corruzione disattivata il risultato coincide bit a bit con simulate.
    """
    if n < 1:
        raise ValueError(f"realize: n deve essere >= 1, ricevuto: {n}")
    pixels = np.empty((n, 1, cfg.height, cfg.width), dtype=np.float32)
    for i in range(n):
        params = sample_params(cfg, np.random.default_rng([seed, start + i]))
        pixels[i] = corrupt(cfg, params, np.random.default_rng([seed, start + i, 1]))
    logger.debug(f"[WORLD] Realize: {n} immagini {cfg.height}x{cfg.width} (seed={seed})")
    return UnlabeledSet(pixels)

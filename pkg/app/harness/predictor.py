"""
Regressore a valle: pila conv-relu-maxpool, due layer densi, 4 uscite
(centro della pupilla cx, cy e direzione dello sguardo gx, gy)

I target vengono normalizzati: centro relativo al centro immagine diviso per
metà del lato minore; lo sguardo è già unitario.
"""
import logging
from typing import List, Optional, Tuple, Union

import numpy as np

from app.autograd import Tape, Tensor, backward, ops, sgd_step
from app.errors import FirewallError
from app.models import PredictorConfig
from app.nets.params import NetParams, he_normal
from app.toyworld.dataset import LabeledSet, Role, UnlabeledSet

logger = logging.getLogger(__name__)

KIND = "predictor"
OUTPUTS = 4


def build_predictor(cfg: PredictorConfig, height: int, width: int, seed: int, input_channels: int = 1) -> NetParams:
    """Parametri del regressore (deterministici dato il seed)"""
    rng = np.random.default_rng(seed)
    arch = {"filters": list(cfg.filters), "hidden": cfg.hidden, "height": height, "width": width,
            "input_channels": input_channels}
    params = NetParams(KIND, arch)
    channels, h, w = input_channels, height, width
    for i, filters in enumerate(cfg.filters):
        params.add(f"conv{i}.w", he_normal(rng, (filters, channels, 3, 3), channels * 9))
        params.add(f"conv{i}.b", np.zeros(filters, dtype=np.float32))
        channels, h, w = filters, h // 2, w // 2
    if h < 1 or w < 1:
        raise ValueError(f"Immagine {height}x{width} troppo piccola per {len(cfg.filters)} livelli di pooling")
    flat = channels * h * w
    params.add("fc0.w", he_normal(rng, (flat, cfg.hidden), flat))
    params.add("fc0.b", np.zeros(cfg.hidden, dtype=np.float32))
    params.add("fc1.w", he_normal(rng, (cfg.hidden, OUTPUTS), cfg.hidden) * 0.1)
    params.add("fc1.b", np.zeros(OUTPUTS, dtype=np.float32))
    return params


def _forward(params: NetParams, images: np.ndarray) -> Tensor:
    h = Tensor(images)
    for i in range(len(params.arch["filters"])):
        h = ops.relu(ops.conv2d(h, params[f"conv{i}.w"], params[f"conv{i}.b"], stride=1, pad=1))
        h = ops.maxpool(h, 2, 2)
    h = ops.relu(ops.affine(ops.flatten(h), params["fc0.w"], params["fc0.b"]))
    return ops.affine(h, params["fc1.w"], params["fc1.b"])


def _scale(params: NetParams) -> Tuple[np.ndarray, float]:
    height, width = params.arch["height"], params.arch["width"]
    center = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    return center, min(height, width) / 2.0


def normalize_targets(params: NetParams, annotations: np.ndarray) -> np.ndarray:
    center, scale = _scale(params)
    out = np.array(annotations, dtype=np.float64, copy=True)
    out[:, :2] = (out[:, :2] - center) / scale
    return out


def denormalize_outputs(params: NetParams, outputs: np.ndarray) -> np.ndarray:
    center, scale = _scale(params)
    out = np.array(outputs, dtype=np.float64, copy=True)
    out[:, :2] = out[:, :2] * scale + center
    return out


def predict(params: NetParams, images: Union[np.ndarray, UnlabeledSet, LabeledSet], batch_size: int = 128) -> np.ndarray:
    """Predizioni N x 4 in unità originali (px per il centro, vettore per lo sguardo)"""
    pixels = images.pixels if hasattr(images, "pixels") else np.asarray(images, dtype=np.float32)
    chunks = [_forward(params, pixels[s:s + batch_size]).data for s in range(0, pixels.shape[0], batch_size)]
    return denormalize_outputs(params, np.concatenate(chunks, axis=0))


def train_predictor(
    dataset: Union[LabeledSet, UnlabeledSet],
    cfg: PredictorConfig,
    seed: Optional[int] = None,
    epochs: Optional[int] = None,
    lr: Optional[float] = None,
) -> Tuple[NetParams, List[float]]:
    """
    SGD sull'errore quadratico del vettore a 4 componenti

    Returns:
        (parametri, loss media per immagine a ogni epoca)

    Raises:
        FirewallError: dataset di immagini reali (senza annotazioni)
    """
    if isinstance(dataset, UnlabeledSet) or getattr(dataset, "role", None) == Role.REAL:
        raise FirewallError("train_predictor: le immagini reali non hanno annotazioni utilizzabili")
    seed = cfg.seed if seed is None else seed
    epochs = cfg.epochs if epochs is None else epochs
    lr = cfg.lr if lr is None else lr

    _, channels, height, width = dataset.pixels.shape
    params = build_predictor(cfg, height, width, seed, input_channels=channels)
    targets = normalize_targets(params, dataset.annotations)
    rng = np.random.default_rng([seed, 1])
    n = len(dataset)
    history: List[float] = []

    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            with Tape():
                out = _forward(params, dataset.pixels[idx])
                loss = ops.sq_diff(out, Tensor(targets[idx]))
                backward(loss, params.tensors())
            sgd_step(params, lr / len(idx))
            total += loss.item()
        history.append(total / n)
        logger.debug(f"[HARNESS] Predittore epoca {epoch}/{epochs}: loss={history[-1]:.5f}")
    logger.info(f"[HARNESS] Predittore addestrato su {n} immagini ({dataset.role.value}): loss finale {history[-1]:.5f}")
    return params, history

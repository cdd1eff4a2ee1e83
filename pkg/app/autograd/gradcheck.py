"""
Verifica dei gradienti con differenze finite centrali e oracolo di convoluzione a cicli annidati
"""
import logging
from typing import Callable, List, Optional

import numpy as np

from app.autograd.tensor import Tape, Tensor, backward, precision
from app.errors import NumericalAbortError

logger = logging.getLogger(__name__)

# Denominatore minimo dell'errore relativo
REL_ERROR_FLOOR = 1e-8


def _tensors(params) -> List[Tensor]:
    return list(params.tensors()) if hasattr(params, "tensors") else list(params)


def _eval_loss(builder: Callable[[], Tensor]) -> float:
    value = builder().item()
    if not np.isfinite(value):
        raise NumericalAbortError(f"grad_check: loss non finita ({value})")
    return value


def grad_check(
    builder: Callable[[], Tensor],
    params,
    eps: float = 1e-3,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Confronta i gradienti analitici con le differenze finite centrali

    Il builder viene eseguito in float64. L'errore per entry è
    |analitico - centrale| / max(|analitico|, |centrale|, REL_ERROR_FLOOR).

    Args:
        builder: Costruisce la loss scalare a partire dai parametri (deterministico)
        params: NetParams o iterabile di Tensor con requires_grad
        eps: Passo delle differenze finite
        max_entries: Se dato, verifica un sottoinsieme casuale (seed) di entry per parametro

    Returns:
        Errore relativo massimo su tutte le entry verificate

    Raises:
        NumericalAbortError: loss non finita
    """
    tensors = _tensors(params)
    originals = [(t.data, t.grad) for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0

    try:
        with precision(np.float64):
            for t in tensors:
                t.data = t.data.astype(np.float64)
                t.grad = None

            with Tape():
                loss = builder()
                if not np.isfinite(loss.item()):
                    raise NumericalAbortError(f"grad_check: loss non finita ({loss.item()})")
                backward(loss, tensors)

            for t in tensors:
                analytic = t.grad.astype(np.float64)
                flat = t.data.reshape(-1)
                indices = np.arange(flat.size)
                if max_entries is not None and flat.size > max_entries:
                    indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
                param_worst = 0.0
                for idx in indices:
                    original = flat[idx]
                    flat[idx] = original + eps
                    plus = _eval_loss(builder)
                    flat[idx] = original - eps
                    minus = _eval_loss(builder)
                    flat[idx] = original
                    central = (plus - minus) / (2.0 * eps)
                    a = analytic.reshape(-1)[idx]
                    err = abs(a - central) / max(abs(a), abs(central), REL_ERROR_FLOOR)
                    param_worst = max(param_worst, err)
                logger.debug(f"grad_check {t.name or t.shape}: errore relativo max {param_worst:.3e}")
                worst = max(worst, param_worst)
    finally:
        for t, (data, grad) in zip(tensors, originals):
            t.data = data
            t.grad = grad

    return worst


def conv2d_reference(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None,
                     stride: int = 1, pad: int = 0) -> np.ndarray:
    """Convoluzione di riferimento a cicli annidati (lenta, solo per test)"""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for yi in range(ho):
                for xi in range(wo):
                    acc = 0.0 if b is None else float(b[oi])
                    for ci in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                acc += xp[ni, ci, yi * stride + ki, xi * stride + kj] * w[oi, ci, ki, kj]
                    out[ni, oi, yi, xi] = acc
    return out

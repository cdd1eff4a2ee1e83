"""
Discesa del gradiente stocastica e schedule del learning rate
"""
import logging
from typing import Iterable, Optional

import numpy as np

from app.autograd.tensor import Tensor
from app.errors import GradientError

logger = logging.getLogger(__name__)


def _tensors(params) -> list:
    return list(params.tensors()) if hasattr(params, "tensors") else list(params)


def sgd_step(params, lr: float):
    """
    p <- p - lr * grad(p), poi azzera i gradienti

    Args:
        params: NetParams o iterabile di Tensor
        lr: learning rate (>= 0)

    Returns:
        params (aggiornati in place)

    Raises:
        GradientError: se un parametro non ha gradiente
    """
    tensors = _tensors(params)
    missing = [t.name or repr(t) for t in tensors if t.grad is None]
    if missing:
        raise GradientError(f"sgd_step: gradiente mancante per {', '.join(missing[:5])}")
    if lr < 0:
        raise ValueError(f"sgd_step: learning rate negativo {lr}")
    for t in tensors:
        t.data = (t.data.astype(np.float64) - lr * t.grad.astype(np.float64)).astype(t.data.dtype)
        t.grad = None
    return params


def zero_grad(params: Iterable[Tensor]) -> None:
    for t in _tensors(params):
        t.grad = None


def scheduled_lr(base_lr: float, step: int, schedule: str = "constant",
                 decay_to: Optional[float] = None, decay_at: Optional[int] = None) -> float:
    """
    Learning rate allo step dato (step contati da 1)

    - constant: base_lr
    - step: base_lr fino a decay_at escluso, poi decay_to
    """
    schedule = getattr(schedule, "value", schedule)
    if schedule == "constant":
        return base_lr
    if schedule == "step":
        if decay_to is None or decay_at is None:
            raise ValueError("Schedule 'step' richiede decay_to e decay_at")
        return base_lr if step < decay_at else decay_to
    raise ValueError(f"Schedule learning rate sconosciuto: {schedule}")

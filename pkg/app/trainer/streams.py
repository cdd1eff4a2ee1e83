"""
Flussi di mini-batch deterministici su un pool di immagini
"""
from typing import Any, Dict, Sequence, Union

import numpy as np


class ImageStream:
    """
    Campionatore seedato di mini-batch da un pool N x C x H x W

    Ogni batch è estratto senza reimmissione (con reimmissione solo se il
    pool è più piccolo del batch). Lo stato del generatore è esportabile
    per il resume.
    """

    def __init__(self, pool: np.ndarray, seed: Union[int, Sequence[int]], name: str = "stream"):
        pool = np.asarray(pool, dtype=np.float32)
        if pool.ndim != 4 or pool.shape[0] == 0:
            raise ValueError(f"ImageStream '{name}': atteso pool N x C x H x W non vuoto, ricevuto {pool.shape}")
        self.pool = pool
        self.name = name
        self.rng = np.random.default_rng(seed)
        self.drawn = 0

    def __len__(self) -> int:
        return self.pool.shape[0]

    @property
    def image_shape(self):
        return self.pool.shape[1:]

    def next(self, batch_size: int) -> np.ndarray:
        """Prossimo mini-batch (copia)"""
        if batch_size < 1:
            raise ValueError(f"batch_size deve essere >= 1, ricevuto: {batch_size}")
        replace = batch_size > len(self)
        idx = self.rng.choice(len(self), size=batch_size, replace=replace)
        self.drawn += batch_size
        return self.pool[idx].copy()

    def state_dict(self) -> Dict[str, Any]:
        return {"rng_state": self.rng.bit_generator.state, "drawn": self.drawn}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.rng.bit_generator.state = state["rng_state"]
        self.drawn = int(state["drawn"])

"""
Collezione ordinata di parametri nominati di una rete (theta per il refiner, phi per il discriminatore)
"""
import hashlib
from collections import OrderedDict
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from app.autograd import Tensor


class NetParams:
    """
    Parametri di una rete: coppie (nome, Tensor) in ordine stabile + tag del tipo di rete

    L'ordine di inserimento è l'ordine di iterazione (e di serializzazione).
    """

    def __init__(self, kind: str, arch: Optional[Dict[str, Any]] = None):
        self.kind = kind
        self.arch: Dict[str, Any] = dict(arch or {})
        self._items: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, data: np.ndarray) -> Tensor:
        """Aggiunge un parametro; i nomi devono essere unici"""
        if name in self._items:
            raise ValueError(f"Parametro duplicato: {name}")
        tensor = Tensor(np.asarray(data, dtype=np.float32), requires_grad=True, name=name)
        self._items[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def names(self) -> List[str]:
        return list(self._items)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._items.items())

    def tensors(self) -> List[Tensor]:
        return list(self._items.values())

    def count(self) -> int:
        """Numero totale di entry scalari"""
        return int(sum(t.size for t in self._items.values()))

    def fingerprint(self) -> str:
        """SHA256 su nomi, shape e bytes dei parametri"""
        h = hashlib.sha256()
        h.update(self.kind.encode("utf-8"))
        for name, tensor in self._items.items():
            h.update(name.encode("utf-8"))
            h.update(repr(tensor.shape).encode("utf-8"))
            h.update(np.ascontiguousarray(tensor.data, dtype=np.float32).tobytes())
        return h.hexdigest()

    def copy(self) -> "NetParams":
        """Copia profonda (dati copiati, gradienti scartati)"""
        clone = NetParams(self.kind, self.arch)
        for name, tensor in self._items.items():
            clone.add(name, tensor.data.copy())
        return clone

    def equals(self, other: "NetParams") -> bool:
        """Uguaglianza bit a bit di nomi, ordine e valori"""
        if self.kind != other.kind or self.names() != other.names():
            return False
        return all(
            a.shape == b.shape and a.data.tobytes() == b.data.tobytes()
            for a, b in zip(self.tensors(), other.tensors())
        )

    def __repr__(self) -> str:
        return f"NetParams(kind={self.kind!r}, tensors={len(self)}, entries={self.count()})"


def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Inizializzazione gaussiana scalata sul fan-in: N(0, 2 / fan_in)"""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


@contextmanager
def frozen(params: NetParams):
    """
    Congela i parametri: durante il blocco non ricevono gradiente e non entrano nel grafo
    """
    previous = [(t, t.requires_grad) for t in params.tensors()]
    for t, _ in previous:
        t.requires_grad = False
    try:
        yield params
    finally:
        for t, flag in previous:
            t.requires_grad = flag

"""
Buffer di storia delle immagini raffinate

Il discriminatore vede metà del flusso fake dal refiner corrente e metà
campionata da immagini prodotte da refiner precedenti. Dopo ogni update
b/2 slot scelti a caso vengono sostituiti con le immagini appena raffinate.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from app.autograd import read_tns, write_tns
from app.errors import CheckpointError, ReplayBufferError, TensorFormatError
from app.models import HistoryMode
from app.paths import atomic_write_json

logger = logging.getLogger(__name__)

IMAGES_FILE = "buffer.tns"
STATE_FILE = "buffer.json"


class ReplayBuffer:
    """
    Storia a capacità fissa B di immagini raffinate

    Ogni slot porta un id di origine (contatore delle uscite del refiner) così
    da poter verificare da quale output passato proviene. Tutta la casualità
    viene dal generatore del buffer.
    """

    def __init__(self, capacity: int, image_shape: Sequence[int], seed: Union[int, Sequence[int]] = 0):
        if capacity < 1:
            raise ReplayBufferError(f"Capacità del buffer non valida: {capacity}")
        self.capacity = int(capacity)
        self.image_shape = tuple(int(s) for s in image_shape)
        self.rng = np.random.default_rng(seed)
        self._images = np.zeros((self.capacity, *self.image_shape), dtype=np.float32)
        self._origins = np.full(self.capacity, -1, dtype=np.int64)
        self._filled = False
        self._next_origin = 0

    @property
    def filled(self) -> bool:
        return self._filled

    @property
    def size(self) -> int:
        return self.capacity if self._filled else 0

    def __len__(self) -> int:
        return self.size

    @property
    def origins(self) -> np.ndarray:
        """Id di origine per slot (copia); -1 sugli slot mai riempiti"""
        return self._origins.copy()

    def images(self) -> np.ndarray:
        """Copia del contenuto (mai alias)"""
        return self._images.copy()

    def _check_images(self, images: np.ndarray, what: str) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[1:] != self.image_shape:
            raise ReplayBufferError(f"{what}: attese immagini N x {self.image_shape}, ricevute {images.shape}")
        return images

    def _issue_origins(self, n: int, origins: Optional[Sequence[int]]) -> np.ndarray:
        if origins is not None:
            ids = np.asarray(origins, dtype=np.int64)
            if ids.shape != (n,):
                raise ReplayBufferError(f"Id di origine: attesi {n}, ricevuti {ids.shape}")
            self._next_origin = max(self._next_origin, int(ids.max()) + 1)
            return ids
        ids = np.arange(self._next_origin, self._next_origin + n, dtype=np.int64)
        self._next_origin += n
        return ids

    def _require_filled(self, what: str) -> None:
        if not self._filled:
            raise ReplayBufferError(f"{what}: buffer non ancora riempito (seed_fill)")

    def seed_fill(self, refined: np.ndarray, origins: Optional[Sequence[int]] = None) -> None:
        """
        Riempie il buffer vuoto ciclando le immagini date (uscite del refiner pre-addestrato)

        Raises:
            ReplayBufferError: buffer già pieno o nessuna immagine
        """
        if self._filled:
            raise ReplayBufferError("seed_fill: il buffer è già stato riempito")
        refined = self._check_images(refined, "seed_fill")
        n = refined.shape[0]
        if n == 0:
            raise ReplayBufferError("seed_fill: nessuna immagine fornita")
        ids = self._issue_origins(n, origins)
        cycle = np.arange(self.capacity) % n
        self._images[:] = refined[cycle]
        self._origins[:] = ids[cycle]
        self._filled = True
        logger.info(f"[REPLAY] Buffer riempito: B={self.capacity} da {n} immagini")

    def sample_history(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Estrae k slot distinti uniformemente, consumando il generatore del buffer

        Returns:
            (immagini k x C x H x W, id di origine) come copie

        Raises:
            ReplayBufferError: buffer non riempito o k > B
        """
        self._require_filled("sample_history")
        if k > self.capacity:
            raise ReplayBufferError(f"sample_history: richieste {k} immagini, B={self.capacity}")
        slots = self.rng.choice(self.capacity, size=k, replace=False)
        return self._images[slots].copy(), self._origins[slots].copy()

    def compose_disc_batch(
        self,
        current_refined: np.ndarray,
        real: np.ndarray,
        mode: Union[HistoryMode, str] = HistoryMode.AUGMENT,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Compone il flusso fake del discriminatore

        - augment: le h immagini correnti + h dalla storia (2h fake)
        - split: h/2 correnti + h/2 dalla storia (h fake)

        Le reali vengono restituite così come sono (copia): il chiamante sceglie
        quante passarne per tenere bilanciate le due somme della loss.

        Returns:
            (fakes, reals)
        """
        self._require_filled("compose_disc_batch")
        current = self._check_images(current_refined, "compose_disc_batch")
        mode = HistoryMode(mode)
        h = current.shape[0]
        if mode == HistoryMode.SPLIT:
            if h % 2 != 0:
                raise ReplayBufferError(f"compose_disc_batch(split): numero di correnti dispari ({h})")
            current = current[: h // 2]
        history, _ = self.sample_history(current.shape[0])
        fakes = np.concatenate([current, history], axis=0)
        return fakes, np.array(real, dtype=np.float32, copy=True)

    def replace_half(self, new_refined: np.ndarray, origins: Optional[Sequence[int]] = None) -> np.ndarray:
        """
        Sostituisce len(new_refined) slot distinti scelti a caso con le nuove immagini

        Returns:
            Indici degli slot sostituiti

        Raises:
            ReplayBufferError: buffer vuoto o più immagini nuove della capacità
        """
        self._require_filled("replace_half")
        new = self._check_images(new_refined, "replace_half")
        n = new.shape[0]
        if n > self.capacity:
            raise ReplayBufferError(f"replace_half: {n} immagini nuove > capacità B={self.capacity}")
        ids = self._issue_origins(n, origins)
        slots = self.rng.choice(self.capacity, size=n, replace=False)
        self._images[slots] = new
        self._origins[slots] = ids
        logger.debug(f"[REPLAY] Sostituiti {n}/{self.capacity} slot")
        return slots

    # ------------------------------------------------------------------ persistenza

    def state_dict(self) -> Dict[str, Any]:
        """Stato serializzabile in JSON (senza le immagini, salvate a parte da save())"""
        return {
            "capacity": self.capacity,
            "image_shape": list(self.image_shape),
            "filled": self._filled,
            "next_origin": self._next_origin,
            "origins": self._origins.tolist(),
            "rng_state": self.rng.bit_generator.state,
        }

    def save(self, directory: Path) -> Path:
        """
        Salva immagini (stack TNS1) e stato (JSON) nella directory

        Returns:
            La directory scritta
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_tns(directory / IMAGES_FILE, self._images)
        atomic_write_json(directory / STATE_FILE, self.state_dict())
        logger.debug(f"💾 [REPLAY] Buffer salvato: {directory}")
        return directory

    @classmethod
    def load(cls, directory: Path) -> "ReplayBuffer":
        """
        Ricostruisce il buffer da save()

        Raises:
            CheckpointError: file mancanti, corrotti o incoerenti tra loro
        """
        directory = Path(directory)
        try:
            with open(directory / STATE_FILE, "r", encoding="utf-8") as f:
                state = json.load(f)
            images = read_tns(directory / IMAGES_FILE)
            buffer = cls(state["capacity"], state["image_shape"])
            expected = (buffer.capacity, *buffer.image_shape)
            if images.shape != expected:
                raise CheckpointError(f"Buffer corrotto: immagini {images.shape}, attese {expected}")
            origins = np.asarray(state["origins"], dtype=np.int64)
            if origins.shape != (buffer.capacity,):
                raise CheckpointError(f"Buffer corrotto: {origins.shape[0]} id di origine per B={buffer.capacity}")
            buffer._images[:] = images
            buffer._origins[:] = origins
            buffer._filled = bool(state["filled"])
            buffer._next_origin = int(state["next_origin"])
            buffer.rng.bit_generator.state = state["rng_state"]
        except CheckpointError:
            raise
        except (OSError, TensorFormatError, ReplayBufferError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"Buffer corrotto o mancante in {directory}: {e}") from e
        return buffer

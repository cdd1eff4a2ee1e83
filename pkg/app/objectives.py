"""
Funzioni di loss del refiner e del discriminatore e trasformazioni di feature psi

Tutte le loss sono somme (non medie) su patch e batch; la scala viene
assorbita dal learning rate (vedi TrainConfig.normalize_lr).
"""
import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from app.autograd import Tensor, ops
from app.errors import ShapeMismatchError
from app.models import FeatureKind

logger = logging.getLogger(__name__)

# Indici di canale della mappa di patch
FAKE = 0
REAL = 1


@dataclass(frozen=True)
class PatchMap:
    """
    Mappa di probabilità N x 2 x h x w prodotta dal discriminatore

    Canale 0 = P(raffinata), canale 1 = P(reale); somma per patch = 1.
    """
    probs: Tensor

    def __post_init__(self):
        shape = self.probs.shape
        if len(shape) != 4 or shape[1] != 2:
            raise ShapeMismatchError(f"PatchMap: attesa shape N x 2 x h x w, ricevuta {shape}")

    @property
    def grid(self):
        return self.probs.shape[2], self.probs.shape[3]

    @property
    def patch_count(self) -> int:
        """Numero totale di patch (batch incluso)"""
        n, _, h, w = self.probs.shape
        return n * h * w

    def fake(self) -> Tensor:
        return ops.select_channel(self.probs, FAKE)

    def real(self) -> Tensor:
        return ops.select_channel(self.probs, REAL)


MapLike = Union[PatchMap, Tensor]


def as_patch_map(value: MapLike) -> PatchMap:
    return value if isinstance(value, PatchMap) else PatchMap(value)


class FeatureTransform:
    """
    psi: mappa dallo spazio immagine allo spazio di feature usato dalla self-regularization

    - identity: psi(x) = x (stesso oggetto)
    - channel_mean: media dei canali, 1 canale
    - derivatives: differenze in avanti della media dei canali, 2 canali (d/dx, d/dy)
    """

    def __init__(self, kind: Union[FeatureKind, str] = FeatureKind.IDENTITY):
        self.kind = FeatureKind(kind)

    def apply(self, x: Tensor) -> Tensor:
        if self.kind == FeatureKind.IDENTITY:
            return x
        if self.kind == FeatureKind.CHANNEL_MEAN:
            return ops.avg_channel(x)
        return ops.forward_diff(ops.avg_channel(x))

    __call__ = apply

    def __repr__(self) -> str:
        return f"FeatureTransform({self.kind.value})"


def _psi(psi: Union[FeatureTransform, FeatureKind, str, None]) -> FeatureTransform:
    if isinstance(psi, FeatureTransform):
        return psi
    return FeatureTransform(psi or FeatureKind.IDENTITY)


def loss_discriminator(map_refined: MapLike, map_real: MapLike) -> Tensor:
    """
    Cross-entropy per patch del discriminatore

    -sum log P_fake(x_tilde) - sum log(1 - P_fake(y)), su batch e patch.

    Raises:
        ShapeMismatchError: griglie di patch diverse tra i due flussi
    """
    refined, real = as_patch_map(map_refined), as_patch_map(map_real)
    if refined.grid != real.grid:
        raise ShapeMismatchError(
            f"loss_discriminator: griglie di patch diverse {refined.probs.shape} vs {real.probs.shape}"
        )
    fake_term = ops.sum(ops.log(refined.fake()))
    real_term = ops.sum(ops.log(real.real()))
    return ops.scale(ops.add(fake_term, real_term), -1.0)


def loss_realism(map_refined: MapLike) -> Tensor:
    """-sum log(1 - P_fake(x_tilde)): il gradiente raggiunge solo i parametri non congelati"""
    refined = as_patch_map(map_refined)
    return ops.scale(ops.sum(ops.log(refined.real())), -1.0)


def loss_self_reg(refined: Tensor, synthetic: Tensor,
                  psi: Union[FeatureTransform, FeatureKind, str, None] = None) -> Tensor:
    """
    sum |psi(x_tilde) - psi(x)| su tutte le entry

    Raises:
        ShapeMismatchError: shape diverse dopo psi
    """
    transform = _psi(psi)
    return ops.l1_diff(transform(refined), transform(synthetic))


def refiner_loss_terms(map_refined: MapLike, refined: Tensor, synthetic: Tensor, lam: float,
                       psi: Union[FeatureTransform, FeatureKind, str, None] = None
                       ) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Loss del refiner e le sue due componenti

    Returns:
        (totale, realism, self_reg) con totale = realism + lambda * self_reg
    """
    if lam < 0:
        raise ValueError(f"lambda deve essere >= 0, ricevuto: {lam}")
    realism = loss_realism(map_refined)
    reg = loss_self_reg(refined, synthetic, psi)
    if lam == 0:
        return realism, realism, reg
    return ops.add(realism, ops.scale(reg, lam)), realism, reg


def loss_refiner(map_refined: MapLike, refined: Tensor, synthetic: Tensor, lam: float,
                 psi: Union[FeatureTransform, FeatureKind, str, None] = None) -> Tensor:
    """loss_realism + lambda * loss_self_reg"""
    total, _, _ = refiner_loss_terms(map_refined, refined, synthetic, lam, psi)
    return total


def mean_fake_probability(prob_map: Union[MapLike, np.ndarray]) -> float:
    """Media di P_fake su tutte le patch (statistica di monitoraggio, fuori dal grafo)"""
    if isinstance(prob_map, PatchMap):
        prob_map = prob_map.probs
    data = prob_map.data if isinstance(prob_map, Tensor) else prob_map
    return float(np.asarray(data, dtype=np.float64)[:, FAKE].mean())

"""
Discriminatore D_phi: rete convoluzionale che produce una mappa w x h di probabilità per patch

Canale 0 = probabilità che la patch sia raffinata (fake), canale 1 = reale.
Con global_pool (ablazione) i logit vengono mediati spazialmente: una sola decisione per immagine.
"""
import logging
from typing import Tuple, Union

import numpy as np

from app.autograd import Tensor, ops
from app.errors import ShapeMismatchError
from app.models import DiscArch, LayerKind
from app.nets.params import NetParams, he_normal

logger = logging.getLogger(__name__)

KIND = "discriminator"


def build_discriminator(arch: DiscArch, seed: int) -> NetParams:
    """Costruisce i parametri del discriminatore (He, bias a zero)"""
    rng = np.random.default_rng(seed)
    phi = NetParams(KIND, arch.model_dump(mode="json"))
    channels = arch.input_channels
    for i, layer in enumerate(arch.layers):
        if layer.kind != LayerKind.CONV:
            continue
        k = layer.kernel
        phi.add(f"layer{i}.w", he_normal(rng, (layer.filters, channels, k, k), channels * k * k))
        phi.add(f"layer{i}.b", np.zeros(layer.filters, dtype=np.float32))
        channels = layer.filters
    logger.debug(f"Discriminatore costruito: {phi} (seed={seed}, rf={receptive_field(arch)})")
    return phi


def disc_arch(phi: NetParams) -> DiscArch:
    if phi.kind != KIND:
        raise ValueError(f"Parametri di tipo '{phi.kind}', attesi '{KIND}'")
    return DiscArch.model_validate(phi.arch)


def receptive_field(arch: DiscArch) -> int:
    """Lato del campo recettivo di un neurone dell'ultimo layer"""
    rf, jump = 1, 1
    for layer in arch.layers:
        rf += (layer.kernel - 1) * jump
        jump *= layer.stride
    return rf


def patch_grid(arch: DiscArch, height: int, width: int) -> Tuple[int, int]:
    """Dimensioni (h, w) della mappa di patch per un input HxW"""
    if arch.global_pool:
        return 1, 1
    h, w = height, width
    for layer in arch.layers:
        h = ops.conv_output_size(h, layer.kernel, layer.stride, layer.pad)
        w = ops.conv_output_size(w, layer.kernel, layer.stride, layer.pad)
    return h, w


def receptive_field_ratio(arch: DiscArch, height: int, width: int) -> float:
    """Rapporto campo recettivo / lato maggiore dell'immagine (località della loss)"""
    return receptive_field(arch) / max(height, width)


def discriminate(phi: NetParams, batch: Union[Tensor, np.ndarray]) -> Tensor:
    """
    Mappa di probabilità N x 2 x h x w, softmax per patch

    Raises:
        ShapeMismatchError: input più piccolo del campo recettivo o canali errati
    """
    arch = disc_arch(phi)
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 4 or x.shape[1] != arch.input_channels:
        raise ShapeMismatchError(
            f"discriminate: input {x.shape} incompatibile con discriminatore a {arch.input_channels} canali"
        )
    rf = receptive_field(arch)
    if x.shape[2] < rf or x.shape[3] < rf:
        raise ShapeMismatchError(f"discriminate: input {x.shape} più piccolo del campo recettivo {rf}")

    h = x
    last = len(arch.layers) - 1
    for i, layer in enumerate(arch.layers):
        if layer.kind == LayerKind.MAXPOOL:
            h = ops.maxpool(h, layer.kernel, layer.stride, pad=layer.pad)
            continue
        h = ops.conv2d(h, phi[f"layer{i}.w"], phi[f"layer{i}.b"], stride=layer.stride, pad=layer.pad)
        if i != last:
            h = ops.relu(h)
    if arch.global_pool:
        h = ops.spatial_mean(h)
    return ops.softmax2(h)


def discriminate_array(phi: NetParams, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Mappe di probabilità per un array di immagini, senza tape"""
    chunks = [
        discriminate(phi, images[start:start + batch_size]).data
        for start in range(0, images.shape[0], batch_size)
    ]
    return np.concatenate(chunks, axis=0)

"""
Refiner R_theta: rete ResNet completamente convoluzionale, senza stride né pooling

stem conv KxK -> ReLU -> blocchi [conv-relu-conv + skip, relu dopo la somma] -> conv 1x1 -> tanh -> [0, 1]
"""
import logging
from typing import Union

import numpy as np

from app.autograd import Tensor, ops
from app.errors import ShapeMismatchError
from app.models import RefinerArch
from app.nets.params import NetParams, he_normal

logger = logging.getLogger(__name__)

KIND = "refiner"


def refiner_param_count(arch: RefinerArch) -> int:
    """Numero di parametri in forma chiusa"""
    c, f, k = arch.input_channels, arch.stem_filters, arch.kernel
    stem = f * c * k * k + f
    blocks = arch.resblocks * 2 * (f * f * k * k + f)
    head = c * f + c
    return stem + blocks + head


def build_refiner(arch: RefinerArch, seed: int) -> NetParams:
    """
    Costruisce i parametri del refiner (deterministici dato il seed)

    Convoluzioni inizializzate He, bias a zero.
    """
    rng = np.random.default_rng(seed)
    c, f, k = arch.input_channels, arch.stem_filters, arch.kernel
    theta = NetParams(KIND, arch.model_dump(mode="json"))

    theta.add("stem.w", he_normal(rng, (f, c, k, k), c * k * k))
    theta.add("stem.b", np.zeros(f, dtype=np.float32))
    for i in range(arch.resblocks):
        for j in (1, 2):
            theta.add(f"block{i}.conv{j}.w", he_normal(rng, (f, f, k, k), f * k * k))
            theta.add(f"block{i}.conv{j}.b", np.zeros(f, dtype=np.float32))
    theta.add("head.w", he_normal(rng, (c, f, 1, 1), f))
    theta.add("head.b", np.zeros(c, dtype=np.float32))

    logger.debug(f"Refiner costruito: {theta} (seed={seed})")
    return theta


def refiner_arch(theta: NetParams) -> RefinerArch:
    if theta.kind != KIND:
        raise ValueError(f"Parametri di tipo '{theta.kind}', attesi '{KIND}'")
    return RefinerArch.model_validate(theta.arch)


def refine(theta: NetParams, batch: Union[Tensor, np.ndarray]) -> Tensor:
    """
    x_tilde = R_theta(x): stessa shape dell'input, valori in (0, 1)

    Raises:
        ShapeMismatchError: canali diversi dall'arch o lato più piccolo del kernel
    """
    arch = refiner_arch(theta)
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 4 or x.shape[1] != arch.input_channels:
        raise ShapeMismatchError(
            f"refine: input {x.shape} incompatibile con refiner a {arch.input_channels} canali"
        )
    if x.shape[2] < arch.kernel or x.shape[3] < arch.kernel:
        raise ShapeMismatchError(f"refine: input {x.shape} più piccolo del kernel {arch.kernel}")

    pad = arch.kernel // 2
    h = ops.relu(ops.conv2d(x, theta["stem.w"], theta["stem.b"], stride=1, pad=pad))
    for i in range(arch.resblocks):
        branch = ops.relu(ops.conv2d(h, theta[f"block{i}.conv1.w"], theta[f"block{i}.conv1.b"], stride=1, pad=pad))
        branch = ops.conv2d(branch, theta[f"block{i}.conv2.w"], theta[f"block{i}.conv2.b"], stride=1, pad=pad)
        h = ops.resblock_add(h, branch)
    out = ops.conv2d(h, theta["head.w"], theta["head.b"], stride=1, pad=0)
    return ops.scale(ops.tanh(out), 0.5, 0.5)


def refine_array(theta: NetParams, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Raffina un array N x C x H x W a blocchi, senza registrare sul tape"""
    images = np.asarray(images, dtype=np.float32)
    chunks = [
        refine(theta, images[start:start + batch_size]).data
        for start in range(0, images.shape[0], batch_size)
    ]
    return np.concatenate(chunks, axis=0) if chunks else images.copy()

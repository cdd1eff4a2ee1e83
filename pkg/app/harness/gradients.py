"""
Suite di verifica dei gradienti sui grafi del training

Ogni grafo gira su batch casuali di 2 immagini 16x16 con reti minime;
l'errore relativo massimo per grafo e seed finisce in gradcheck.csv.
"""
import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from app.autograd import Tensor, grad_check, ops
from app.models import DiscArch, FeatureKind, LayerKind, LayerSpec, RefinerArch
from app.nets import build_discriminator, build_refiner, discriminate, refine
from app.objectives import loss_discriminator, refiner_loss_terms
from app.paths import atomic_write_text

logger = logging.getLogger(__name__)

GRADCHECK_FILE_NAME = "gradcheck.csv"
TOLERANCE = 1e-3
BATCH_SHAPE = (2, 1, 16, 16)

GraphBuilder = Callable[[int], Tuple[Callable[[], Tensor], List[Tensor]]]


def _tiny_refiner() -> RefinerArch:
    return RefinerArch(stem_filters=4, resblocks=1, kernel=3)


def _tiny_discriminator() -> DiscArch:
    return DiscArch(layers=[
        LayerSpec(kind=LayerKind.CONV, kernel=3, stride=2, filters=4),
        LayerSpec(kind=LayerKind.MAXPOOL, kernel=2, stride=1),
        LayerSpec(kind=LayerKind.CONV, kernel=1, stride=1, filters=2),
    ])


def _batch(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.05, 0.95, size=BATCH_SHAPE)


def _conv_graph(seed: int):
    rng = np.random.default_rng([seed, 1])
    x = _batch(rng)
    target = rng.normal(size=(2, 3, 8, 8))
    w = Tensor(rng.normal(scale=0.3, size=(3, 1, 3, 3)), requires_grad=True, name="w")
    b = Tensor(rng.normal(scale=0.1, size=(3,)), requires_grad=True, name="b")

    def builder() -> Tensor:
        return ops.sq_diff(ops.conv2d(Tensor(x), w, b, stride=2, pad=1), Tensor(target))

    return builder, [w, b]


def _refiner_graph(seed: int):
    rng = np.random.default_rng([seed, 2])
    x, target = _batch(rng), _batch(rng)
    theta = build_refiner(_tiny_refiner(), seed=seed)

    def builder() -> Tensor:
        return ops.sq_diff(refine(theta, Tensor(x)), Tensor(target))

    return builder, theta.tensors()


def _discriminator_graph(seed: int):
    rng = np.random.default_rng([seed, 3])
    fake, real = _batch(rng), _batch(rng)
    phi = build_discriminator(_tiny_discriminator(), seed=seed)

    def builder() -> Tensor:
        return loss_discriminator(discriminate(phi, Tensor(fake)), discriminate(phi, Tensor(real)))

    return builder, phi.tensors()


def _refiner_loss_graph(psi: FeatureKind):
    def make(seed: int):
        rng = np.random.default_rng([seed, 4])
        x = _batch(rng)
        theta = build_refiner(_tiny_refiner(), seed=seed)
        phi = build_discriminator(_tiny_discriminator(), seed=seed + 1)

        def builder() -> Tensor:
            synthetic = Tensor(x)
            refined = refine(theta, synthetic)
            total, _, _ = refiner_loss_terms(discriminate(phi, refined), refined, synthetic, 0.5, psi)
            return total

        return builder, theta.tensors()

    return make


GRAPHS: Dict[str, GraphBuilder] = {
    "conv2d": _conv_graph,
    "resnet_block": _refiner_graph,
    "discriminator_loss": _discriminator_graph,
    "refiner_loss": _refiner_loss_graph(FeatureKind.IDENTITY),
    "refiner_loss_derivatives": _refiner_loss_graph(FeatureKind.DERIVATIVES),
}


@dataclass(frozen=True)
class GradCheckRow:
    graph: str
    seed: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def run_grad_checks(seeds: Iterable[int], graphs: Sequence[str] = tuple(GRAPHS),
                    max_entries: int = 24) -> List[GradCheckRow]:
    """Esegue grad_check su ogni grafo per ogni seed"""
    rows = []
    for name in graphs:
        if name not in GRAPHS:
            raise ValueError(f"Grafo sconosciuto: {name} (disponibili: {', '.join(GRAPHS)})")
        for seed in seeds:
            builder, params = GRAPHS[name](seed)
            error = grad_check(builder, params, eps=1e-5, max_entries=max_entries, seed=seed)
            rows.append(GradCheckRow(name, int(seed), float(error)))
            level = logging.DEBUG if error < TOLERANCE else logging.WARNING
            logger.log(level, f"[HARNESS] grad_check {name} seed {seed}: {error:.3e}")
    return rows


def write_grad_checks(path: Path, rows: Sequence[GradCheckRow]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["graph", "seed", "max_rel_error", "passed"])
    for row in rows:
        writer.writerow([row.graph, row.seed, repr(row.max_rel_error), int(row.passed)])
    return atomic_write_text(Path(path), buffer.getvalue())

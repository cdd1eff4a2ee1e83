"""
Pipeline di una run completa: generazione degli split, addestramento, valutazione

Split di un dataset (sotto data/<nome>/):
    synthetic/       sintetiche annotate per il training
    real/            reali non annotate per il training
    real_test/       reali di test (verità ricostruita solo qui, dal seed del manifest)
    synthetic_test/  sintetiche per la misura del drift
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from app.models import RunConfig
from app.nets import NetParams
from app.toyworld import (
    LabeledSet,
    UnlabeledSet,
    held_out_truth,
    load_dataset,
    load_manifest,
    realize,
    save_dataset,
    simulate,
)
from app.toyworld.dataset import dataset_world
from app.trainer import TrainerState, init_state, prepare, train
from app.harness.evaluation import annotation_drift, downstream_comparison, probe_realism

logger = logging.getLogger(__name__)

SPLITS = ("synthetic", "real", "real_test", "synthetic_test")


@dataclass
class DataSplits:
    synthetic: LabeledSet
    real: UnlabeledSet
    real_test: UnlabeledSet
    synthetic_test: LabeledSet
    directory: Optional[Path] = None


def generate_data(config: RunConfig, directory: Optional[Path] = None) -> DataSplits:
    """Genera (e se richiesto salva) i quattro split dalla WorldConfig e dai seed di DataConfig"""
    world, data = config.world, config.data
    splits = DataSplits(
        synthetic=simulate(world, data.n_synthetic, data.synthetic_seed),
        real=realize(world, data.n_real, data.real_seed),
        real_test=realize(world, data.n_real_test, data.real_test_seed),
        synthetic_test=simulate(world, data.n_synthetic_test, data.synthetic_test_seed),
        directory=Path(directory) if directory is not None else None,
    )
    if directory is not None:
        seeds = {
            "synthetic": data.synthetic_seed, "real": data.real_seed,
            "real_test": data.real_test_seed, "synthetic_test": data.synthetic_test_seed,
        }
        for name in SPLITS:
            save_dataset(Path(directory) / name, getattr(splits, name), world, seeds[name], split=name)
    logger.info(
        f"✅ [WORLD] Dati generati: {data.n_synthetic} sintetiche, {data.n_real} reali, "
        f"{data.n_real_test} reali di test, {data.n_synthetic_test} sintetiche di test"
    )
    return splits


def load_splits(directory: Path) -> DataSplits:
    directory = Path(directory)
    return DataSplits(*(load_dataset(directory / name) for name in SPLITS), directory=directory)


def real_test_truth(splits: DataSplits, config: RunConfig) -> np.ndarray:
    """
    Verità generativa dello split reale di test

    Se lo split è su disco, seed e WorldConfig vengono dal suo manifest.
    """
    if splits.directory is not None:
        split_dir = splits.directory / "real_test"
        manifest = load_manifest(split_dir)
        world = dataset_world(split_dir) or config.world
        return held_out_truth(world, int(manifest["count"]), int(manifest["seed"]))
    return held_out_truth(config.world, len(splits.real_test), config.data.real_test_seed)


def run_training(config: RunConfig, splits: DataSplits, run_dir: Optional[Path] = None) -> TrainerState:
    """init + pre-training + loop avversariale"""
    state = init_state(config, splits.synthetic.pixels, splits.real.pixels)
    prepare(state, run_dir)
    return train(state, run_dir)


@dataclass(frozen=True)
class RunMetrics:
    drift_mean_px: float
    drift_std_px: float
    error_synthetic_px: float
    error_refined_px: float

    @property
    def downstream_gain_px(self) -> float:
        return self.error_synthetic_px - self.error_refined_px


def evaluate_run(theta: NetParams, config: RunConfig, splits: DataSplits,
                 curves_path: Optional[Path] = None) -> RunMetrics:
    """Drift sulle sintetiche di test e confronto a valle sul reale di test"""
    drift = annotation_drift(theta, splits.synthetic_test, min_size=min(100, len(splits.synthetic_test)))
    comparison = downstream_comparison(
        theta, splits.synthetic, splits.real_test, real_test_truth(splits, config), config.predictor,
        out_path=curves_path,
    )
    return RunMetrics(
        drift_mean_px=drift.mean_px,
        drift_std_px=drift.std_px,
        error_synthetic_px=comparison.results["synthetic"].mean_px,
        error_refined_px=comparison.results["refined"].mean_px,
    )


def realism_probe(theta: NetParams, config: RunConfig, splits: DataSplits) -> float:
    """P_fake medio delle raffinate secondo un discriminatore sonda nuovo"""
    return probe_realism(theta, splits.synthetic_test, splits.real_test, config.discriminator,
                         config.train, config.predictor.probe_steps, seed=config.train.seed)

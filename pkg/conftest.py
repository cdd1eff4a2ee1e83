"""
Fixture condivise: architetture minime, mondo piccolo, directory base temporanea
"""
import numpy as np
import pytest

import app.paths
from app.models import (
    DataConfig,
    DiscArch,
    LayerKind,
    LayerSpec,
    PredictorConfig,
    RefinerArch,
    RunConfig,
    TrainConfig,
    WorldConfig,
)


@pytest.fixture
def tiny_refiner_arch() -> RefinerArch:
    return RefinerArch(stem_filters=4, resblocks=1, kernel=3)


@pytest.fixture
def tiny_disc_arch() -> DiscArch:
    return DiscArch(layers=[
        LayerSpec(kind=LayerKind.CONV, kernel=3, stride=2, filters=4),
        LayerSpec(kind=LayerKind.CONV, kernel=3, stride=1, filters=4),
        LayerSpec(kind=LayerKind.CONV, kernel=1, stride=1, filters=2),
    ])


@pytest.fixture
def small_world() -> WorldConfig:
    return WorldConfig(height=16, width=16, pupil_radius_min=1.5, pupil_radius_max=2.5)


@pytest.fixture
def tiny_config(tiny_refiner_arch, tiny_disc_arch, small_world) -> RunConfig:
    return RunConfig(
        name="tiny",
        world=small_world,
        refiner=tiny_refiner_arch,
        discriminator=tiny_disc_arch,
        train=TrainConfig(
            steps=4, k_g=2, k_d=1, batch_size=8, buffer_capacity=16,
            pretrain_r_steps=3, pretrain_d_steps=2,
            checkpoint_every=2, snapshot_every=2, log_every=1,
        ),
        data=DataConfig(n_synthetic=24, n_real=24, n_real_test=12, n_synthetic_test=12),
        predictor=PredictorConfig(filters=[4], hidden=8, epochs=2, batch_size=8, probe_steps=2),
    )


@pytest.fixture
def base_dir(tmp_path, monkeypatch):
    """runs/ e data/ sotto tmp_path"""
    monkeypatch.setattr(app.paths, "_BASE_DIR", tmp_path)
    return tmp_path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)

"""
Addestramento avversariale: pre-training, loop alternato, checkpoint e resume
"""

from app.trainer.streams import ImageStream
from app.trainer.train_log import TrainLog, TrainRecord
from app.trainer.loop import (
    TrainerState,
    discriminator_sgd_step,
    init_state,
    latest_checkpoint,
    prepare,
    pretrain_discriminator,
    pretrain_refiner,
    resume,
    save_state,
    train,
    train_step,
)

__all__ = [
    "ImageStream",
    "TrainLog",
    "TrainRecord",
    "TrainerState",
    "discriminator_sgd_step",
    "init_state",
    "latest_checkpoint",
    "prepare",
    "pretrain_discriminator",
    "pretrain_refiner",
    "resume",
    "save_state",
    "train",
    "train_step",
]

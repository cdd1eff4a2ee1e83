"""
Addestramento avversariale del refiner

Pre-training del refiner (solo self-regularization) e del discriminatore,
riempimento del buffer di storia, poi T step esterni: K_g update del refiner
con phi congelato, K_d update del discriminatore con theta congelato.

Checkpoint di una run:
    ckpt/step_XXXXXX/refiner/        parametri theta
    ckpt/step_XXXXXX/discriminator/  parametri phi
    ckpt/step_XXXXXX/buffer/         storia delle immagini raffinate
    ckpt/step_XXXXXX/log.csv         log fino allo step
    ckpt/step_XXXXXX/trainer.json    step, contatori, stato RNG, fingerprint della config
    ckpt/LATEST                      nome dell'ultimo checkpoint completo
"""
import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from app.autograd import Tape, Tensor, backward, ops, scheduled_lr, sgd_step, write_tns
from app.errors import CheckpointError, ConfigMismatchError, GradientError, NumericalAbortError
from app.models import HistoryMode, RunConfig, TrainConfig
from app.nets import (
    NetParams,
    build_discriminator,
    build_refiner,
    discriminate,
    frozen,
    load_checkpoint,
    refine,
    refine_array,
    save_checkpoint,
)
from app.nets.checkpoint import replace_dir
from app.objectives import (
    FeatureTransform,
    PatchMap,
    loss_discriminator,
    loss_self_reg,
    mean_fake_probability,
    refiner_loss_terms,
)
from app.paths import atomic_write_json, atomic_write_text, get_ckpt_dir, get_refined_dir
from app.replay import ReplayBuffer
from app.run_config import config_differences, config_fingerprint
from app.trainer.streams import ImageStream
from app.trainer.train_log import LOG_FILE_NAME, PRETRAIN_LOG_FILE_NAME, TrainLog, TrainRecord, write_pretrain_log

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
STATE_FILE = "trainer.json"
LATEST_FILE = "LATEST"

# Sale dei seed derivati da TrainConfig.seed
_SALT_BUFFER = 101
_SALT_SYNTHETIC = 102
_SALT_REAL = 103

# Immagini del batch sonda per gli snapshot di convergenza
SNAPSHOT_PROBE_SIZE = 16


@dataclass
class TrainerState:
    """Stato completo dell'addestramento: basta questo per riprendere bit a bit"""
    config: RunConfig
    theta: NetParams
    phi: NetParams
    buffer: ReplayBuffer
    synthetic: ImageStream
    real: ImageStream
    step: int = 0
    refiner_updates: int = 0
    disc_updates: int = 0
    log: TrainLog = field(default_factory=TrainLog)
    pretrain_rows: List[tuple] = field(default_factory=list)

    @property
    def train_config(self) -> TrainConfig:
        return self.config.train


def init_state(config: RunConfig, synthetic_pool: np.ndarray, real_pool: np.ndarray) -> TrainerState:
    """
    Costruisce reti, flussi e buffer (vuoto) in modo deterministico dal seed

    Ogni componente ha un proprio generatore derivato da (seed, sale): l'ordine di
    consumo di uno non sposta gli altri.

    Raises:
        ValueError: immagini sintetiche e reali di shape diverse
    """
    cfg = config.train
    synthetic = ImageStream(synthetic_pool, seed=[cfg.seed, _SALT_SYNTHETIC], name="synthetic")
    real = ImageStream(real_pool, seed=[cfg.seed, _SALT_REAL], name="real")
    if synthetic.image_shape != real.image_shape:
        raise ValueError(f"Shape diverse tra sintetiche {synthetic.image_shape} e reali {real.image_shape}")
    return TrainerState(
        config=config,
        theta=build_refiner(config.refiner, seed=cfg.seed),
        phi=build_discriminator(config.discriminator, seed=cfg.seed + 1),
        buffer=ReplayBuffer(cfg.capacity, synthetic.image_shape, seed=[cfg.seed, _SALT_BUFFER]),
        synthetic=synthetic,
        real=real,
    )


def _effective_lr(base_lr: float, step: int, cfg: TrainConfig, terms: int) -> float:
    lr = scheduled_lr(base_lr, step, cfg.lr_schedule, cfg.lr_decay_to, cfg.lr_decay_at)
    return lr / terms if cfg.normalize_lr else lr


def _require_finite(value: float, step: int, what: str) -> None:
    if not np.isfinite(value):
        raise NumericalAbortError(f"Loss {what} non finita ({value}) allo step {step}", step=step)


# --------------------------------------------------------------------------- update elementari

def refiner_update(state: TrainerState, step: int) -> Tuple[float, float, float]:
    """
    Un update SGD di theta sulla loss del refiner (phi deve essere congelato)

    Returns:
        (loss_R, loss_realism, loss_selfreg)
    """
    cfg = state.train_config
    x = Tensor(state.synthetic.next(cfg.batch_size))
    with Tape():
        refined = refine(state.theta, x)
        total, realism, reg = refiner_loss_terms(
            discriminate(state.phi, refined), refined, x, cfg.lambda_reg, FeatureTransform(cfg.psi)
        )
        _require_finite(total.item(), step, "refiner")
        backward(total, state.theta.tensors())
    sgd_step(state.theta, _effective_lr(cfg.lr_r, step, cfg, x.size))
    state.refiner_updates += 1
    return total.item(), realism.item(), reg.item()


def _disc_batches(state: TrainerState, current: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    cfg = state.train_config
    half = cfg.batch_size // 2
    if not cfg.use_history:
        return current, state.real.next(half)
    n_real = cfg.batch_size if cfg.history_mode == HistoryMode.AUGMENT else half
    return state.buffer.compose_disc_batch(current, state.real.next(n_real), cfg.history_mode)


def discriminator_sgd_step(phi: NetParams, fakes: np.ndarray, reals: np.ndarray, cfg: TrainConfig,
                           step: int) -> Tuple[float, float, float]:
    """
    Un update SGD di phi sulla loss del discriminatore (fake contro reali)

    Returns:
        (loss_D, media P_fake sulle fake, media P_fake sulle reali)

    Raises:
        NumericalAbortError: loss non finita
    """
    with Tape():
        map_fake = PatchMap(discriminate(phi, fakes))
        map_real = PatchMap(discriminate(phi, reals))
        loss = loss_discriminator(map_fake, map_real)
        _require_finite(loss.item(), step, "discriminatore")
        backward(loss, phi.tensors())
    terms = map_fake.patch_count + map_real.patch_count
    sgd_step(phi, _effective_lr(cfg.lr_d, step, cfg, terms))
    return loss.item(), mean_fake_probability(map_fake), mean_fake_probability(map_real)


def discriminator_update(state: TrainerState, step: int) -> Tuple[float, float, float]:
    """
    Un update SGD di phi (theta deve essere congelato), poi b/2 sostituzioni nel buffer

    Returns:
        (loss_D, media P_fake sulle fake, media P_fake sulle reali)
    """
    cfg = state.train_config
    current = refine_array(state.theta, state.synthetic.next(cfg.batch_size // 2))
    fakes, reals = _disc_batches(state, current)
    result = discriminator_sgd_step(state.phi, fakes, reals, cfg, step)
    if cfg.use_history:
        state.buffer.replace_half(current)
    state.disc_updates += 1
    return result


# --------------------------------------------------------------------------- pre-training

def pretrain_refiner(theta: NetParams, synthetic: ImageStream, cfg: TrainConfig,
                     losses: Optional[List[float]] = None) -> NetParams:
    """
    Pre-addestra theta sulla sola lambda * self-regularization per pretrain_r_steps batch

    Args:
        losses: Se data, riceve la loss di ogni step
    """
    psi = FeatureTransform(cfg.psi)
    for step in range(1, cfg.pretrain_r_steps + 1):
        x = Tensor(synthetic.next(cfg.batch_size))
        with Tape():
            loss = ops.scale(loss_self_reg(refine(theta, x), x, psi), cfg.lambda_reg)
            _require_finite(loss.item(), step, "pre-training refiner")
            backward(loss, theta.tensors())
        sgd_step(theta, _effective_lr(cfg.lr_r, step, cfg, x.size))
        if losses is not None:
            losses.append(loss.item())
        if step % cfg.log_every == 0:
            logger.info(f"[TRAIN] Pre-training refiner {step}/{cfg.pretrain_r_steps}: loss={loss.item():.4f}")
    return theta


def pretrain_discriminator(phi: NetParams, theta: NetParams, synthetic: ImageStream, real: ImageStream,
                           cfg: TrainConfig, losses: Optional[List[float]] = None) -> NetParams:
    """
    Pre-addestra phi per pretrain_d_steps batch con fake del solo refiner corrente

    Args:
        losses: Se data, riceve la loss di ogni step
    """
    half = cfg.batch_size // 2
    with frozen(theta):
        for step in range(1, cfg.pretrain_d_steps + 1):
            fakes = refine_array(theta, synthetic.next(half))
            loss, p_fake, p_real = discriminator_sgd_step(phi, fakes, real.next(half), cfg, step)
            if losses is not None:
                losses.append(loss)
            if step % cfg.log_every == 0:
                logger.info(
                    f"[TRAIN] Pre-training discriminatore {step}/{cfg.pretrain_d_steps}: "
                    f"loss={loss:.4f} P_fake refined={p_fake:.3f} real={p_real:.3f}"
                )
    return phi


def prepare(state: TrainerState, run_dir: Optional[Path] = None) -> TrainerState:
    """
    Pre-training di refiner e discriminatore, poi riempimento del buffer

    Args:
        state: Stato appena creato da init_state
        run_dir: Se data, vi scrive il log del pre-training
    """
    cfg = state.train_config
    r_losses: List[float] = []
    d_losses: List[float] = []
    pretrain_refiner(state.theta, state.synthetic, cfg, r_losses)
    pretrain_discriminator(state.phi, state.theta, state.synthetic, state.real, cfg, d_losses)
    state.pretrain_rows = (
        [("refiner", i + 1, v) for i, v in enumerate(r_losses)]
        + [("discriminator", i + 1, v) for i, v in enumerate(d_losses)]
    )
    if cfg.use_history:
        n = min(cfg.capacity, len(state.synthetic))
        state.buffer.seed_fill(refine_array(state.theta, state.synthetic.next(n)))
    if run_dir is not None:
        write_pretrain_log(Path(run_dir) / PRETRAIN_LOG_FILE_NAME, state.pretrain_rows)
    logger.info(
        f"✅ [TRAIN] Pre-training completato: refiner {cfg.pretrain_r_steps} step, "
        f"discriminatore {cfg.pretrain_d_steps} step"
    )
    return state


# --------------------------------------------------------------------------- loop principale

def _snapshot(state: TrainerState, run_dir: Path) -> Path:
    probe = state.synthetic.pool[:SNAPSHOT_PROBE_SIZE]
    path = get_refined_dir(run_dir) / f"step_{state.step:06d}.tns"
    return write_tns(path, refine_array(state.theta, probe))


def train_step(state: TrainerState) -> TrainRecord:
    """
    Uno step esterno: K_g update del refiner, poi K_d update del discriminatore

    Raises:
        GradientError: la rete congelata è cambiata durante gli update dell'altra
        NumericalAbortError: loss non finita
    """
    cfg = state.train_config
    step = state.step + 1

    phi_before = state.phi.fingerprint()
    with frozen(state.phi):
        for _ in range(cfg.k_g):
            loss_r, realism, reg = refiner_update(state, step)
    if state.phi.fingerprint() != phi_before:
        raise GradientError(f"phi modificato durante gli update del refiner (step {step})")

    theta_before = state.theta.fingerprint()
    with frozen(state.theta):
        for _ in range(cfg.k_d):
            loss_d, p_refined, p_real = discriminator_update(state, step)
    if state.theta.fingerprint() != theta_before:
        raise GradientError(f"theta modificato durante gli update del discriminatore (step {step})")

    record = TrainRecord(step, loss_r, realism, reg, loss_d, p_refined, p_real)
    state.log.append(record)
    state.step = step
    return record


def train(state: TrainerState, run_dir: Optional[Path] = None) -> TrainerState:
    """
    Esegue gli step esterni da state.step + 1 fino a config.train.steps

    Con run_dir: log.csv, snapshot ogni snapshot_every, checkpoint ogni checkpoint_every
    e all'ultimo step. Su abort numerico il log fino all'ultimo step completato viene
    comunque scritto.
    """
    cfg = state.train_config
    if cfg.use_history and not state.buffer.filled:
        raise ValueError("train: buffer di storia non riempito (eseguire prepare)")
    logger.info(
        f"[TRAIN] Avvio da step {state.step + 1} a {cfg.steps} "
        f"(K_g={cfg.k_g}, K_d={cfg.k_d}, b={cfg.batch_size}, lambda={cfg.lambda_reg}, "
        f"storia={'off' if not cfg.use_history else cfg.history_mode.value})"
    )
    try:
        while state.step < cfg.steps:
            record = train_step(state)
            if record.step % cfg.log_every == 0 or record.step == cfg.steps:
                logger.info(f"[TRAIN] {record.summary()}")
            if run_dir is None:
                continue
            if record.step % cfg.snapshot_every == 0:
                _snapshot(state, run_dir)
            if record.step % cfg.checkpoint_every == 0 or record.step == cfg.steps:
                save_state(state, get_ckpt_dir(run_dir))
                state.log.write_csv(Path(run_dir) / LOG_FILE_NAME)
    except NumericalAbortError:
        if run_dir is not None:
            state.log.write_csv(Path(run_dir) / LOG_FILE_NAME)
        raise
    logger.info(
        f"✅ [TRAIN] Completato: {state.step} step, {state.refiner_updates} update refiner, "
        f"{state.disc_updates} update discriminatore"
    )
    return state


# --------------------------------------------------------------------------- checkpoint e resume

def checkpoint_path(ckpt_dir: Path, step: int) -> Path:
    return Path(ckpt_dir) / f"step_{step:06d}"


def latest_checkpoint(ckpt_dir: Path) -> Path:
    """
    Raises:
        CheckpointError: nessun checkpoint completo nella directory
    """
    marker = Path(ckpt_dir) / LATEST_FILE
    if not marker.exists():
        raise CheckpointError(f"Nessun checkpoint in {ckpt_dir}")
    path = Path(ckpt_dir) / marker.read_text(encoding="utf-8").strip()
    if not path.is_dir():
        raise CheckpointError(f"Checkpoint indicato da {marker} mancante: {path}")
    return path


def save_state(state: TrainerState, ckpt_dir: Path) -> Path:
    """
    Salva atomicamente lo stato completo in ckpt_dir/step_XXXXXX e aggiorna LATEST

    I manifest di refiner e discriminatore riportano lo stato del generatore del
    flusso che ciascuno consuma (sintetiche e reali).

    Returns:
        La directory del checkpoint
    """
    final = checkpoint_path(ckpt_dir, state.step)
    tmp = final.with_name(f".{final.name}.tmp-{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)

    save_checkpoint(state.theta, tmp / "refiner", rng_state=state.synthetic.rng.bit_generator.state)
    save_checkpoint(state.phi, tmp / "discriminator", rng_state=state.real.rng.bit_generator.state)
    state.buffer.save(tmp / "buffer")
    state.log.write_csv(tmp / LOG_FILE_NAME)
    atomic_write_json(tmp / STATE_FILE, {
        "format_version": FORMAT_VERSION,
        "step": state.step,
        "refiner_updates": state.refiner_updates,
        "disc_updates": state.disc_updates,
        "fingerprint": config_fingerprint(state.config),
        "config": state.config.model_dump(mode="json"),
        "streams": {"synthetic": state.synthetic.state_dict(), "real": state.real.state_dict()},
    })
    replace_dir(tmp, final)
    atomic_write_text(Path(ckpt_dir) / LATEST_FILE, final.name + "\n")
    logger.info(f"💾 [CKPT] Stato salvato allo step {state.step}: {final}")
    return final


def resume(
    checkpoint_dir: Path,
    config: RunConfig,
    synthetic_pool: np.ndarray,
    real_pool: np.ndarray,
    allow_config_change: bool = False,
) -> TrainerState:
    """
    Ricostruisce lo stato da un checkpoint: il training continua bit a bit come senza interruzione

    Args:
        checkpoint_dir: Directory step_XXXXXX (o ckpt/ per usare LATEST)
        config: Configurazione richiesta (T può differire)
        allow_config_change: Accetta una config con fingerprint diverso

    Raises:
        CheckpointError: versione diversa, file mancanti o corrotti (buffer incluso)
        ConfigMismatchError: config diversa senza allow_config_change
    """
    checkpoint_dir = Path(checkpoint_dir)
    if (checkpoint_dir / LATEST_FILE).exists():
        checkpoint_dir = latest_checkpoint(checkpoint_dir)
    try:
        with open(checkpoint_dir / STATE_FILE, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Stato del trainer mancante o corrotto in {checkpoint_dir}: {e}") from e

    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"Versione checkpoint {meta.get('format_version')} non supportata (attesa {FORMAT_VERSION})"
        )

    if meta.get("fingerprint") != config_fingerprint(config):
        saved = RunConfig.model_validate(meta["config"])
        diffs = config_differences(saved, config)
        if not allow_config_change:
            raise ConfigMismatchError(
                f"Configurazione diversa da quella del checkpoint {checkpoint_dir}: "
                f"{', '.join(sorted(diffs))} (usare --allow-config-change)"
            )
        logger.warning(f"⚠️ [CKPT] Resume con configurazione modificata: {', '.join(sorted(diffs))}")

    theta = load_checkpoint(checkpoint_dir / "refiner")
    phi = load_checkpoint(checkpoint_dir / "discriminator")
    buffer = ReplayBuffer.load(checkpoint_dir / "buffer")
    try:
        log = TrainLog.read_csv(checkpoint_dir / LOG_FILE_NAME)
    except (OSError, ValueError) as e:
        raise CheckpointError(f"Log del checkpoint corrotto in {checkpoint_dir}: {e}") from e

    synthetic = ImageStream(synthetic_pool, seed=0, name="synthetic")
    real = ImageStream(real_pool, seed=0, name="real")
    if buffer.image_shape != tuple(synthetic.image_shape):
        raise CheckpointError(
            f"Buffer con immagini {buffer.image_shape}, dataset con {tuple(synthetic.image_shape)}"
        )
    try:
        synthetic.load_state_dict(meta["streams"]["synthetic"])
        real.load_state_dict(meta["streams"]["real"])
        state = TrainerState(
            config=config,
            theta=theta,
            phi=phi,
            buffer=buffer,
            synthetic=synthetic,
            real=real,
            step=int(meta["step"]),
            refiner_updates=int(meta["refiner_updates"]),
            disc_updates=int(meta["disc_updates"]),
            log=log,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Stato del trainer incompleto in {checkpoint_dir}: {e}") from e

    if len(log) != state.step:
        raise CheckpointError(f"Log con {len(log)} record per lo step {state.step} in {checkpoint_dir}")
    logger.info(f"[CKPT] Resume dallo step {state.step}: {checkpoint_dir}")
    return state

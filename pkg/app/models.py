"""
Modelli Pydantic per architetture, configurazione di training e mondo procedurale
"""
from enum import Enum
from typing import List, Optional

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, field_validator, model_validator


class HistoryMode(str, Enum):
    """Composizione dello stream fake del discriminatore"""
    AUGMENT = "augment"  # b/2 correnti + b/2 dal buffer, contro b reali
    SPLIT = "split"      # b/4 correnti + b/4 dal buffer, contro b/2 reali


class FeatureKind(str, Enum):
    """Trasformazione psi per la self-regularization"""
    IDENTITY = "identity"
    CHANNEL_MEAN = "channel_mean"
    DERIVATIVES = "derivatives"


class LayerKind(str, Enum):
    CONV = "conv"
    MAXPOOL = "maxpool"


class LRSchedule(str, Enum):
    CONSTANT = "constant"
    STEP = "step"


class StrictModel(BaseModel):
    """Base dei modelli di configurazione: chiavi sconosciute (es. refusi nel JSON) sono un errore"""
    model_config = ConfigDict(extra="forbid")


class LayerSpec(StrictModel):
    """Un layer del discriminatore"""
    kind: LayerKind = Field(..., description="conv o maxpool")
    kernel: int = Field(..., ge=1, description="Lato del kernel")
    stride: int = Field(1, ge=1, description="Stride")
    filters: Optional[int] = Field(None, ge=1, description="Feature map in uscita (solo conv)")
    pad: Optional[int] = Field(None, ge=0, description="Zero padding (default: kernel//2 per conv, 0 per maxpool)")

    @model_validator(mode="after")
    def resolve_defaults(self):
        """Completa il padding e verifica i filtri"""
        if self.kind == LayerKind.CONV and self.filters is None:
            raise ValueError("Un layer conv richiede 'filters'")
        if self.kind == LayerKind.MAXPOOL and self.filters is not None:
            raise ValueError("Un layer maxpool non ha 'filters'")
        if self.pad is None:
            self.pad = self.kernel // 2 if self.kind == LayerKind.CONV else 0
        return self


class RefinerArch(StrictModel):
    """Architettura del refiner: stem conv, blocchi ResNet, head 1x1"""
    input_channels: int = Field(1, ge=1)
    stem_filters: int = Field(16, ge=1)
    resblocks: int = Field(2, ge=0)
    kernel: int = Field(3, ge=1)

    @field_validator("kernel")
    @classmethod
    def validate_kernel(cls, v: int) -> int:
        """Padding 'same' richiede kernel dispari"""
        if v % 2 == 0:
            raise ValueError(f"Il kernel del refiner deve essere dispari, ricevuto: {v}")
        return v


class DiscArch(StrictModel):
    """Architettura del discriminatore: stack di conv/maxpool che termina in conv 1x1 a 2 canali"""
    input_channels: int = Field(1, ge=1)
    layers: List[LayerSpec] = Field(..., min_length=1)
    global_pool: bool = Field(False, description="Ablazione: media globale prima del softmax (una decisione per immagine)")

    @field_validator("layers")
    @classmethod
    def validate_head(cls, v: List[LayerSpec]) -> List[LayerSpec]:
        """L'ultimo layer deve produrre i 2 logit per patch"""
        last = v[-1]
        if last.kind != LayerKind.CONV or last.kernel != 1 or last.filters != 2:
            raise ValueError("L'ultimo layer deve essere Conv1x1 con 2 feature map")
        return v


def _conv(kernel: int, stride: int, filters: int) -> LayerSpec:
    return LayerSpec(kind=LayerKind.CONV, kernel=kernel, stride=stride, filters=filters)


def _pool(kernel: int, stride: int) -> LayerSpec:
    return LayerSpec(kind=LayerKind.MAXPOOL, kernel=kernel, stride=stride)


def desk_disc_arch() -> DiscArch:
    return DiscArch(layers=[_conv(3, 2, 32), _conv(3, 2, 32), _conv(3, 1, 16), _conv(1, 1, 16), _conv(1, 1, 2)])


def gaze_full_disc_arch() -> DiscArch:
    return DiscArch(layers=[
        _conv(3, 2, 96), _conv(3, 2, 64), _pool(3, 1),
        _conv(3, 1, 32), _conv(1, 1, 32), _conv(1, 1, 2),
    ])


def hand_full_disc_arch() -> DiscArch:
    return DiscArch(layers=[
        _conv(7, 4, 96), _conv(5, 2, 64), _pool(3, 2),
        _conv(3, 2, 32), _conv(1, 1, 32), _conv(1, 1, 2),
    ])


class TrainConfig(StrictModel):
    """Iperparametri scalari dell'addestramento avversariale"""
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    steps: int = Field(2000, ge=1, description="T: numero di step esterni")
    k_g: int = Field(2, ge=1, description="Aggiornamenti del refiner per step")
    k_d: int = Field(1, ge=1, description="Aggiornamenti del discriminatore per step")
    batch_size: int = Field(32, ge=2, description="b: dimensione del mini-batch (pari)")
    lr_r: float = Field(0.001, ge=0.0)
    lr_d: float = Field(0.001, ge=0.0)
    lr_schedule: LRSchedule = LRSchedule.CONSTANT
    lr_decay_to: Optional[float] = Field(None, ge=0.0, description="Learning rate dopo il decay (schedule 'step')")
    lr_decay_at: Optional[int] = Field(None, ge=1, description="Step a cui applicare il decay")
    normalize_lr: bool = Field(True, description="Divide il passo per il numero di termini sommati nella loss")
    lambda_reg: float = Field(0.5, ge=0.0, validation_alias=AliasChoices("lambda_reg", "lambda"))
    buffer_capacity: Optional[int] = Field(None, ge=1, description="B (default 16*b)")
    pretrain_r_steps: int = Field(1000, ge=1)
    pretrain_d_steps: int = Field(200, ge=1)
    seed: int = Field(0, ge=0)
    history_mode: HistoryMode = HistoryMode.AUGMENT
    use_history: bool = True
    psi: FeatureKind = FeatureKind.IDENTITY
    checkpoint_every: int = Field(500, ge=1)
    snapshot_every: int = Field(250, ge=1)
    log_every: int = Field(50, ge=1)

    @field_validator("batch_size")
    @classmethod
    def validate_even(cls, v: int) -> int:
        if v % 2 != 0:
            raise ValueError(f"batch_size deve essere pari, ricevuto: {v}")
        return v

    @model_validator(mode="after")
    def validate_consistency(self):
        """Validazioni aggiuntive di coerenza"""
        if self.history_mode == HistoryMode.SPLIT and self.batch_size % 4 != 0:
            raise ValueError("history_mode=split richiede batch_size multiplo di 4")
        if self.lr_schedule == LRSchedule.STEP and (self.lr_decay_to is None or self.lr_decay_at is None):
            raise ValueError("lr_schedule=step richiede lr_decay_to e lr_decay_at")
        if self.buffer_capacity is not None and self.buffer_capacity < self.batch_size // 2:
            raise ValueError(f"buffer_capacity ({self.buffer_capacity}) < b/2 ({self.batch_size // 2})")
        return self

    @property
    def capacity(self) -> int:
        """Capacità effettiva del buffer"""
        return self.buffer_capacity if self.buffer_capacity is not None else 16 * self.batch_size


class WorldConfig(StrictModel):
    """Parametri del mondo procedurale e del processo di corruzione 'reale' nascosto"""
    height: int = Field(32, ge=8)
    width: int = Field(32, ge=8)
    pupil_radius_min: float = Field(2.0, gt=0.0)
    pupil_radius_max: float = Field(3.5, gt=0.0)
    iris_ratio: float = Field(2.0, gt=1.0, description="Raggio iride / raggio pupilla")
    max_gaze_offset: float = Field(0.18, ge=0.0, le=0.3, description="Spostamento massimo della pupilla (frazione del lato minore)")
    # Corruzione: usata solo da realize()
    noise_sigma: float = Field(0.05, ge=0.0)
    blur_radius: int = Field(1, ge=0)
    gain_min: float = Field(0.85, gt=0.0)
    gain_max: float = Field(1.15, gt=0.0)
    bias_min: float = Field(-0.05)
    bias_max: float = Field(0.05)
    jitter_amplitude: float = Field(0.5, ge=0.0)

    @model_validator(mode="after")
    def validate_ranges(self):
        if self.pupil_radius_min > self.pupil_radius_max:
            raise ValueError("pupil_radius_min > pupil_radius_max")
        if self.gain_min > self.gain_max or self.bias_min > self.bias_max:
            raise ValueError("Intervalli gain/bias invertiti")
        return self

    def without_corruption(self) -> "WorldConfig":
        """Copia con corruzione disattivata"""
        return self.model_copy(update={
            "noise_sigma": 0.0, "blur_radius": 0, "gain_min": 1.0, "gain_max": 1.0,
            "bias_min": 0.0, "bias_max": 0.0, "jitter_amplitude": 0.0,
        })


class DataConfig(StrictModel):
    """Dimensioni e seed degli split generati"""
    n_synthetic: int = Field(2000, ge=1)
    n_real: int = Field(2000, ge=1)
    n_real_test: int = Field(500, ge=1)
    n_synthetic_test: int = Field(100, ge=1)
    synthetic_seed: int = Field(1, ge=0)
    real_seed: int = Field(2, ge=0)
    real_test_seed: int = Field(3, ge=0)
    synthetic_test_seed: int = Field(4, ge=0)


class PredictorConfig(StrictModel):
    """Regressore a valle (pupilla + sguardo)"""
    filters: List[int] = Field(default_factory=lambda: [8, 16, 32], min_length=1)
    hidden: int = Field(64, ge=1)
    epochs: int = Field(10, ge=1)
    lr: float = Field(0.01, ge=0.0)
    batch_size: int = Field(32, ge=1)
    seed: int = Field(0, ge=0)
    data_multiplier: int = Field(1, ge=1, description="Moltiplicatore della dimensione del training set (es. 4x)")
    probe_steps: int = Field(200, ge=1, description="Step del discriminatore sonda per la metrica di realismo")


class RunConfig(StrictModel):
    """Configurazione completa di una run"""
    name: str = Field("desk", min_length=1)
    preset: str = Field("desk")
    world: WorldConfig = Field(default_factory=WorldConfig)
    refiner: RefinerArch = Field(default_factory=RefinerArch)
    discriminator: DiscArch = Field(default_factory=desk_disc_arch)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    predictor: PredictorConfig = Field(default_factory=PredictorConfig)


PRESETS = ("desk", "gaze-full", "hand-full")


def get_preset(name: str) -> RunConfig:
    """
    Restituisce la configurazione di un preset

    - desk: 32x32, refiner 16 filtri / 2 blocchi, b=32 (default)
    - gaze-full: 35x55, refiner 64/4/k3, stack di discriminatore a scala piena, K_g=50, b=512
    - hand-full: 224x224, refiner 64/10/k7, K_g=2, decay 0.0002 -> 0.00005 a 600k step
    """
    if name == "desk":
        return RunConfig(name="desk", preset="desk")
    if name == "gaze-full":
        return RunConfig(
            name="gaze-full",
            preset=name,
            world=WorldConfig(height=35, width=55),
            refiner=RefinerArch(stem_filters=64, resblocks=4, kernel=3),
            discriminator=gaze_full_disc_arch(),
            train=TrainConfig(k_g=50, k_d=1, batch_size=512, lr_r=0.001, lr_d=0.001,
                              pretrain_r_steps=1000, pretrain_d_steps=200),
        )
    if name == "hand-full":
        return RunConfig(
            name="hand-full",
            preset=name,
            world=WorldConfig(height=224, width=224, pupil_radius_min=14.0, pupil_radius_max=24.0),
            refiner=RefinerArch(stem_filters=64, resblocks=10, kernel=7),
            discriminator=hand_full_disc_arch(),
            train=TrainConfig(k_g=2, k_d=1, batch_size=512, lr_r=0.0002, lr_d=0.0002,
                              lr_schedule=LRSchedule.STEP, lr_decay_to=0.00005, lr_decay_at=600_000,
                              pretrain_r_steps=500, pretrain_d_steps=200),
        )
    raise ValueError(f"Preset sconosciuto: {name}. Preset validi: {', '.join(PRESETS)}")

"""
Metriche di valutazione: errore del predittore sul set reale, drift delle annotazioni,
realismo misurato da un discriminatore sonda, confronto sintetico vs raffinato
"""
import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.errors import DriftAbortError, PupilNotFoundError
from app.models import DiscArch, PredictorConfig, TrainConfig
from app.nets import NetParams, build_discriminator, discriminate_array, refine_array
from app.objectives import mean_fake_probability
from app.paths import atomic_write_text
from app.toyworld.dataset import LabeledSet, UnlabeledSet
from app.toyworld.oracle import pupil_center_oracle
from app.trainer.loop import discriminator_sgd_step
from app.trainer.streams import ImageStream
from app.harness.predictor import predict, train_predictor

logger = logging.getLogger(__name__)

THRESHOLDS = (0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0)
CURVES_FILE_NAME = "curves.csv"
MAX_ORACLE_FAILURE_RATE = 0.05
MIN_DRIFT_SET = 100

RefinerLike = Union[NetParams, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class CumulativeCurve:
    """Frazione di immagini con errore <= d per ogni soglia d (non decrescente)"""
    thresholds: Tuple[float, ...]
    fraction_within: Tuple[float, ...]

    @classmethod
    def from_errors(cls, errors: np.ndarray, thresholds: Sequence[float] = THRESHOLDS) -> "CumulativeCurve":
        errors = np.asarray(errors, dtype=np.float64)
        if errors.size == 0:
            raise ValueError("Curva cumulativa di un insieme vuoto")
        ordered = tuple(sorted(float(d) for d in thresholds))
        return cls(ordered, tuple(float(np.mean(errors <= d)) for d in ordered))

    def at(self, threshold: float) -> float:
        return dict(zip(self.thresholds, self.fraction_within))[float(threshold)]


@dataclass(frozen=True)
class EvalResult:
    mean_px: float
    median_px: float
    mean_deg: float
    curve_px: CumulativeCurve
    curve_deg: CumulativeCurve
    pupil_errors: np.ndarray = field(repr=False)
    gaze_errors: np.ndarray = field(repr=False)


def gaze_error_degrees(predicted: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Angolo (gradi) tra sguardo predetto (normalizzato) e vero: arccos del prodotto scalare"""
    p = np.asarray(predicted, dtype=np.float64)
    norm = np.linalg.norm(p, axis=1, keepdims=True)
    p = np.divide(p, norm, out=np.zeros_like(p), where=norm > 0)
    dot = np.clip((p * np.asarray(truth, dtype=np.float64)).sum(axis=1), -1.0, 1.0)
    return np.degrees(np.arccos(dot))


def score_predictions(predictions: np.ndarray, truth: np.ndarray,
                      thresholds: Sequence[float] = THRESHOLDS) -> EvalResult:
    """Errori per immagine (px e gradi) e curve cumulative"""
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape[0] == 0:
        raise ValueError("Set di test vuoto")
    if predictions.shape != truth.shape:
        raise ValueError(f"Predizioni {predictions.shape} e verità {truth.shape} incompatibili")
    pupil = np.linalg.norm(predictions[:, :2] - truth[:, :2], axis=1)
    gaze = gaze_error_degrees(predictions[:, 2:], truth[:, 2:])
    return EvalResult(
        mean_px=float(pupil.mean()),
        median_px=float(np.median(pupil)),
        mean_deg=float(gaze.mean()),
        curve_px=CumulativeCurve.from_errors(pupil, thresholds),
        curve_deg=CumulativeCurve.from_errors(gaze, thresholds),
        pupil_errors=pupil,
        gaze_errors=gaze,
    )


def eval_predictor(params: NetParams, real_test: Union[UnlabeledSet, np.ndarray], truth: np.ndarray,
                   thresholds: Sequence[float] = THRESHOLDS) -> EvalResult:
    """
    Valuta il predittore sulle immagini reali di test contro la verità tenuta dall'harness

    Raises:
        ValueError: set di test vuoto o verità incoerente
    """
    if len(real_test) == 0:
        raise ValueError("eval_predictor: set di test vuoto")
    return score_predictions(predict(params, real_test), truth, thresholds)


# --------------------------------------------------------------------------- drift

@dataclass(frozen=True)
class DriftReport:
    mean_px: float
    std_px: float
    n: int
    failures: int

    def as_tuple(self) -> Tuple[float, float]:
        return self.mean_px, self.std_px


def _refine_with(refiner: RefinerLike, pixels: np.ndarray) -> np.ndarray:
    if isinstance(refiner, NetParams):
        return refine_array(refiner, pixels)
    return np.asarray(refiner(pixels), dtype=np.float32)


def annotation_drift(refiner: RefinerLike, synthetic: Union[LabeledSet, np.ndarray],
                     min_size: int = MIN_DRIFT_SET,
                     max_failure_rate: float = MAX_ORACLE_FAILURE_RATE) -> DriftReport:
    """
    Spostamento del centro della pupilla stimato dall'oracolo tra sintetica e raffinata

    Args:
        refiner: Parametri del refiner o callable N x C x H x W -> N x C x H x W

    Raises:
        ValueError: meno di min_size immagini
        DriftAbortError: l'oracolo fallisce su più di max_failure_rate delle immagini
    """
    pixels = synthetic.pixels if isinstance(synthetic, LabeledSet) else np.asarray(synthetic, dtype=np.float32)
    n = pixels.shape[0]
    if n < min_size:
        raise ValueError(f"annotation_drift: servono almeno {min_size} immagini, ricevute {n}")
    refined = _refine_with(refiner, pixels)

    distances: List[float] = []
    failed: List[int] = []
    for i in range(n):
        try:
            sx, sy = pupil_center_oracle(pixels[i])
            rx, ry = pupil_center_oracle(refined[i])
        except PupilNotFoundError:
            failed.append(i)
            continue
        distances.append(float(np.hypot(rx - sx, ry - sy)))

    if len(failed) > max_failure_rate * n:
        raise DriftAbortError(
            f"Oracolo fallito su {len(failed)}/{n} immagini (> {max_failure_rate:.0%}); "
            f"prime immagini: {failed[:10]}"
        )
    d = np.asarray(distances, dtype=np.float64)
    report = DriftReport(float(d.mean()), float(d.std()), n, len(failed))
    logger.info(f"[HARNESS] Drift annotazioni: {report.mean_px:.3f} ± {report.std_px:.3f} px su {n} immagini")
    return report


# --------------------------------------------------------------------------- realismo

def probe_realism(theta: NetParams, synthetic: LabeledSet, real: UnlabeledSet, arch: DiscArch,
                  cfg: TrainConfig, steps: int, seed: int = 0) -> float:
    """
    Media di P_fake sulle raffinate secondo un discriminatore sonda addestrato da zero

    Metà di ogni set addestra la sonda, l'altra metà viene valutata.
    """
    n_syn, n_real = len(synthetic) // 2, len(real) // 2
    if n_syn < 1 or n_real < 1:
        raise ValueError("probe_realism: servono almeno 2 immagini sintetiche e 2 reali")
    refined = refine_array(theta, synthetic.pixels)
    probe = build_discriminator(arch, seed=seed)
    fakes = ImageStream(refined[:n_syn], seed=[seed, 1], name="probe-fake")
    reals = ImageStream(real.pixels[:n_real], seed=[seed, 2], name="probe-real")
    half = cfg.batch_size // 2
    for step in range(1, steps + 1):
        discriminator_sgd_step(probe, fakes.next(half), reals.next(half), cfg, step)
    value = mean_fake_probability(discriminate_array(probe, refined[n_syn:]))
    logger.info(f"[HARNESS] Realismo (sonda, {steps} step): P_fake medio sulle raffinate = {value:.4f}")
    return value


# --------------------------------------------------------------------------- confronto a valle

@dataclass
class ComparisonResult:
    results: Dict[str, EvalResult]

    @property
    def gain_px(self) -> float:
        """Riduzione dell'errore medio (px) del predittore su raffinate rispetto a sintetiche"""
        return self.results["synthetic"].mean_px - self.results["refined"].mean_px

    def rows(self) -> List[List]:
        out = []
        for name, result in self.results.items():
            for unit, curve in (("px", result.curve_px), ("deg", result.curve_deg)):
                for d, frac in zip(curve.thresholds, curve.fraction_within):
                    out.append([name, unit, d, frac])
        return out


def write_curves(path: Path, comparison: ComparisonResult) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["training_set", "unit", "threshold", "fraction_within"])
    writer.writerows(comparison.rows())
    return atomic_write_text(Path(path), buffer.getvalue())


def downstream_comparison(
    theta: NetParams,
    synthetic: LabeledSet,
    real_test: UnlabeledSet,
    truth: np.ndarray,
    cfg: PredictorConfig,
    seed: Optional[int] = None,
    include_multiplied: bool = False,
    out_path: Optional[Path] = None,
) -> ComparisonResult:
    """
    Addestra un predittore su sintetiche e uno sulle loro raffinate, valuta entrambi sul reale

    Le raffinate ereditano le annotazioni delle sintetiche. Con include_multiplied
    aggiunge le varianti addestrate su data_multiplier volte le immagini (devono essere
    già presenti in synthetic: si usano le prime n / data_multiplier per il caso base).
    """
    seed = cfg.seed if seed is None else seed
    n_base = len(synthetic) // cfg.data_multiplier if include_multiplied else len(synthetic)
    if n_base < 1:
        raise ValueError("downstream_comparison: set sintetico vuoto")
    refined_all = synthetic.with_pixels(refine_array(theta, synthetic.pixels))

    variants = {
        "synthetic": synthetic.subset(range(n_base)),
        "refined": refined_all.subset(range(n_base)),
    }
    if include_multiplied and cfg.data_multiplier > 1:
        variants[f"synthetic_x{cfg.data_multiplier}"] = synthetic
        variants[f"refined_x{cfg.data_multiplier}"] = refined_all

    results: Dict[str, EvalResult] = {}
    for name, dataset in variants.items():
        params, _ = train_predictor(dataset, cfg, seed=seed)
        results[name] = eval_predictor(params, real_test, truth)
        logger.info(
            f"[HARNESS] Predittore su {name}: errore medio {results[name].mean_px:.3f} px, "
            f"{results[name].mean_deg:.2f} gradi"
        )
    comparison = ComparisonResult(results)
    if out_path is not None:
        write_curves(out_path, comparison)
    return comparison

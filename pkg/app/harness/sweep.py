"""
Sweep di calibrazione di lambda e ablazioni (senza storia, avversario globale)
"""
import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.models import RunConfig
from app.paths import atomic_write_text, ensure_dir
from app.harness.experiment import DataSplits, RunMetrics, evaluate_run, run_training

logger = logging.getLogger(__name__)

SWEEP_FILE_NAME = "sweep_lambda.csv"
ABLATION_FILE_NAME = "ablation.csv"
ABLATION_SUMMARY_FILE_NAME = "ablation_summary.csv"

ABLATIONS = ("default", "no-history", "global-adv")


def _write_csv(path: Path, header: List[str], rows: List[list]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return atomic_write_text(Path(path), buffer.getvalue())


def _with_overrides(config: RunConfig, name: str, train: Optional[Dict] = None,
                    discriminator: Optional[Dict] = None) -> RunConfig:
    update: Dict = {"name": name}
    if train:
        update["train"] = config.train.model_copy(update=train)
    if discriminator:
        update["discriminator"] = config.discriminator.model_copy(update=discriminator)
    return config.model_copy(update=update)


def sweep_lambda(config: RunConfig, splits: DataSplits, values: Sequence[float],
                 out_dir: Path) -> List[Dict[str, float]]:
    """
    Addestra una run per ogni lambda e misura drift e guadagno a valle

    Scrive out_dir/sweep_lambda.csv con (lambda, drift_px, downstream_gain_px).
    """
    out_dir = ensure_dir(out_dir)
    results = []
    for value in values:
        run_cfg = _with_overrides(config, f"{config.name}-lambda-{value:g}", train={"lambda_reg": float(value)})
        run_dir = ensure_dir(out_dir / f"lambda_{value:g}")
        logger.info(f"[HARNESS] Sweep lambda={value:g}")
        state = run_training(run_cfg, splits, run_dir)
        metrics = evaluate_run(state.theta, run_cfg, splits, curves_path=run_dir / "curves.csv")
        results.append({
            "lambda": float(value),
            "drift_px": metrics.drift_mean_px,
            "downstream_gain_px": metrics.downstream_gain_px,
        })
    _write_csv(out_dir / SWEEP_FILE_NAME, ["lambda", "drift_px", "downstream_gain_px"],
               [[r["lambda"], r["drift_px"], r["downstream_gain_px"]] for r in results])
    logger.info(f"✅ [HARNESS] Sweep completato: {out_dir / SWEEP_FILE_NAME}")
    return results


def ablation_config(config: RunConfig, variant: str, seed: int) -> RunConfig:
    """Config di una variante di ablazione per un seed"""
    if variant not in ABLATIONS:
        raise ValueError(f"Variante di ablazione sconosciuta: {variant} (attese: {', '.join(ABLATIONS)})")
    train = {"seed": seed}
    discriminator = None
    if variant == "no-history":
        train["use_history"] = False
    elif variant == "global-adv":
        discriminator = {"global_pool": True}
    return _with_overrides(config, f"{config.name}-{variant}-s{seed}", train=train, discriminator=discriminator)


@dataclass(frozen=True)
class AblationRow:
    variant: str
    seed: int
    metrics: RunMetrics


def run_ablation(config: RunConfig, splits: DataSplits, seeds: Sequence[int], out_dir: Path,
                 variants: Sequence[str] = ABLATIONS) -> List[AblationRow]:
    """
    Addestra e valuta ogni variante per ogni seed

    Scrive ablation.csv (una riga per run) e ablation_summary.csv (mediane per variante).
    """
    out_dir = ensure_dir(out_dir)
    rows: List[AblationRow] = []
    for variant in variants:
        for seed in seeds:
            run_cfg = ablation_config(config, variant, seed)
            run_dir = ensure_dir(out_dir / f"{variant}_s{seed}")
            logger.info(f"[HARNESS] Ablazione {variant}, seed {seed}")
            state = run_training(run_cfg, splits, run_dir)
            rows.append(AblationRow(variant, seed, evaluate_run(state.theta, run_cfg, splits)))

    _write_csv(out_dir / ABLATION_FILE_NAME,
               ["variant", "seed", "drift_px", "error_refined_px", "error_synthetic_px"],
               [[r.variant, r.seed, r.metrics.drift_mean_px, r.metrics.error_refined_px,
                 r.metrics.error_synthetic_px] for r in rows])
    summary = []
    for variant in variants:
        chosen = [r.metrics for r in rows if r.variant == variant]
        summary.append([
            variant,
            float(np.median([m.drift_mean_px for m in chosen])),
            float(np.median([m.error_refined_px for m in chosen])),
        ])
    _write_csv(out_dir / ABLATION_SUMMARY_FILE_NAME, ["variant", "median_drift_px", "median_error_refined_px"], summary)
    logger.info(f"✅ [HARNESS] Ablazione completata: {out_dir / ABLATION_FILE_NAME}")
    return rows

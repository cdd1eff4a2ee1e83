"""
Interfaccia a riga di comando

Sottocomandi: gen-data, pretrain, train, refine, eval, drift, grad-check,
export-study, sweep-lambda, ablation.

Codici di uscita: 0 successo, 1 errore di validazione/configurazione/IO,
2 abort numerico (loss non finita o gradienti fuori tolleranza).
"""
import argparse
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app.autograd import read_tns, write_tns
from app.config import DEFAULT_PRESET
from app.errors import CLIValidationError, NumericalAbortError
from app.file_lock import run_lock
from app.logging_config import run_log
from app.models import PRESETS, RunConfig
from app.nets import load_checkpoint, refine_array
from app.paths import atomic_write_json, clear_failed, get_ckpt_dir, get_data_dir, get_run_dir, mark_failed
from app.run_config import load_run_config, save_config_echo
from app.trainer import init_state, latest_checkpoint, prepare, resume, save_state, train
from app.harness.evaluation import annotation_drift
from app.harness.experiment import DataSplits, evaluate_run, generate_data, load_splits, realism_probe
from app.harness.gradients import GRADCHECK_FILE_NAME, run_grad_checks, write_grad_checks
from app.harness.study_export import export_confusion
from app.harness.sweep import run_ablation, sweep_lambda

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

METRICS_FILE_NAME = "metrics.json"
DRIFT_FILE_NAME = "drift.json"
STUDY_FILE_NAME = "confusion.csv"


class ArgumentParser(argparse.ArgumentParser):
    """argparse che solleva CLIValidationError invece di terminare il processo"""

    def error(self, message: str):
        raise CLIValidationError(f"{self.prog}: {message}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"lista di numeri non valida: {text!r}") from e


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"lista di interi non valida: {text!r}") from e


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="File JSON di configurazione (sovrascrive il preset)")
    p.add_argument("--preset", default=DEFAULT_PRESET, choices=PRESETS)
    p.add_argument("--name", help="Nome della run (directory runs/<name>)")
    p.add_argument("--seed", type=int, help="Seed del training")
    p.add_argument("--steps", type=int, help="T: numero di step esterni")
    p.add_argument("--lambda", dest="lambda_reg", type=float, help="Peso della self-regularization")
    p.add_argument("--no-history", action="store_true", help="Ablazione: discriminatore senza buffer di storia")
    p.add_argument("--global-adv", action="store_true", help="Ablazione: loss avversaria globale")
    p.add_argument("--data", type=Path, help="Directory dei dati generati da gen-data (default: in memoria)")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="refinery", description="Addestramento S+U di un refiner con loss avversaria")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Genera gli split sintetici e 'reali' del mondo giocattolo")
    _add_config_args(p)
    p.add_argument("--out", type=Path, help="Directory di uscita (default: data/<name>)")

    p = sub.add_parser("pretrain", help="Pre-training di refiner e discriminatore, checkpoint allo step 0")
    _add_config_args(p)

    p = sub.add_parser("train", help="Loop avversariale completo")
    _add_config_args(p)
    p.add_argument("--resume", action="store_true", help="Riprende dall'ultimo checkpoint della run")
    p.add_argument("--allow-config-change", action="store_true")

    p = sub.add_parser("refine", help="Raffina uno stack TNS1 con un refiner salvato")
    p.add_argument("--ckpt", type=Path, required=True, help="Checkpoint del refiner, di uno step o directory ckpt/")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="Confronto a valle sintetico vs raffinato sul reale di test")
    _add_config_args(p)
    p.add_argument("--probe", action="store_true", help="Misura anche il realismo con un discriminatore sonda")

    p = sub.add_parser("drift", help="Drift delle annotazioni sulle sintetiche di test")
    _add_config_args(p)

    p = sub.add_parser("grad-check", help="Gradienti analitici contro differenze finite")
    p.add_argument("--seeds", type=_int_list, default=list(range(20)))
    p.add_argument("--out", type=Path, help=f"CSV dei risultati (default: runs/gradcheck/{GRADCHECK_FILE_NAME})")

    p = sub.add_parser("export-study", help="Matrice di confusione e griglie per lo studio percettivo")
    _add_config_args(p)
    p.add_argument("--matrix", type=_int_list, required=True, help="Conteggi rr,rs,sr,ss")
    p.add_argument("--images", type=int, default=16, help="Immagini per griglia (0: nessuna griglia)")

    p = sub.add_parser("sweep-lambda", help="Calibrazione di lambda")
    _add_config_args(p)
    p.add_argument("--values", type=_float_list, required=True, help="Es. 0.1,0.5,2.0")

    p = sub.add_parser("ablation", help="Default vs senza storia vs avversario globale, per seed")
    _add_config_args(p)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])

    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """preset -> --config -> flag (vince la CLI)"""
    overrides: Dict[str, Any] = {
        "name": args.name,
        "train.seed": args.seed,
        "train.steps": args.steps,
        "train.lambda_reg": args.lambda_reg,
    }
    if args.no_history:
        overrides["train.use_history"] = False
    if args.global_adv:
        overrides["discriminator.global_pool"] = True
    return load_run_config(args.preset, args.config, overrides)


def _splits(args: argparse.Namespace, config: RunConfig) -> DataSplits:
    if args.data is not None:
        logger.info(f"📁 [CLI] Dati da {args.data}")
        return load_splits(args.data)
    return generate_data(config)


@contextmanager
def _run_dir(config: RunConfig):
    """
    Directory della run con lock esclusivo e sentinella FAILED in caso d'errore

    L'echo della config (config.json) non viene scritto qui: lo scrivono solo i
    comandi che creano o continuano la run, dopo le proprie validazioni.
    """
    run_dir = get_run_dir(config.name)
    with run_lock(run_dir), run_log(run_dir):
        clear_failed(run_dir)
        try:
            yield run_dir
        except BaseException as e:
            mark_failed(run_dir, f"{type(e).__name__}: {e}")
            raise


def _load_refiner(path: Path):
    path = Path(path)
    if (path / "LATEST").exists():
        path = latest_checkpoint(path)
    if (path / "refiner").is_dir():
        path = path / "refiner"
    return load_checkpoint(path)


# --------------------------------------------------------------------------- sottocomandi

def cmd_gen_data(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out = args.out or get_data_dir() / config.name
    generate_data(config, out)
    logger.info(f"✅ [CLI] Dati salvati in {out}")
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    splits = _splits(args, config)
    with _run_dir(config) as run_dir:
        save_config_echo(config, run_dir)
        state = prepare(init_state(config, splits.synthetic.pixels, splits.real.pixels), run_dir)
        save_state(state, get_ckpt_dir(run_dir))
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    splits = _splits(args, config)
    with _run_dir(config) as run_dir:
        ckpt_dir = get_ckpt_dir(run_dir)
        if args.resume:
            # config.json resta quello del checkpoint finché resume non accetta la nuova config
            state = resume(ckpt_dir, config, splits.synthetic.pixels, splits.real.pixels,
                           allow_config_change=args.allow_config_change)
            save_config_echo(config, run_dir)
        else:
            save_config_echo(config, run_dir)
            state = prepare(init_state(config, splits.synthetic.pixels, splits.real.pixels), run_dir)
        train(state, run_dir)
    return EXIT_OK


def cmd_refine(args: argparse.Namespace) -> int:
    theta = _load_refiner(args.ckpt)
    images = read_tns(args.input)
    if images.ndim != 4:
        raise ValueError(f"Stack N x C x H x W atteso, ricevuto shape {images.shape}")
    refined = refine_array(theta, images)
    write_tns(args.out, refined)
    logger.info(f"✅ [CLI] {images.shape[0]} immagini raffinate: {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    splits = _splits(args, config)
    with _run_dir(config) as run_dir:
        theta = _load_refiner(get_ckpt_dir(run_dir))
        metrics = evaluate_run(theta, config, splits, curves_path=run_dir / "curves.csv")
        report = {
            "drift_mean_px": metrics.drift_mean_px,
            "drift_std_px": metrics.drift_std_px,
            "error_synthetic_px": metrics.error_synthetic_px,
            "error_refined_px": metrics.error_refined_px,
            "downstream_gain_px": metrics.downstream_gain_px,
        }
        if args.probe:
            report["mean_pfake_refined"] = realism_probe(theta, config, splits)
        atomic_write_json(run_dir / METRICS_FILE_NAME, report)
    logger.info(f"✅ [CLI] Guadagno a valle: {metrics.downstream_gain_px:+.3f} px")
    return EXIT_OK


def cmd_drift(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    splits = _splits(args, config)
    with _run_dir(config) as run_dir:
        theta = _load_refiner(get_ckpt_dir(run_dir))
        report = annotation_drift(theta, splits.synthetic_test)
        atomic_write_json(run_dir / DRIFT_FILE_NAME, {
            "mean_px": report.mean_px,
            "std_px": report.std_px,
            "n": report.n,
            "failures": report.failures,
            "fraction_of_width": report.mean_px / config.world.width,
        })
    return EXIT_OK


def cmd_grad_check(args: argparse.Namespace) -> int:
    rows = run_grad_checks(args.seeds)
    out = args.out or get_run_dir("gradcheck") / GRADCHECK_FILE_NAME
    write_grad_checks(out, rows)
    failed = [r for r in rows if not r.passed]
    if failed:
        worst = max(failed, key=lambda r: r.max_rel_error)
        logger.error(
            f"❌ [CLI] grad-check: {len(failed)}/{len(rows)} fuori tolleranza "
            f"(peggiore {worst.graph}, seed {worst.seed}: {worst.max_rel_error:.3e})"
        )
        return EXIT_NUMERICAL
    logger.info(f"✅ [CLI] grad-check superato su {len(rows)} casi: {out}")
    return EXIT_OK


def cmd_export_study(args: argparse.Namespace) -> int:
    if len(args.matrix) != 4:
        raise CLIValidationError(f"--matrix richiede 4 conteggi, ricevuti {len(args.matrix)}")
    matrix = np.asarray(args.matrix, dtype=np.int64).reshape(2, 2)
    config = resolve_config(args)
    with _run_dir(config) as run_dir:
        real_images = refined_images = None
        if args.images > 0:
            splits = _splits(args, config)
            theta = _load_refiner(get_ckpt_dir(run_dir))
            real_images = splits.real_test.pixels[:args.images]
            refined_images = refine_array(theta, splits.synthetic_test.pixels[:args.images])
        accuracy = export_confusion(matrix, run_dir / STUDY_FILE_NAME, real_images, refined_images)
    logger.info(f"✅ [CLI] Accuratezza di classificazione: {accuracy:.1%}")
    return EXIT_OK


def cmd_sweep_lambda(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    splits = _splits(args, config)
    with _run_dir(config) as run_dir:
        save_config_echo(config, run_dir)
        sweep_lambda(config, splits, args.values, run_dir)
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    splits = _splits(args, config)
    with _run_dir(config) as run_dir:
        save_config_echo(config, run_dir)
        run_ablation(config, splits, args.seeds, run_dir)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "drift": cmd_drift,
    "grad-check": cmd_grad_check,
    "export-study": cmd_export_study,
    "sweep-lambda": cmd_sweep_lambda,
    "ablation": cmd_ablation,
}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Esegue un sottocomando e restituisce il codice di uscita

    Non chiama mai sys.exit: ci pensa main.py.
    """
    try:
        args = build_parser().parse_args(list(argv) if argv is not None else None)
    except CLIValidationError as e:
        logger.error(f"❌ [CLI] {e}")
        return EXIT_INVALID
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    logger.debug(f"[CLI] Comando {args.command}: {vars(args)}")
    try:
        return COMMANDS[args.command](args)
    except NumericalAbortError as e:
        step = f" allo step {e.step}" if e.step is not None else ""
        logger.error(f"❌ [CLI] Abort numerico{step}: {e}", exc_info=True)
        return EXIT_NUMERICAL
    except (ValueError, OSError, RuntimeError) as e:
        logger.error(f"❌ [CLI] {args.command} fallito: {e}", exc_info=True)
        return EXIT_INVALID

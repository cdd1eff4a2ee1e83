"""
Layout su disco di run e dataset, più scritture atomiche

    runs/<name>/config.json    echo della configurazione
    runs/<name>/log.csv        una riga per step loggato
    runs/<name>/ckpt/          checkpoint step_NNNNNN + LATEST
    runs/<name>/refined/       snapshot di immagini raffinate
    runs/<name>/FAILED         presente solo se l'ultimo comando è fallito
    data/<name>/<split>/       dataset generati (gen-data)
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Optional

logger = logging.getLogger(__name__)

FAILED_SENTINEL = "FAILED"

# Risolta al primo uso da REFINERY_BASE_DIR; i test la sostituiscono con tmp_path
_BASE_DIR: Optional[Path] = None


def get_base_dir() -> Path:
    global _BASE_DIR
    if _BASE_DIR is None:
        from app.config import BASE_DIR
        _BASE_DIR = Path(BASE_DIR).resolve()
        logger.debug(f"📁 Base dir: {_BASE_DIR}")
    return _BASE_DIR


def ensure_dir(path: Path) -> Path:
    """
    Garantisce che `path` (relativo alla base dir se non assoluto) esista come directory scrivibile

    Raises:
        OSError: creazione impossibile, path occupato da un file o permessi insufficienti
    """
    path = Path(path)
    if not path.is_absolute():
        path = get_base_dir() / path
    path = path.resolve()

    try:
        path.mkdir(parents=True, exist_ok=True)
    except FileExistsError as e:
        raise OSError(f"Il path esiste ma non è una directory: {path}") from e
    except OSError as e:
        logger.error(f"❌ [FS] mkdir fallito per {path}: {e}")
        raise

    if not os.access(path, os.W_OK):
        raise OSError(f"Directory senza permesso di scrittura: {path}")
    return path


def _subdir(setting: str) -> Path:
    from app import config
    return ensure_dir(get_base_dir() / getattr(config, setting).strip("/"))


def get_runs_dir() -> Path:
    return _subdir("RUNS_SUBDIR")


def get_data_dir() -> Path:
    return _subdir("DATA_SUBDIR")


def get_run_dir(name: str) -> Path:
    """Directory della run `name` sotto runs/ (creata se manca)"""
    if not name or "/" in name or name in (".", ".."):
        raise ValueError(f"Nome run non valido: {name!r}")
    return ensure_dir(get_runs_dir() / name)


def get_ckpt_dir(run_dir: Path) -> Path:
    return ensure_dir(Path(run_dir) / "ckpt")


def get_refined_dir(run_dir: Path) -> Path:
    return ensure_dir(Path(run_dir) / "refined")


def atomic_write_bytes(file_path: Path, payload: bytes) -> Path:
    """
    Scrive `payload` su un file temporaneo accanto alla destinazione, fsync, poi rename

    Un lettore concorrente vede il file vecchio o quello nuovo, mai uno troncato.
    I path relativi sono relativi alla directory corrente.
    """
    file_path = Path(file_path).absolute()
    ensure_dir(file_path.parent)
    tmp = file_path.with_name(f".{file_path.name}.tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        tmp.replace(file_path)
    except OSError:
        tmp.unlink(missing_ok=True)
        raise
    return file_path


def atomic_write_text(file_path: Path, text: str) -> Path:
    return atomic_write_bytes(file_path, text.encode("utf-8"))


def atomic_write_json(file_path: Path, data: Any) -> Path:
    return atomic_write_text(file_path, json.dumps(data, indent=2, ensure_ascii=False) + "\n")


def read_json(file_path: Path) -> Any:
    with open(file_path, "r", encoding="utf-8") as f:
        return json.load(f)


def mark_failed(run_dir: Path, message: str) -> Path:
    """Scrive la sentinella FAILED col messaggio d'errore; un errore di scrittura viene solo loggato"""
    sentinel = Path(run_dir) / FAILED_SENTINEL
    try:
        atomic_write_text(sentinel, message.rstrip() + "\n")
        logger.warning(f"⚠️ [RUN] Marcata come fallita: {run_dir}")
    except OSError as e:
        logger.error(f"❌ [RUN] Sentinella FAILED non scritta in {run_dir}: {e}")
    return sentinel


def clear_failed(run_dir: Path) -> None:
    (Path(run_dir) / FAILED_SENTINEL).unlink(missing_ok=True)

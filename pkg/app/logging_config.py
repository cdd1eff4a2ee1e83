"""
Configurazione del logging: stdout, file opzionale di processo e log per singola run
"""
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional, Union

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
RUN_LOG_FILE_NAME = "run.log"

# Librerie terze troppo verbose a livello DEBUG
QUIET_LIBRARIES = ("PIL",)


def _resolve_level(level: Union[int, str]) -> int:
    if isinstance(level, int):
        return level
    resolved = logging.getLevelName(str(level).upper())
    return resolved if isinstance(resolved, int) else logging.INFO


def _file_handler(path: Path) -> logging.FileHandler:
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT, DATE_FORMAT))
    return handler


def setup_logging(level: Union[int, str] = logging.INFO, log_file: Optional[Path] = None) -> None:
    """
    Configura il sistema di logging del processo

    Args:
        level: Livello, intero o nome ("DEBUG", "INFO", ...); nomi sconosciuti -> INFO
        log_file: File opzionale in aggiunta a stdout
    """
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if log_file:
        handlers.append(_file_handler(Path(log_file)))

    logging.basicConfig(
        level=_resolve_level(level),
        format=LOG_FORMAT,
        datefmt=DATE_FORMAT,
        handlers=handlers,
        force=True,
    )
    for name in QUIET_LIBRARIES:
        logging.getLogger(name).setLevel(logging.WARNING)

    logging.debug("Logging configurato")


@contextmanager
def run_log(run_dir: Path) -> Iterator[Path]:
    """
    Duplica i log in <run_dir>/run.log per la durata del blocco (in append tra esecuzioni)

    Yields:
        Path del file di log della run
    """
    path = Path(run_dir) / RUN_LOG_FILE_NAME
    handler = _file_handler(path)
    root = logging.getLogger()
    root.addHandler(handler)
    try:
        yield path
    finally:
        root.removeHandler(handler)
        handler.close()

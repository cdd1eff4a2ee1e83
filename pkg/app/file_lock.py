"""
Lock esclusivo su una run directory (fcntl.flock, solo POSIX)

Due comandi sulla stessa run (es. train e eval in parallelo) si serializzano;
dopo il timeout il secondo fallisce invece di attendere all'infinito.
"""
import fcntl
import logging
import os
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

from app.config import RUN_LOCK_TIMEOUT

logger = logging.getLogger(__name__)

LOCK_FILE_NAME = ".run.lock"
POLL_INTERVAL = 0.05


def _try_flock(fd: int) -> bool:
    try:
        fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except BlockingIOError:
        return False
    return True


@contextmanager
def run_lock(run_dir: Path, timeout: float = RUN_LOCK_TIMEOUT) -> Iterator[Path]:
    """
    Acquisisce il lock di `run_dir` per la durata del blocco

    Yields:
        Path del file di lock (contiene il PID del proprietario)

    Raises:
        TimeoutError: lock tenuto da altri oltre `timeout` secondi
    """
    lock_path = Path(run_dir) / LOCK_FILE_NAME
    lock_path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(lock_path, os.O_CREAT | os.O_RDWR)
    try:
        deadline = time.monotonic() + timeout
        while not _try_flock(fd):
            if time.monotonic() >= deadline:
                raise TimeoutError(f"Run {run_dir} bloccata da un altro processo (attesa {timeout}s)")
            time.sleep(POLL_INTERVAL)

        os.ftruncate(fd, 0)
        os.write(fd, f"{os.getpid()}\n".encode())
        logger.debug(f"🔒 [LOCK] {run_dir} (pid {os.getpid()})")
        try:
            yield lock_path
        finally:
            fcntl.flock(fd, fcntl.LOCK_UN)
            logger.debug(f"🔓 [LOCK] {run_dir}")
    finally:
        os.close(fd)

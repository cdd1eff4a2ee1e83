import sys

from app.config import LOG_FILE, LOG_LEVEL
from app.logging_config import setup_logging

setup_logging(LOG_LEVEL, LOG_FILE)

from app.cli import run_cli  # noqa: E402


if __name__ == "__main__":
    sys.exit(run_cli(sys.argv[1:]))

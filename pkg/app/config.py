import os
from dotenv import load_dotenv

load_dotenv()

# Root directory del progetto (default: directory corrente)
# NOTA: Non importare paths qui per evitare importazioni circolari
# paths.py userà questa variabile d'ambiente direttamente
BASE_DIR = os.getenv("REFINERY_BASE_DIR", ".")

# Sottodirectory standard per run e dataset
RUNS_SUBDIR = os.getenv("REFINERY_RUNS_SUBDIR", "runs")
DATA_SUBDIR = os.getenv("REFINERY_DATA_SUBDIR", "data")

# Logging
LOG_LEVEL = os.getenv("REFINERY_LOG_LEVEL", "INFO").upper()
LOG_FILE = os.getenv("REFINERY_LOG_FILE") or None

# Preset di default se la CLI non ne specifica uno
DEFAULT_PRESET = os.getenv("REFINERY_PRESET", "desk").lower()

# Timeout (secondi) per il lock sulla run directory
RUN_LOCK_TIMEOUT = float(os.getenv("REFINERY_RUN_LOCK_TIMEOUT", "3.0"))

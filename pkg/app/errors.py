"""
Eccezioni dell'applicazione

Tutte derivano da tipi built-in (ValueError, RuntimeError, OSError, ...)
così il codice chiamante può continuare a catturare le eccezioni standard.
"""
from typing import Optional


class ShapeMismatchError(ValueError):
    """Shape incompatibili in un'operazione tensoriale"""


class GradientError(RuntimeError):
    """Uso scorretto del tape o gradienti mancanti"""


class NumericalAbortError(RuntimeError):
    """Loss non finita: il training viene interrotto"""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class TensorFormatError(ValueError):
    """File TNS1 non valido (magic, rank, payload troncato)"""


class CheckpointError(OSError):
    """Checkpoint corrotto, incompleto o di versione diversa"""


class ConfigMismatchError(ValueError):
    """Resume con configurazione diversa da quella salvata"""


class ReplayBufferError(RuntimeError):
    """Uso scorretto del buffer di storia"""


class FirewallError(PermissionError):
    """Richiesta di annotazioni per immagini reali (non etichettate)"""


class PupilNotFoundError(ValueError):
    """L'oracolo non trova pixel sotto soglia"""


class DriftAbortError(RuntimeError):
    """Troppi fallimenti dell'oracolo durante la misura del drift"""


class CLIValidationError(ValueError):
    """Argomenti CLI non validi o sconosciuti"""

"""
Formato file tensoriale TNS1

Layout: magic b"TNS1", u32 LE rank, rank x u32 LE extents, payload f32 LE row-major.
Usato per checkpoint, buffer di storia e dataset.
"""
import logging
import struct
from pathlib import Path

import numpy as np

from app.errors import TensorFormatError
from app.paths import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"TNS1"
_U32 = struct.Struct("<I")


def encode_tns(array: np.ndarray) -> bytes:
    """Serializza un array in bytes TNS1"""
    array = np.asarray(array)
    if any(extent <= 0 for extent in array.shape):
        raise TensorFormatError(f"TNS1 richiede extents positivi, shape={array.shape}")
    header = MAGIC + _U32.pack(array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    return header + payload


def decode_tns(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    """
    Deserializza bytes TNS1

    Raises:
        TensorFormatError: magic errato, header troncato, payload di lunghezza errata
    """
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise TensorFormatError(f"Magic TNS1 non valido in {source}")
    (rank,) = _U32.unpack_from(blob, 4)
    header_len = 8 + 4 * rank
    if len(blob) < header_len:
        raise TensorFormatError(f"Header TNS1 troncato in {source} (rank={rank})")
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    if any(extent == 0 for extent in shape):
        raise TensorFormatError(f"Extent nullo in {source}: shape={shape}")
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = header_len + 4 * count
    if len(blob) != expected:
        raise TensorFormatError(
            f"Payload TNS1 di lunghezza errata in {source}: {len(blob)} bytes, attesi {expected} (shape={shape})"
        )
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=header_len)
    return data.reshape(shape).astype(np.float32, copy=True)


def write_tns(path: Path, array: np.ndarray) -> Path:
    """
    Scrive un array su file TNS1 (temp file + rename)

    Returns:
        Path assoluto del file scritto

    Raises:
        TensorFormatError: array con un extent nullo
    """
    path = atomic_write_bytes(path, encode_tns(array))
    logger.debug(f"💾 TNS1 scritto: {path} shape={np.shape(array)}")
    return path


def read_tns(path: Path) -> np.ndarray:
    """Legge un file TNS1 (float32)"""
    path = Path(path)
    with open(path, "rb") as f:
        blob = f.read()
    return decode_tns(blob, source=str(path))

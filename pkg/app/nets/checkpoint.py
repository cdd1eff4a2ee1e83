"""
Salvataggio e caricamento dei parametri di rete

Un checkpoint è una directory:
    manifest.json   nomi ordinati, shape, descrittore dell'arch, stato RNG opzionale
    NNN_<nome>.tns  un file TNS1 per tensore

La scrittura è atomica: directory temporanea + rename.
"""
import json
import logging
import os
import shutil
from pathlib import Path
from typing import Any, Dict, Optional, Tuple


from app.autograd import read_tns, write_tns
from app.errors import CheckpointError, TensorFormatError
from app.nets.params import NetParams
from app.paths import atomic_write_json

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


def _tensor_file(index: int, name: str) -> str:
    return f"{index:03d}_{name}.tns"


def replace_dir(tmp_dir: Path, final_dir: Path) -> None:
    """Sostituisce final_dir con tmp_dir (rename atomico della directory nuova)"""
    if final_dir.exists():
        old = final_dir.with_name(f".{final_dir.name}.old-{os.getpid()}")
        final_dir.rename(old)
        tmp_dir.rename(final_dir)
        shutil.rmtree(old, ignore_errors=True)
    else:
        tmp_dir.rename(final_dir)


def save_checkpoint(params: NetParams, path: Path, rng_state: Optional[Dict[str, Any]] = None) -> Path:
    """
    Salva i parametri in una directory checkpoint

    Args:
        params: Parametri da salvare
        path: Directory di destinazione (sovrascritta atomicamente)
        rng_state: Stato del generatore (bit_generator.state) da includere nel manifest
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_dir = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    if tmp_dir.exists():
        shutil.rmtree(tmp_dir)
    tmp_dir.mkdir(parents=True)

    entries = []
    for index, (name, tensor) in enumerate(params.items()):
        file_name = _tensor_file(index, name)
        write_tns(tmp_dir / file_name, tensor.data)
        entries.append({"name": name, "shape": list(tensor.shape), "file": file_name})

    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": params.kind,
        "arch": params.arch,
        "tensors": entries,
        "rng_state": rng_state,
    }
    atomic_write_json(tmp_dir / MANIFEST, manifest)
    replace_dir(tmp_dir, path)
    logger.debug(f"💾 [CKPT] Parametri salvati: {path} ({params})")
    return path


def load_checkpoint_with_manifest(path: Path) -> Tuple[NetParams, Dict[str, Any]]:
    """
    Carica parametri e manifest; nessun parametro parziale in caso di errore

    Raises:
        CheckpointError: manifest mancante/corrotto, versione diversa, tensore corrotto
    """
    path = Path(path)
    manifest_path = path / MANIFEST
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise CheckpointError(f"Manifest mancante: {manifest_path}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"Manifest corrotto: {manifest_path}: {e}") from e

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Versione checkpoint {version} non supportata (attesa {FORMAT_VERSION}): {path}")

    loaded = []
    try:
        for entry in manifest["tensors"]:
            data = read_tns(path / entry["file"])
            if list(data.shape) != list(entry["shape"]):
                raise CheckpointError(
                    f"Shape di {entry['name']} non coerente: file {data.shape}, manifest {entry['shape']}"
                )
            loaded.append((entry["name"], data))
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"Manifest incompleto in {path}: {e}") from e
    except (TensorFormatError, OSError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"Tensore corrotto o mancante in {path}: {e}") from e

    params = NetParams(manifest.get("kind", ""), manifest.get("arch") or {})
    try:
        for name, data in loaded:
            params.add(name, data)
    except ValueError as e:
        raise CheckpointError(f"Checkpoint non valido in {path}: {e}") from e
    return params, manifest


def load_checkpoint(path: Path) -> NetParams:
    """Carica i parametri da una directory checkpoint"""
    params, _ = load_checkpoint_with_manifest(path)
    logger.debug(f"[CKPT] Parametri caricati: {path} ({params})")
    return params



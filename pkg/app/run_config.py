"""
Caricamento della configurazione di una run

Ordine di precedenza: preset -> file JSON (--config) -> flag CLI (vince la CLI).
La configurazione risolta viene salvata (echo) nella run directory come config.json.
"""
import copy
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from pydantic import ValidationError

from app.models import RunConfig, TrainConfig, get_preset
from app.paths import atomic_write_json, read_json

logger = logging.getLogger(__name__)

CONFIG_FILE_NAME = "config.json"

# Notazione breve accettata nei file di configurazione -> campo di TrainConfig
TRAIN_KEY_ALIASES = {
    "lambda": "lambda_reg",
    "T": "steps",
    "K_g": "k_g",
    "K_d": "k_d",
    "b": "batch_size",
    "lr_R": "lr_r",
    "lr_D": "lr_d",
    "B": "buffer_capacity",
    "pretrain_R_steps": "pretrain_r_steps",
    "pretrain_D_steps": "pretrain_d_steps",
}

# Campi che non cambiano il problema di ottimizzazione: esclusi dal fingerprint
_FINGERPRINT_EXCLUDED = {
    ("name",),
    ("train", "steps"),
    ("train", "checkpoint_every"),
    ("train", "snapshot_every"),
    ("train", "log_every"),
    ("predictor",),
}


def _deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Merge ricorsivo di dizionari (update vince)"""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _train_key(key: str) -> Optional[str]:
    """Nome del campo di TrainConfig per una chiave (nome del campo o notazione breve), altrimenti None"""
    if key in TrainConfig.model_fields:
        return key
    return TRAIN_KEY_ALIASES.get(key)


def _normalize_train_section(section: Mapping[str, Any], source: Path) -> Dict[str, Any]:
    """Rinomina le notazioni brevi (T, K_g, lambda, ...) nei campi di TrainConfig"""
    normalized: Dict[str, Any] = {}
    for key, value in section.items():
        field = _train_key(key) or key
        if field in normalized:
            raise ValueError(f"Campo train.{field} specificato due volte in {source}")
        normalized[field] = value
    return normalized


def _unflatten_file_data(file_data: Mapping[str, Any], source: Path) -> Dict[str, Any]:
    """
    Porta un file di configurazione piatto nella struttura annidata di RunConfig

    Le chiavi di primo livello che non sono sezioni di RunConfig ma identificano un
    iperparametro di training ({"lambda": 0.1, "T": 200, "K_g": 2, ...}) finiscono in
    "train". Le chiavi non riconosciute restano al primo livello e vengono rifiutate
    dalla validazione.

    Raises:
        ValueError: stesso campo presente sia in forma piatta che nella sezione "train"
    """
    nested: Dict[str, Any] = {}
    flat_train: Dict[str, Any] = {}
    for key, value in file_data.items():
        if key not in RunConfig.model_fields and _train_key(key) is not None:
            flat_train[key] = value
        else:
            nested[key] = value

    train_section = nested.get("train", {})
    if not isinstance(train_section, Mapping):
        return nested
    train = _normalize_train_section(train_section, source)
    for field, value in _normalize_train_section(flat_train, source).items():
        if field in train:
            raise ValueError(f"Campo train.{field} specificato due volte in {source}")
        train[field] = value
    if train:
        nested["train"] = train
    return nested


def _dotted_to_nested(overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Converte {"train.lambda_reg": 0.1} in {"train": {"lambda_reg": 0.1}}"""
    nested: Dict[str, Any] = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        parts = dotted.split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return nested


def load_run_config(
    preset: str = "desk",
    config_file: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Risolve la configurazione di una run

    Args:
        preset: Nome del preset di partenza
        config_file: File JSON opzionale, annidato come RunConfig oppure piatto ({"lambda": 0.1, "T": 200})
        overrides: Override puntati dalla CLI (es. {"train.seed": 7})

    Returns:
        RunConfig validata

    Raises:
        ValueError: Preset sconosciuto, JSON non valido, chiave sconosciuta o validazione fallita
    """
    data = get_preset(preset).model_dump(mode="json")

    if config_file is not None:
        config_file = Path(config_file)
        try:
            file_data = read_json(config_file)
        except FileNotFoundError as e:
            raise ValueError(f"File di configurazione non trovato: {config_file}") from e
        except json.JSONDecodeError as e:
            raise ValueError(f"JSON non valido in {config_file}: {e}") from e
        if not isinstance(file_data, dict):
            raise ValueError(f"Il file di configurazione deve contenere un oggetto JSON: {config_file}")
        data = _deep_merge(data, _unflatten_file_data(file_data, config_file))
        logger.debug(f"Configurazione letta da {config_file}")

    if overrides:
        data = _deep_merge(data, _dotted_to_nested(overrides))

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ValueError(f"Configurazione non valida: {e}") from e


def save_config_echo(config: RunConfig, run_dir: Path) -> Path:
    """Salva atomicamente la configurazione risolta nella run directory"""
    path = atomic_write_json(Path(run_dir) / CONFIG_FILE_NAME, config.model_dump(mode="json"))
    logger.info(f"💾 Configurazione salvata: {path}")
    return path


def load_config_echo(run_dir: Path) -> RunConfig:
    """Rilegge il config.json di una run"""
    return RunConfig.model_validate(read_json(Path(run_dir) / CONFIG_FILE_NAME))


def _strip_excluded(data: Dict[str, Any]) -> Dict[str, Any]:
    data = copy.deepcopy(data)
    for path in _FINGERPRINT_EXCLUDED:
        node = data
        for part in path[:-1]:
            node = node.get(part, {})
        node.pop(path[-1], None)
    return data


def config_fingerprint(config: RunConfig) -> str:
    """
    SHA256 dei campi che definiscono il problema di ottimizzazione

    Esclusi: nome della run, T, cadenze di checkpoint/snapshot/log, predittore.
    """
    canonical = json.dumps(_strip_excluded(config.model_dump(mode="json")), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def config_differences(old: RunConfig, new: RunConfig) -> Dict[str, Any]:
    """Elenco dei campi (puntati) che differiscono nel fingerprint"""
    diffs: Dict[str, Any] = {}

    def walk(a: Any, b: Any, prefix: str) -> None:
        if isinstance(a, dict) and isinstance(b, dict):
            for key in sorted(set(a) | set(b)):
                walk(a.get(key), b.get(key), f"{prefix}.{key}" if prefix else key)
        elif a != b:
            diffs[prefix] = {"saved": a, "requested": b}

    walk(_strip_excluded(old.model_dump(mode="json")), _strip_excluded(new.model_dump(mode="json")), "")
    return diffs

"""
Контрольные точки: текстовый манифест + бинарный блок

<name>.manifest.json - имена, формы и смещения тензоров, эхо конфигурации, SHA-256 блока
<name>.params        - тензоры подряд в порядке манифеста, little-endian float32
"""
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
from cryptography.hazmat.backends import default_backend
from cryptography.hazmat.primitives import hashes

from .exceptions import ConfigError, CorruptCheckpointError

logger = logging.getLogger(__name__)

BLOB_DTYPE = np.dtype("<f4")
FORMAT = "gesme-checkpoint"
VERSION = 1


def sha256_hex(data: bytes) -> str:
    """SHA-256 от байтов в шестнадцатеричном виде"""
    digest = hashes.Hash(hashes.SHA256(), backend=default_backend())
    digest.update(data)
    return digest.finalize().hex()


def manifest_path(prefix) -> Path:
    prefix = Path(prefix)
    return prefix.with_name(prefix.name + ".manifest.json")


def blob_path(prefix) -> Path:
    prefix = Path(prefix)
    return prefix.with_name(prefix.name + ".params")


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def pack_arrays(arrays: Iterable[Tuple[str, np.ndarray]]) -> Tuple[List[Dict[str, Any]], bytes]:
    """
    Упаковка тензоров в один блок

    :return: (записи манифеста name/shape/offset/count, байты блока)
    """
    entries, chunks, offset = [], [], 0
    for name, array in arrays:
        array = np.ascontiguousarray(np.asarray(array), dtype=BLOB_DTYPE)
        entries.append({"name": name, "shape": list(array.shape), "offset": offset, "count": int(array.size)})
        chunks.append(array.tobytes(order="C"))
        offset += int(array.size)
    return entries, b"".join(chunks)


def unpack_arrays(entries: List[Dict[str, Any]], data: bytes, path: str = "") -> Dict[str, np.ndarray]:
    """
    Разбор блока по записям манифеста; формы проверяются до чтения данных

    :raises CorruptCheckpointError: Длина блока не совпадает с манифестом
    """
    expected = 0
    for entry in entries:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if count != entry["count"] or entry["offset"] != expected:
            raise CorruptCheckpointError(f"Запись {entry['name']} манифеста несогласована", path)
        expected += count
    if len(data) != expected * BLOB_DTYPE.itemsize:
        raise CorruptCheckpointError(
            f"Длина блока {len(data)} байт, по манифесту {expected * BLOB_DTYPE.itemsize}", path)

    flat = np.frombuffer(data, dtype=BLOB_DTYPE)
    return {entry["name"]: flat[entry["offset"]:entry["offset"] + entry["count"]].reshape(entry["shape"]).copy()
            for entry in entries}


def write_bundle(prefix, arrays: Iterable[Tuple[str, np.ndarray]], header: Dict[str, Any]) -> Dict[str, Any]:
    """
    Записывает пару манифест + блок

    :param prefix: Путь без расширений
    :param arrays: Пары (имя, массив) в порядке записи
    :param header: Дополнительные поля манифеста
    :return: Манифест
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    entries, data = pack_arrays(arrays)
    manifest = dict(header)
    manifest.update({"dtype": "float32-le", "tensors": entries, "digest": sha256_hex(data)})

    _atomic_write(blob_path(prefix), data)
    _atomic_write(manifest_path(prefix),
                  json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False).encode("utf-8"))
    logger.debug(f"Записано {len(entries)} тензоров в {blob_path(prefix)}")
    return manifest


def read_bundle(prefix) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Читает пару манифест + блок и проверяет SHA-256

    :raises CorruptCheckpointError: Нет файлов, манифест не разбирается, длина или хэш не совпадают
    """
    prefix = Path(prefix)
    mpath, bpath = manifest_path(prefix), blob_path(prefix)
    if not mpath.exists() or not bpath.exists():
        raise CorruptCheckpointError("Нет манифеста или блока параметров", str(prefix))
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        entries = manifest["tensors"]
        expected_digest = manifest["digest"]
    except (ValueError, KeyError) as e:
        raise CorruptCheckpointError(f"Манифест не разбирается: {e}", str(mpath))

    data = bpath.read_bytes()
    arrays = unpack_arrays(entries, data, str(bpath))
    if sha256_hex(data) != expected_digest:
        raise CorruptCheckpointError("SHA-256 блока не совпадает с манифестом", str(bpath))
    return manifest, arrays


@dataclass
class Checkpoint:
    """Параметры модели по именам и эхо конфигурации"""
    params: Dict[str, np.ndarray]
    config: Dict[str, Any]
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def names(self) -> List[str]:
        return list(self.params)


def save(model, prefix, extra: Optional[Dict[str, Any]] = None) -> Checkpoint:
    """
    Сохраняет параметры модели

    :param model: GesmeNet
    :param prefix: Путь без расширений (например runs/x/gesme)
    :param extra: Метаданные обучения (эпоха, лучшая валидационная ошибка)
    """
    state = model.state_dict()
    header = {"format": FORMAT, "version": VERSION, "config": model.echo(), "extra": extra or {}}
    write_bundle(prefix, state.items(), header)
    model.logger.info(f"Контрольная точка сохранена: {manifest_path(prefix)}")
    return Checkpoint(state, header["config"], header["extra"])


def load_checkpoint(prefix) -> Checkpoint:
    manifest, arrays = read_bundle(prefix)
    if manifest.get("format") != FORMAT:
        raise CorruptCheckpointError(f"Неизвестный формат '{manifest.get('format')}'", str(manifest_path(prefix)))
    return Checkpoint(arrays, manifest.get("config", {}), manifest.get("extra", {}))


def load(prefix, model=None):
    """
    Загружает контрольную точку

    :param prefix: Путь без расширений
    :param model: Модель для загрузки; если не передана, строится по эху конфигурации
    :return: Модель с загруженными параметрами
    :raises ConfigError: Эхо конфигурации не совпадает с конфигурацией модели
    """
    from .data.samples import FeatureRoster
    from .model import GesmeNet
    from .config import model_config_from_dict

    checkpoint = load_checkpoint(prefix)
    if model is None:
        echo = checkpoint.config
        model = GesmeNet(model_config_from_dict(echo["model"]), FeatureRoster.from_dict(echo["roster"]),
                         variant=echo.get("variant", "gesme"))
    elif _normalize(model.echo()) != _normalize(checkpoint.config):
        raise ConfigError(f"Конфигурация контрольной точки {manifest_path(prefix)} не совпадает с моделью", "checkpoint")
    model.load_state_dict(checkpoint.params)
    return model


def _normalize(value):
    return json.loads(json.dumps(value, sort_keys=True))
